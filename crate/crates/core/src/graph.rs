//! Reverse-mode automatic differentiation on an append-only tape.
//!
//! Recording an operation evaluates it immediately and pushes a node whose
//! inputs all have smaller ids, so the tape is already in topological order.
//! [`Graph::backward`] walks it once in reverse, accumulating exact
//! vector-Jacobian products. Gradients of max-style operations follow the
//! lowest-index argmax subgradient, matching the forward tie-breaking rule.

use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::Tensor;

/// Handle to a node on the tape.
pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Conv1x1,
    Conv3x3 { stride: usize },
    SoftmaxPerMap,
    MaxNormalizePerMap,
    Hadamard,
    GlobalAvgPool,
    Linear,
    MaxOverSlices,
    Sigmoid,
    Relu,
    WeightedBce { label: f64, pos_weight: f64 },
    SumAll,
    Concat { axis: usize },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    value: Tensor,
    grad: Option<Tensor>,
}

/// Computation tape. One graph records one forward pass; call
/// [`Graph::backward`] on a scalar node to populate gradients.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, value: Tensor) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(Node {
            op,
            inputs,
            value,
            grad: None,
        });
        id
    }

    fn node(&self, id: NodeId) -> Result<&Node> {
        self.nodes
            .get(id)
            .ok_or_else(|| Error::Graph(format!("unknown node id {id}")))
    }

    fn check_input(&self, id: NodeId) -> Result<()> {
        self.node(id).map(|_| ())
    }

    /// The forward value of a node.
    pub fn value(&self, id: NodeId) -> Result<&Tensor> {
        self.node(id).map(|n| &n.value)
    }

    /// The gradient of the last `backward` loss with respect to this node.
    /// `None` if the node does not feed into that loss.
    pub fn grad(&self, id: NodeId) -> Result<Option<&Tensor>> {
        self.node(id).map(|n| n.grad.as_ref())
    }

    /// Record an input tensor (parameter or data) on the tape.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, vec![], value)
    }

    pub fn conv1x1(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        for id in [input, weight, bias] {
            self.check_input(id)?;
        }
        let value = ops::conv1x1(
            &self.nodes[input].value,
            &self.nodes[weight].value,
            &self.nodes[bias].value,
        )?;
        Ok(self.push(Op::Conv1x1, vec![input, weight, bias], value))
    }

    pub fn conv3x3(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        stride: usize,
    ) -> Result<NodeId> {
        for id in [input, weight, bias] {
            self.check_input(id)?;
        }
        let value = ops::conv3x3(
            &self.nodes[input].value,
            &self.nodes[weight].value,
            &self.nodes[bias].value,
            stride,
        )?;
        Ok(self.push(Op::Conv3x3 { stride }, vec![input, weight, bias], value))
    }

    pub fn softmax_per_map(&mut self, input: NodeId) -> Result<NodeId> {
        self.check_input(input)?;
        let value = ops::softmax_per_map(&self.nodes[input].value)?;
        Ok(self.push(Op::SoftmaxPerMap, vec![input], value))
    }

    pub fn max_normalize_per_map(&mut self, input: NodeId) -> Result<NodeId> {
        self.check_input(input)?;
        let value = ops::max_normalize_per_map(&self.nodes[input].value)?;
        Ok(self.push(Op::MaxNormalizePerMap, vec![input], value))
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_input(a)?;
        self.check_input(b)?;
        let value = ops::hadamard(&self.nodes[a].value, &self.nodes[b].value)?;
        Ok(self.push(Op::Hadamard, vec![a, b], value))
    }

    pub fn global_avg_pool(&mut self, input: NodeId) -> Result<NodeId> {
        self.check_input(input)?;
        let value = ops::global_avg_pool(&self.nodes[input].value)?;
        Ok(self.push(Op::GlobalAvgPool, vec![input], value))
    }

    pub fn linear(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        for id in [input, weight, bias] {
            self.check_input(id)?;
        }
        let value = ops::linear(
            &self.nodes[input].value,
            &self.nodes[weight].value,
            &self.nodes[bias].value,
        )?;
        Ok(self.push(Op::Linear, vec![input, weight, bias], value))
    }

    pub fn max_over_slices(&mut self, input: NodeId) -> Result<NodeId> {
        self.check_input(input)?;
        let value = ops::max_over_slices(&self.nodes[input].value)?;
        Ok(self.push(Op::MaxOverSlices, vec![input], value))
    }

    pub fn sigmoid(&mut self, input: NodeId) -> Result<NodeId> {
        self.check_input(input)?;
        let value = ops::sigmoid(&self.nodes[input].value)?;
        Ok(self.push(Op::Sigmoid, vec![input], value))
    }

    pub fn relu(&mut self, input: NodeId) -> Result<NodeId> {
        self.check_input(input)?;
        let value = ops::relu(&self.nodes[input].value)?;
        Ok(self.push(Op::Relu, vec![input], value))
    }

    /// Weighted binary cross-entropy of a single-element probability node.
    pub fn weighted_bce(&mut self, prob: NodeId, label: f64, pos_weight: f64) -> Result<NodeId> {
        self.check_input(prob)?;
        let p = self.nodes[prob].value.item()?;
        let value = Tensor::scalar(ops::weighted_bce(p, label, pos_weight)?);
        Ok(self.push(Op::WeightedBce { label, pos_weight }, vec![prob], value))
    }

    pub fn sum_all(&mut self, input: NodeId) -> Result<NodeId> {
        self.check_input(input)?;
        let value = ops::sum_all(&self.nodes[input].value);
        Ok(self.push(Op::SumAll, vec![input], value))
    }

    pub fn concat(&mut self, inputs: &[NodeId], axis: usize) -> Result<NodeId> {
        for &id in inputs {
            self.check_input(id)?;
        }
        let parts: Vec<&Tensor> = inputs.iter().map(|&id| &self.nodes[id].value).collect();
        let value = ops::concat(&parts, axis)?;
        Ok(self.push(Op::Concat { axis }, inputs.to_vec(), value))
    }

    /// Populate `grad` for every node that feeds into `loss`.
    ///
    /// `loss` must hold a single element. Gradients from a previous backward
    /// pass are discarded first.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        self.check_input(loss)?;
        if self.nodes[loss].value.len() != 1 {
            return Err(Error::Graph(format!(
                "backward target must be a scalar, got shape {:?}",
                self.nodes[loss].value.shape()
            )));
        }
        // The tape is topologically ordered by construction; verify anyway so
        // a corrupted graph fails loudly instead of producing wrong gradients.
        for (id, node) in self.nodes.iter().enumerate() {
            if let Some(&bad) = node.inputs.iter().find(|&&i| i >= id) {
                return Err(Error::Graph(format!(
                    "node {id} depends on later node {bad}; tape is not topologically ordered"
                )));
            }
        }

        let mut reachable = vec![false; self.nodes.len()];
        reachable[loss] = true;
        for id in (0..=loss).rev() {
            if reachable[id] {
                for &i in &self.nodes[id].inputs {
                    reachable[i] = true;
                }
            }
        }

        let mut grads: Vec<Option<Tensor>> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(id, n)| {
                reachable[id].then(|| Tensor::zeros(n.value.shape().to_vec()).expect("valid shape"))
            })
            .collect();
        grads[loss].as_mut().expect("loss is reachable").data_mut()[0] = 1.0;

        for id in (0..=loss).rev() {
            if !reachable[id] {
                continue;
            }
            let g = grads[id].clone().expect("reachable nodes have gradients");
            let contributions = self.vjp(id, &g)?;
            for (input, contrib) in contributions {
                let slot = grads[input]
                    .as_mut()
                    .expect("inputs of reachable nodes are reachable");
                debug_assert_eq!(slot.shape(), contrib.shape());
                for (dst, src) in slot.data_mut().iter_mut().zip(contrib.data()) {
                    *dst += src;
                }
            }
        }

        for (node, grad) in self.nodes.iter_mut().zip(grads) {
            node.grad = grad;
        }
        Ok(())
    }

    /// Gradient contributions of node `id` to each of its inputs, given the
    /// upstream gradient `g` of the node's output.
    fn vjp(&self, id: NodeId, g: &Tensor) -> Result<Vec<(NodeId, Tensor)>> {
        let node = &self.nodes[id];
        let input_value = |k: usize| &self.nodes[node.inputs[k]].value;
        let out = match &node.op {
            Op::Leaf => vec![],
            Op::Conv1x1 => {
                let (input, weight) = (input_value(0), input_value(1));
                let (b, c_in) = (input.shape()[0], input.shape()[1]);
                let c_out = weight.shape()[0];
                let hw = input.shape()[2] * input.shape()[3];
                let mut d_in = vec![0.0; input.len()];
                let mut d_w = vec![0.0; weight.len()];
                let mut d_b = vec![0.0; c_out];
                for bb in 0..b {
                    for o in 0..c_out {
                        let g_base = (bb * c_out + o) * hw;
                        for k in 0..c_in {
                            let in_base = (bb * c_in + k) * hw;
                            let wv = weight.at2(o, k);
                            let mut wsum = 0.0;
                            for p in 0..hw {
                                let gv = g.data()[g_base + p];
                                d_in[in_base + p] += wv * gv;
                                wsum += gv * input.data()[in_base + p];
                            }
                            d_w[o * c_in + k] += wsum;
                        }
                        d_b[o] += g.data()[g_base..g_base + hw].iter().sum::<f64>();
                    }
                }
                vec![
                    (node.inputs[0], tensor_like(input, d_in)),
                    (node.inputs[1], tensor_like(weight, d_w)),
                    (node.inputs[2], tensor_like(input_value(2), d_b)),
                ]
            }
            Op::Conv3x3 { stride } => {
                let (input, weight) = (input_value(0), input_value(1));
                let (b, c_in) = (input.shape()[0], input.shape()[1]);
                let (h, w) = (input.shape()[2], input.shape()[3]);
                let c_out = weight.shape()[0];
                let (h_out, w_out) = (node.value.shape()[2], node.value.shape()[3]);
                let mut d_in = vec![0.0; input.len()];
                let mut d_w = vec![0.0; weight.len()];
                let mut d_b = vec![0.0; c_out];
                for bb in 0..b {
                    for o in 0..c_out {
                        for y in 0..h_out {
                            for x in 0..w_out {
                                let gv = g.at4(bb, o, y, x);
                                if gv == 0.0 {
                                    continue;
                                }
                                d_b[o] += gv;
                                for k in 0..c_in {
                                    for dy in 0..3usize {
                                        let sy = (y * stride + dy) as isize - 1;
                                        if sy < 0 || sy >= h as isize {
                                            continue;
                                        }
                                        for dx in 0..3usize {
                                            let sx = (x * stride + dx) as isize - 1;
                                            if sx < 0 || sx >= w as isize {
                                                continue;
                                            }
                                            let in_idx = input.idx4(bb, k, sy as usize, sx as usize);
                                            let w_idx = weight.idx4(o, k, dy, dx);
                                            d_in[in_idx] += weight.data()[w_idx] * gv;
                                            d_w[w_idx] += input.data()[in_idx] * gv;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                vec![
                    (node.inputs[0], tensor_like(input, d_in)),
                    (node.inputs[1], tensor_like(weight, d_w)),
                    (node.inputs[2], tensor_like(input_value(2), d_b)),
                ]
            }
            Op::SoftmaxPerMap => {
                // d_x = y * (g - <g, y>) per map.
                let y = &node.value;
                let hw = y.shape()[2] * y.shape()[3];
                let mut d_in = vec![0.0; y.len()];
                for (map_idx, (ym, gm)) in y
                    .data()
                    .chunks_exact(hw)
                    .zip(g.data().chunks_exact(hw))
                    .enumerate()
                {
                    let dot: f64 = ym.iter().zip(gm).map(|(a, b)| a * b).sum();
                    let base = map_idx * hw;
                    for p in 0..hw {
                        d_in[base + p] = ym[p] * (gm[p] - dot);
                    }
                }
                vec![(node.inputs[0], tensor_like(y, d_in))]
            }
            Op::MaxNormalizePerMap => {
                // y = x / M with M the per-map maximum at the lowest-index
                // argmax a: d_x = g / M, then d_x[a] -= <g, x> / M^2.
                let x = input_value(0);
                let hw = x.shape()[2] * x.shape()[3];
                let mut d_in = vec![0.0; x.len()];
                for (map_idx, (xm, gm)) in x
                    .data()
                    .chunks_exact(hw)
                    .zip(g.data().chunks_exact(hw))
                    .enumerate()
                {
                    let mut arg = 0usize;
                    let mut m = xm[0];
                    for (p, &v) in xm.iter().enumerate().skip(1) {
                        if v > m {
                            m = v;
                            arg = p;
                        }
                    }
                    let dot: f64 = gm.iter().zip(xm).map(|(a, b)| a * b).sum();
                    let base = map_idx * hw;
                    for p in 0..hw {
                        d_in[base + p] = gm[p] / m;
                    }
                    d_in[base + arg] -= dot / (m * m);
                }
                vec![(node.inputs[0], tensor_like(x, d_in))]
            }
            Op::Hadamard => {
                let (a, b) = (input_value(0), input_value(1));
                let d_a: Vec<f64> = g.data().iter().zip(b.data()).map(|(g, b)| g * b).collect();
                let d_b: Vec<f64> = g.data().iter().zip(a.data()).map(|(g, a)| g * a).collect();
                vec![
                    (node.inputs[0], tensor_like(a, d_a)),
                    (node.inputs[1], tensor_like(b, d_b)),
                ]
            }
            Op::GlobalAvgPool => {
                let x = input_value(0);
                let hw = x.shape()[2] * x.shape()[3];
                let scale = 1.0 / hw as f64;
                let mut d_in = vec![0.0; x.len()];
                for (map_idx, gv) in g.data().iter().enumerate() {
                    let base = map_idx * hw;
                    d_in[base..base + hw].fill(gv * scale);
                }
                vec![(node.inputs[0], tensor_like(x, d_in))]
            }
            Op::Linear => {
                let (input, weight) = (input_value(0), input_value(1));
                let (b, n) = (input.shape()[0], input.shape()[1]);
                let m = weight.shape()[0];
                let mut d_in = vec![0.0; input.len()];
                let mut d_w = vec![0.0; weight.len()];
                let mut d_b = vec![0.0; m];
                for bb in 0..b {
                    for mm in 0..m {
                        let gv = g.at2(bb, mm);
                        d_b[mm] += gv;
                        for nn in 0..n {
                            d_in[bb * n + nn] += gv * weight.at2(mm, nn);
                            d_w[mm * n + nn] += gv * input.at2(bb, nn);
                        }
                    }
                }
                vec![
                    (node.inputs[0], tensor_like(input, d_in)),
                    (node.inputs[1], tensor_like(weight, d_w)),
                    (node.inputs[2], tensor_like(input_value(2), d_b)),
                ]
            }
            Op::MaxOverSlices => {
                let x = input_value(0);
                let mut d_in = vec![0.0; x.len()];
                let f = x.shape()[1];
                for (j, &row) in ops::argmax_over_slices(x).iter().enumerate() {
                    d_in[row * f + j] = g.data()[j];
                }
                vec![(node.inputs[0], tensor_like(x, d_in))]
            }
            Op::Sigmoid => {
                let y = &node.value;
                let d_in: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(g, y)| g * y * (1.0 - y))
                    .collect();
                vec![(node.inputs[0], tensor_like(y, d_in))]
            }
            Op::Relu => {
                let x = input_value(0);
                let d_in: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                    .collect();
                vec![(node.inputs[0], tensor_like(x, d_in))]
            }
            Op::WeightedBce { label, pos_weight } => {
                // Flat (zero) gradient once the clamp is active.
                let p = input_value(0).item()?;
                let dp = if (ops::BCE_EPS..=1.0 - ops::BCE_EPS).contains(&p) {
                    -pos_weight * label / p + (1.0 - label) / (1.0 - p)
                } else {
                    0.0
                };
                vec![(
                    node.inputs[0],
                    tensor_like(input_value(0), vec![g.data()[0] * dp]),
                )]
            }
            Op::SumAll => {
                let x = input_value(0);
                vec![(
                    node.inputs[0],
                    tensor_like(x, vec![g.data()[0]; x.len()]),
                )]
            }
            Op::Concat { axis } => {
                let parts: Vec<&Tensor> = node.inputs.iter().map(|&i| &self.nodes[i].value).collect();
                let outer: usize = parts[0].shape()[..*axis].iter().product();
                let inner: usize = parts[0].shape()[*axis + 1..].iter().product();
                let mut outs: Vec<Vec<f64>> = parts.iter().map(|t| vec![0.0; t.len()]).collect();
                let mut cursor = 0usize;
                for o in 0..outer {
                    for (t_idx, t) in parts.iter().enumerate() {
                        let e = t.shape()[*axis];
                        let start = o * e * inner;
                        outs[t_idx][start..start + e * inner]
                            .copy_from_slice(&g.data()[cursor..cursor + e * inner]);
                        cursor += e * inner;
                    }
                }
                node.inputs
                    .iter()
                    .zip(parts)
                    .zip(outs)
                    .map(|((&i, t), d)| (i, tensor_like(t, d)))
                    .collect()
            }
        };
        Ok(out)
    }
}

fn tensor_like(reference: &Tensor, data: Vec<f64>) -> Tensor {
    Tensor::from_vec(reference.shape().to_vec(), data).expect("shape matches data")
}
