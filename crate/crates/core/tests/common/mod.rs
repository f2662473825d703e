//! Shared machinery for the integration suites: seeded tensors, central
//! finite-difference gradient checking, and independently written brute-force
//! oracles for every metric. The oracles deliberately avoid the library's own
//! helper functions so agreement means two implementations, not one.

// Each integration target compiles this module separately and uses its own
// subset of the helpers.
#![allow(dead_code)]

use locvalid::metrics::BinaryMask;
use locvalid::saliency::SaliencyMap;
use locvalid::{Graph, NodeId, Tensor};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::from_vec(shape.to_vec(), data).expect("valid shape")
}

/// Uniform values with magnitude at least `margin`, so an `eps`-sized probe
/// cannot cross a ReLU kink.
pub fn rand_tensor_off_zero(shape: &[usize], margin: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(margin..1.0);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::from_vec(shape.to_vec(), data).expect("valid shape")
}

/// Central finite-difference check of a recorded computation.
///
/// `build` places the given leaves on a fresh tape and returns a scalar loss
/// node. The function backpropagates once, then re-evaluates the forward pass
/// with every input coordinate displaced by `+-eps`, and returns the largest
/// relative error between the tape gradient and the finite difference.
pub fn max_grad_error<F>(inputs: &[Tensor], eps: f64, build: F) -> f64
where
    F: Fn(&mut Graph, &[NodeId]) -> NodeId,
{
    let eval = |tensors: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = tensors.iter().map(|t| g.leaf(t.clone())).collect();
        let loss = build(&mut g, &ids);
        g.value(loss).expect("loss exists").item().expect("scalar loss")
    };

    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let loss = build(&mut g, &ids);
    g.backward(loss).expect("backward succeeds");

    let mut worst = 0.0f64;
    for (i, tensor) in inputs.iter().enumerate() {
        let Some(grad) = g.grad(ids[i]).expect("valid id") else {
            continue; // leaf does not feed the loss
        };
        assert_eq!(grad.shape(), tensor.shape(), "gradient shape mirrors the leaf");
        for j in 0..tensor.len() {
            let mut probe: Vec<Tensor> = inputs.to_vec();
            probe[i].data_mut()[j] += eps;
            let up = eval(&probe);
            probe[i].data_mut()[j] -= 2.0 * eps;
            let down = eval(&probe);
            let fd = (up - down) / (2.0 * eps);
            let an = grad.data()[j];
            let scale = an.abs().max(fd.abs());
            let err = if scale < 1e-6 {
                (an - fd).abs()
            } else {
                (an - fd).abs() / scale
            };
            worst = worst.max(err);
        }
    }
    worst
}

/// Scalar loss `sum(out * weights)` with fixed random weights, so the check
/// exercises the whole Jacobian rather than its row sums.
pub fn weighted_sum(g: &mut Graph, out: NodeId, rng: &mut ChaCha8Rng) -> NodeId {
    let shape = g.value(out).expect("node exists").shape().to_vec();
    let w = g.leaf(rand_tensor(&shape, -1.0, 1.0, rng));
    let prod = g.hadamard(out, w).expect("same shape");
    g.sum_all(prod).expect("sum")
}

// ---------------------------------------------------------------------------
// Brute-force metric oracles (pixel loops, no shared code with the library).

pub struct OracleScores {
    pub la: f64,
    pub fpp: f64,
    pub pla: f64,
    pub iou: f64,
    pub dice: f64,
}

/// Pixel-count oracle for the five threshold metrics. `ann` must be
/// non-empty.
pub fn oracle_threshold_metrics(gc: &BinaryMask, ann: &BinaryMask) -> OracleScores {
    assert_eq!(gc.height(), ann.height());
    assert_eq!(gc.width(), ann.width());
    let mut overlap = 0usize;
    let mut gc_count = 0usize;
    let mut ann_count = 0usize;
    let mut total = 0usize;
    for y in 0..gc.height() {
        for x in 0..gc.width() {
            let g = gc.get(y, x);
            let a = ann.get(y, x);
            total += 1;
            if g {
                gc_count += 1;
            }
            if a {
                ann_count += 1;
            }
            if g && a {
                overlap += 1;
            }
        }
    }
    assert!(ann_count > 0, "oracle requires a non-empty annotation");
    let la = overlap as f64 / ann_count as f64;
    let fpp = (gc_count - overlap) as f64 / total as f64;
    let union = gc_count + ann_count - overlap;
    OracleScores {
        la,
        fpp,
        pla: (la - fpp).max(0.0),
        iou: overlap as f64 / union as f64,
        dice: 2.0 * overlap as f64 / (gc_count + ann_count) as f64,
    }
}

/// O(n^2) pairwise AUC: every positive-negative pair scores 1 if the positive
/// ranks higher, 1/2 on a tie.
pub fn oracle_pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0f64;
    let mut pairs = 0.0f64;
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    assert!(pairs > 0.0, "oracle requires both classes");
    wins / pairs
}

/// Random mask with roughly `p` coverage; never empty or full unless the
/// draw is degenerate by construction.
pub fn rand_mask(h: usize, w: usize, p: f64, rng: &mut ChaCha8Rng) -> BinaryMask {
    let data = (0..h * w).map(|_| rng.random_bool(p)).collect();
    BinaryMask::from_data(h, w, data).expect("valid mask")
}

/// Random mask guaranteed non-empty and not covering the full grid.
pub fn rand_mask_proper(h: usize, w: usize, p: f64, rng: &mut ChaCha8Rng) -> BinaryMask {
    loop {
        let m = rand_mask(h, w, p, rng);
        let c = m.count();
        if c > 0 && c < m.area() {
            return m;
        }
    }
}

/// Saliency map with values drawn from a small discrete set, forcing heavy
/// score ties.
pub fn rand_saliency_tied(h: usize, w: usize, rng: &mut ChaCha8Rng) -> SaliencyMap {
    let levels = [0.0, 0.25, 0.5, 0.75, 1.0];
    let data = (0..h * w)
        .map(|_| levels[rng.random_range(0..levels.len())])
        .collect();
    SaliencyMap::new(h, w, data).expect("values in range")
}
