//! Forward implementations of the kernel operations.
//!
//! These are plain functions on [`Tensor`] values; the computation graph in
//! [`crate::graph`] records them and supplies the matching reverse-mode
//! gradients. Shape errors name the offending axis.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Clamp bound for probabilities inside the cross-entropy loss.
pub const BCE_EPS: f64 = 1e-12;

fn expect_rank(t: &Tensor, rank: usize, what: &str) -> Result<()> {
    if t.rank() != rank {
        return Err(Error::dim(format!(
            "{what} must have rank {rank}, got shape {:?}",
            t.shape()
        )));
    }
    Ok(())
}

/// 1x1 convolution: a channel-mixing matrix multiply at every pixel.
///
/// `input` is `[b, c_in, h, w]`, `weight` is `[c_out, c_in]`, `bias` is
/// `[c_out]`; the spatial dimensions pass through unchanged.
pub fn conv1x1(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    expect_rank(input, 4, "conv1x1 input")?;
    expect_rank(weight, 2, "conv1x1 weight")?;
    expect_rank(bias, 1, "conv1x1 bias")?;
    let (b, c_in, h, w) = shape4(input);
    let (c_out, wc_in) = (weight.shape()[0], weight.shape()[1]);
    if wc_in != c_in {
        return Err(Error::dim(format!(
            "conv1x1 channel axis: input has {c_in} channels, weight expects {wc_in}"
        )));
    }
    if bias.shape()[0] != c_out {
        return Err(Error::dim(format!(
            "conv1x1 bias axis: weight produces {c_out} channels, bias has {}",
            bias.shape()[0]
        )));
    }
    let hw = h * w;
    let mut out = vec![0.0; b * c_out * hw];
    for bb in 0..b {
        for o in 0..c_out {
            let base = (bb * c_out + o) * hw;
            out[base..base + hw].fill(bias.data()[o]);
            for k in 0..c_in {
                let wv = weight.at2(o, k);
                let in_base = (bb * c_in + k) * hw;
                for p in 0..hw {
                    out[base + p] += wv * input.data()[in_base + p];
                }
            }
        }
    }
    Tensor::from_vec(vec![b, c_out, h, w], out)
}

/// 3x3 convolution with zero padding of one pixel and the given stride.
///
/// `weight` is `[c_out, c_in, 3, 3]`. Output spatial size is
/// `(dim - 1) / stride + 1`, so stride 2 halves each spatial axis.
pub fn conv3x3(input: &Tensor, weight: &Tensor, bias: &Tensor, stride: usize) -> Result<Tensor> {
    expect_rank(input, 4, "conv3x3 input")?;
    expect_rank(weight, 4, "conv3x3 weight")?;
    expect_rank(bias, 1, "conv3x3 bias")?;
    if stride == 0 {
        return Err(Error::dim("conv3x3 stride must be positive".to_string()));
    }
    let (b, c_in, h, w) = shape4(input);
    let ws = weight.shape();
    if ws[2] != 3 || ws[3] != 3 {
        return Err(Error::dim(format!(
            "conv3x3 kernel axes must be 3x3, got {}x{}",
            ws[2], ws[3]
        )));
    }
    if ws[1] != c_in {
        return Err(Error::dim(format!(
            "conv3x3 channel axis: input has {c_in} channels, weight expects {}",
            ws[1]
        )));
    }
    let c_out = ws[0];
    if bias.shape()[0] != c_out {
        return Err(Error::dim(format!(
            "conv3x3 bias axis: weight produces {c_out} channels, bias has {}",
            bias.shape()[0]
        )));
    }
    let h_out = (h - 1) / stride + 1;
    let w_out = (w - 1) / stride + 1;
    let mut out = vec![0.0; b * c_out * h_out * w_out];
    for bb in 0..b {
        for o in 0..c_out {
            for y in 0..h_out {
                for x in 0..w_out {
                    let mut acc = bias.data()[o];
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
                                acc += weight.at4(o, k, dy, dx)
                                    * input.at4(bb, k, sy as usize, sx as usize);
                            }
                        }
                    }
                    out[((bb * c_out + o) * h_out + y) * w_out + x] = acc;
                }
            }
        }
    }
    Tensor::from_vec(vec![b, c_out, h_out, w_out], out)
}

/// Softmax applied independently to every `(b, c)` feature map, so each
/// `h x w` map is positive and sums to one. Stabilised by subtracting the
/// per-map maximum before exponentiation.
pub fn softmax_per_map(input: &Tensor) -> Result<Tensor> {
    expect_rank(input, 4, "softmax input")?;
    if !input.all_finite() {
        return Err(Error::Numeric(
            "softmax input contains non-finite values".to_string(),
        ));
    }
    let hw = input.shape()[2] * input.shape()[3];
    let mut out = Vec::with_capacity(input.len());
    for map in input.data().chunks_exact(hw) {
        let m = map.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = map.iter().map(|&v| (v - m).exp()).collect();
        let sum: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| e / sum));
    }
    Tensor::from_vec(input.shape().to_vec(), out)
}

/// Divide every `(b, c)` feature map by its own maximum, so the per-map
/// maximum becomes exactly one. Requires a strictly positive maximum, which
/// holds for any softmax output.
pub fn max_normalize_per_map(input: &Tensor) -> Result<Tensor> {
    expect_rank(input, 4, "max-normalize input")?;
    let hw = input.shape()[2] * input.shape()[3];
    let mut out = Vec::with_capacity(input.len());
    for (map_idx, map) in input.data().chunks_exact(hw).enumerate() {
        let m = map.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !(m > 0.0) {
            return Err(Error::Numeric(format!(
                "max-normalize: map {map_idx} has non-positive maximum {m}"
            )));
        }
        out.extend(map.iter().map(|&v| v / m));
    }
    Tensor::from_vec(input.shape().to_vec(), out)
}

/// Element-wise product of two tensors of identical shape.
pub fn hadamard(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        let axis = a
            .shape()
            .iter()
            .zip(b.shape())
            .position(|(x, y)| x != y)
            .map(|i| format!("axis {i}"))
            .unwrap_or_else(|| "rank".to_string());
        return Err(Error::dim(format!(
            "hadamard shapes differ at {axis}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| x * y)
        .collect();
    Tensor::from_vec(a.shape().to_vec(), data)
}

/// Mean over the two spatial axes: `[b, c, h, w]` down to `[b, c]`.
pub fn global_avg_pool(input: &Tensor) -> Result<Tensor> {
    expect_rank(input, 4, "global average pool input")?;
    let (b, c, h, w) = shape4(input);
    let hw = (h * w) as f64;
    let data = input
        .data()
        .chunks_exact(h * w)
        .map(|map| map.iter().sum::<f64>() / hw)
        .collect();
    Tensor::from_vec(vec![b, c], data)
}

/// Affine map: `out[b, m] = bias[m] + sum_n weight[m, n] * input[b, n]`.
pub fn linear(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    expect_rank(input, 2, "linear input")?;
    expect_rank(weight, 2, "linear weight")?;
    expect_rank(bias, 1, "linear bias")?;
    let (b, n) = (input.shape()[0], input.shape()[1]);
    let (m, wn) = (weight.shape()[0], weight.shape()[1]);
    if wn != n {
        return Err(Error::dim(format!(
            "linear feature axis: input has {n} features, weight expects {wn}"
        )));
    }
    if bias.shape()[0] != m {
        return Err(Error::dim(format!(
            "linear bias axis: weight produces {m} features, bias has {}",
            bias.shape()[0]
        )));
    }
    let mut out = vec![0.0; b * m];
    for bb in 0..b {
        for mm in 0..m {
            let mut acc = bias.data()[mm];
            for nn in 0..n {
                acc += weight.at2(mm, nn) * input.at2(bb, nn);
            }
            out[bb * m + mm] = acc;
        }
    }
    Tensor::from_vec(vec![b, m], out)
}

/// Element-wise maximum across the slice axis: `[s, f]` down to `[1, f]`.
pub fn max_over_slices(input: &Tensor) -> Result<Tensor> {
    expect_rank(input, 2, "max-over-slices input")?;
    let (s, f) = (input.shape()[0], input.shape()[1]);
    if s == 0 {
        return Err(Error::EmptyStack("max over an empty slice stack".to_string()));
    }
    let mut out = input.data()[..f].to_vec();
    for row in 1..s {
        for j in 0..f {
            let v = input.at2(row, j);
            if v > out[j] {
                out[j] = v;
            }
        }
    }
    Tensor::from_vec(vec![1, f], out)
}

/// Per-column argmax of a `[s, f]` tensor, lowest row index on ties.
pub fn argmax_over_slices(input: &Tensor) -> Vec<usize> {
    let (s, f) = (input.shape()[0], input.shape()[1]);
    let mut arg = vec![0usize; f];
    for j in 0..f {
        let mut best = input.at2(0, j);
        for row in 1..s {
            let v = input.at2(row, j);
            if v > best {
                best = v;
                arg[j] = row;
            }
        }
    }
    arg
}

pub fn sigmoid(input: &Tensor) -> Result<Tensor> {
    let data = input.data().iter().map(|&x| sigmoid_scalar(x)).collect();
    Tensor::from_vec(input.shape().to_vec(), data)
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn relu(input: &Tensor) -> Result<Tensor> {
    let data = input.data().iter().map(|&x| x.max(0.0)).collect();
    Tensor::from_vec(input.shape().to_vec(), data)
}

/// Weighted binary cross-entropy for a single probability.
///
/// `loss = -(w_pos * y * ln p + (1 - y) * ln(1 - p))`, with `p` clamped to
/// `[1e-12, 1 - 1e-12]` so saturated sigmoids cannot produce infinities.
pub fn weighted_bce(p: f64, label: f64, pos_weight: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&label) {
        return Err(Error::Numeric(format!(
            "label must be 0 or 1, got {label}"
        )));
    }
    if pos_weight <= 0.0 {
        return Err(Error::Numeric(format!(
            "positive-class weight must be positive, got {pos_weight}"
        )));
    }
    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    Ok(-(pos_weight * label * p.ln() + (1.0 - label) * (1.0 - p).ln()))
}

/// Sum of all elements, as a `[1]` tensor.
pub fn sum_all(input: &Tensor) -> Tensor {
    Tensor::scalar(input.data().iter().sum())
}

/// Concatenate tensors along `axis`; all other axes must agree.
pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Empty("concat of zero tensors".to_string()))?;
    let rank = first.rank();
    if axis >= rank {
        return Err(Error::dim(format!(
            "concat axis {axis} out of range for rank {rank}"
        )));
    }
    for (i, t) in parts.iter().enumerate().skip(1) {
        if t.rank() != rank {
            return Err(Error::dim(format!(
                "concat part {i} has rank {}, expected {rank}",
                t.rank()
            )));
        }
        for a in 0..rank {
            if a != axis && t.shape()[a] != first.shape()[a] {
                return Err(Error::dim(format!(
                    "concat part {i} disagrees on axis {a}: {} vs {}",
                    t.shape()[a],
                    first.shape()[a]
                )));
            }
        }
    }
    let outer: usize = first.shape()[..axis].iter().product();
    let inner: usize = first.shape()[axis + 1..].iter().product();
    let total_axis: usize = parts.iter().map(|t| t.shape()[axis]).sum();
    let mut out = Vec::with_capacity(outer * total_axis * inner);
    for o in 0..outer {
        for t in parts {
            let e = t.shape()[axis];
            let start = o * e * inner;
            out.extend_from_slice(&t.data()[start..start + e * inner]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = total_axis;
    Tensor::from_vec(shape, out)
}

#[inline]
fn shape4(t: &Tensor) -> (usize, usize, usize, usize) {
    let s = t.shape();
    (s[0], s[1], s[2], s[3])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn conv1x1_identity_weight_passes_input_through() {
        let input = Tensor::from_vec(vec![1, 2, 2, 2], (0..8).map(|i| i as f64).collect()).unwrap();
        let weight = Tensor::from_vec(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let bias = Tensor::zeros(vec![2]).unwrap();
        let out = conv1x1(&input, &weight, &bias).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn conv1x1_hand_sum() {
        let input = Tensor::filled(vec![1, 2, 1, 1], 1.0).unwrap();
        let weight = Tensor::from_vec(vec![1, 2], vec![1.0, 1.0]).unwrap();
        let bias = Tensor::from_vec(vec![1], vec![0.5]).unwrap();
        let out = conv1x1(&input, &weight, &bias).unwrap();
        assert_eq!(out.data(), &[2.5]);
    }

    #[test]
    fn conv1x1_channel_mismatch_names_axis() {
        let input = Tensor::zeros(vec![1, 3, 2, 2]).unwrap();
        let weight = Tensor::zeros(vec![2, 2]).unwrap();
        let bias = Tensor::zeros(vec![2]).unwrap();
        let err = conv1x1(&input, &weight, &bias).unwrap_err();
        assert!(err.to_string().contains("channel axis"), "{err}");
    }

    #[test]
    fn softmax_constant_map_is_uniform() {
        let input = Tensor::filled(vec![1, 1, 2, 3], 4.2).unwrap();
        let out = softmax_per_map(&input).unwrap();
        for &v in out.data() {
            assert_abs_diff_eq!(v, 1.0 / 6.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn softmax_ln2_map() {
        let ln2 = 2f64.ln();
        let input = Tensor::from_vec(vec![1, 1, 2, 2], vec![0.0, ln2, 0.0, 0.0]).unwrap();
        let out = softmax_per_map(&input).unwrap();
        let expected = [0.2, 0.4, 0.2, 0.2];
        for (v, e) in out.data().iter().zip(expected) {
            assert_abs_diff_eq!(*v, e, epsilon = 1e-15);
        }
    }

    #[test]
    fn softmax_rejects_non_finite() {
        let input = Tensor::from_vec(vec![1, 1, 1, 2], vec![0.0, f64::NAN]).unwrap();
        assert!(matches!(
            softmax_per_map(&input).unwrap_err(),
            Error::Numeric(_)
        ));
    }

    #[test]
    fn max_normalize_divides_by_map_maximum() {
        let input = Tensor::from_vec(vec![1, 1, 2, 2], vec![0.2, 0.4, 0.2, 0.2]).unwrap();
        let out = max_normalize_per_map(&input).unwrap();
        assert_eq!(out.data(), &[0.5, 1.0, 0.5, 0.5]);
    }

    #[test]
    fn max_normalize_uniform_map_becomes_ones() {
        let input = Tensor::filled(vec![2, 3, 2, 2], 0.25).unwrap();
        let out = max_normalize_per_map(&input).unwrap();
        assert!(out.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn max_normalize_rejects_non_positive_maximum() {
        let input = Tensor::filled(vec![1, 1, 2, 2], -1.0).unwrap();
        assert!(matches!(
            max_normalize_per_map(&input).unwrap_err(),
            Error::Numeric(_)
        ));
    }

    #[test]
    fn hadamard_hand_product() {
        let a = Tensor::from_vec(vec![2], vec![2.0, 3.0]).unwrap();
        let b = Tensor::from_vec(vec![2], vec![4.0, 0.5]).unwrap();
        assert_eq!(hadamard(&a, &b).unwrap().data(), &[8.0, 1.5]);
    }

    #[test]
    fn gap_hand_mean() {
        let input = Tensor::from_vec(vec![1, 1, 2, 2], vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        let out = global_avg_pool(&input).unwrap();
        assert_eq!(out.shape(), &[1, 1]);
        assert_eq!(out.data(), &[4.0]);
    }

    #[test]
    fn linear_hand_value() {
        let input = Tensor::from_vec(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let weight = Tensor::from_vec(vec![1, 2], vec![3.0, 4.0]).unwrap();
        let bias = Tensor::from_vec(vec![1], vec![1.0]).unwrap();
        assert_eq!(linear(&input, &weight, &bias).unwrap().data(), &[12.0]);
    }

    #[test]
    fn linear_identity() {
        let input = Tensor::from_vec(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let weight = Tensor::from_vec(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let bias = Tensor::zeros(vec![2]).unwrap();
        assert_eq!(linear(&input, &weight, &bias).unwrap(), input);
    }

    #[test]
    fn max_over_slices_hand_value() {
        let input = Tensor::from_vec(vec![2, 2], vec![1.0, 5.0, 3.0, 2.0]).unwrap();
        let out = max_over_slices(&input).unwrap();
        assert_eq!(out.shape(), &[1, 2]);
        assert_eq!(out.data(), &[3.0, 5.0]);
    }

    #[test]
    fn max_over_single_slice_is_identity() {
        let input = Tensor::from_vec(vec![1, 3], vec![0.5, -1.0, 2.0]).unwrap();
        assert_eq!(max_over_slices(&input).unwrap().data(), input.data());
    }

    #[test]
    fn sigmoid_at_zero_is_half() {
        assert_eq!(sigmoid_scalar(0.0), 0.5);
    }

    #[test]
    fn weighted_bce_hand_values() {
        let ln2 = 2f64.ln();
        assert_abs_diff_eq!(weighted_bce(0.5, 1.0, 1.0).unwrap(), ln2, epsilon = 1e-15);
        assert_abs_diff_eq!(
            weighted_bce(0.5, 1.0, 2.0).unwrap(),
            2.0 * ln2,
            epsilon = 1e-15
        );
    }

    #[test]
    fn weighted_bce_clamps_saturated_probabilities() {
        let loss = weighted_bce(1.0, 0.0, 1.0).unwrap();
        assert!(loss.is_finite());
        assert_abs_diff_eq!(loss, -(BCE_EPS.ln()), epsilon = 1e-3);
    }

    #[test]
    fn concat_along_slice_axis() {
        let a = Tensor::from_vec(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::from_vec(vec![2, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        let out = concat(&[&a, &b], 0).unwrap();
        assert_eq!(out.shape(), &[3, 2]);
        assert_eq!(out.data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn concat_along_feature_axis() {
        let a = Tensor::from_vec(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::from_vec(vec![1, 1], vec![9.0]).unwrap();
        let out = concat(&[&a, &b], 1).unwrap();
        assert_eq!(out.shape(), &[1, 3]);
        assert_eq!(out.data(), &[1.0, 2.0, 9.0]);
    }

    #[test]
    fn concat_shape_disagreement_names_axis() {
        let a = Tensor::zeros(vec![1, 2]).unwrap();
        let b = Tensor::zeros(vec![1, 3]).unwrap();
        let err = concat(&[&a, &b], 0).unwrap_err();
        assert!(err.to_string().contains("axis 1"), "{err}");
    }

    #[test]
    fn conv3x3_stride_two_halves_spatial_dims() {
        let input = Tensor::filled(vec![1, 1, 8, 8], 1.0).unwrap();
        let weight = Tensor::zeros(vec![2, 1, 3, 3]).unwrap();
        let bias = Tensor::from_vec(vec![2], vec![0.5, -0.5]).unwrap();
        let out = conv3x3(&input, &weight, &bias, 2).unwrap();
        assert_eq!(out.shape(), &[1, 2, 4, 4]);
        assert_eq!(out.at4(0, 0, 0, 0), 0.5);
        assert_eq!(out.at4(0, 1, 3, 3), -0.5);
    }

    #[test]
    fn conv3x3_center_tap_is_identity() {
        let mut w = vec![0.0; 9];
        w[4] = 1.0; // center of the 3x3 kernel
        let weight = Tensor::from_vec(vec![1, 1, 3, 3], w).unwrap();
        let bias = Tensor::zeros(vec![1]).unwrap();
        let input =
            Tensor::from_vec(vec![1, 1, 3, 3], (0..9).map(|i| i as f64).collect()).unwrap();
        let out = conv3x3(&input, &weight, &bias, 1).unwrap();
        assert_eq!(out, input);
    }
}
