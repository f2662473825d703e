//! Grad-Cam saliency maps and their binarisation.
//!
//! [`gradcam`] differentiates the model's pre-sigmoid output with respect to a
//! spatial layer (by default the post-attention features), weights each
//! channel by the spatial mean of its gradient, combines channels under a
//! ReLU, upsamples bilinearly to slice resolution, and rescales by the map's
//! own maximum. Using the pre-sigmoid output rather than the probability
//! changes the map only by a positive factor, which the final normalisation
//! removes, and it stays informative even where the sigmoid saturates to
//! machine precision.
//!
//! Normalisation is per slice, not per volume, so every slice's strongest
//! pixel scores 1 (an all-zero map stays zero).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::BinaryMask;
use crate::model::{SinglePlaneModel, Volume};
use crate::tensor::Tensor;

/// Per-slice grid of pixel importances in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl SaliencyMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::dim(format!(
                "saliency data length {} does not match {height}x{width}",
                data.len()
            )));
        }
        if height == 0 || width == 0 {
            return Err(Error::dim(format!(
                "saliency dimensions must be positive, got {height}x{width}"
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || !(0.0..=1.0).contains(*v)) {
            return Err(Error::Numeric(format!(
                "saliency values must be finite and within [0, 1], found {v}"
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Row/column of the strongest pixel, lowest linear index on ties.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0usize;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        (best / self.width, best % self.width)
    }

    /// Tensor of shape `[height, width]`, for the grid file format.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(vec![self.height, self.width], self.data.clone())
            .expect("saliency dims are positive")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        if t.rank() != 2 {
            return Err(Error::dim(format!(
                "saliency tensor must have rank 2, got shape {:?}",
                t.shape()
            )));
        }
        Self::new(t.shape()[0], t.shape()[1], t.data().to_vec())
    }
}

/// Binarise: a pixel is set iff its importance is strictly above `x`.
pub fn threshold_mask(s: &SaliencyMap, x: f64) -> Result<BinaryMask> {
    BinaryMask::from_data(
        s.height,
        s.width,
        s.data.iter().map(|&v| v > x).collect(),
    )
}

/// Corner-aligned bilinear upsampling of a `[h, w]` grid to `[out_h, out_w]`.
/// A single-pixel axis broadcasts its value.
pub fn bilinear_upsample(src: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    if src.rank() != 2 {
        return Err(Error::dim(format!(
            "upsample input must have rank 2, got shape {:?}",
            src.shape()
        )));
    }
    if out_h == 0 || out_w == 0 {
        return Err(Error::dim(format!(
            "upsample target must be positive, got {out_h}x{out_w}"
        )));
    }
    let (h, w) = (src.shape()[0], src.shape()[1]);
    let scale = |src_dim: usize, out_dim: usize, i: usize| -> f64 {
        if out_dim == 1 || src_dim == 1 {
            0.0
        } else {
            i as f64 * (src_dim - 1) as f64 / (out_dim - 1) as f64
        }
    };
    let mut out = Vec::with_capacity(out_h * out_w);
    for y in 0..out_h {
        let sy = scale(h, out_h, y);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = sy - y0 as f64;
        for x in 0..out_w {
            let sx = scale(w, out_w, x);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = sx - x0 as f64;
            let top = src.at2(y0, x0) * (1.0 - fx) + src.at2(y0, x1) * fx;
            let bottom = src.at2(y1, x0) * (1.0 - fx) + src.at2(y1, x1) * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    Tensor::from_vec(vec![out_h, out_w], out)
}

/// Which spatial layer Grad-Cam differentiates against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GradCamLayer {
    /// The last spatial layer: post-attention features when attention is
    /// enabled, otherwise the final convolution stage.
    Last,
    /// Output of convolution stage `i` (0-based, before attention).
    Stage(usize),
}

impl Default for GradCamLayer {
    fn default() -> Self {
        GradCamLayer::Last
    }
}

/// Grad-Cam saliency map for one slice of a volume.
pub fn gradcam(
    model: &SinglePlaneModel,
    volume: &Volume,
    target_slice: usize,
    layer: GradCamLayer,
) -> Result<SaliencyMap> {
    if target_slice >= volume.num_slices() {
        return Err(Error::Index(format!(
            "slice {target_slice} out of range for volume with {} slices",
            volume.num_slices()
        )));
    }
    let mut trace = model.trace(volume)?;
    let target = match layer {
        GradCamLayer::Last => *trace.spatial.last().expect("backbone has at least one stage"),
        GradCamLayer::Stage(i) => *trace.spatial.get(i).ok_or_else(|| {
            Error::Index(format!(
                "layer {i} out of range, model has {} spatial layers",
                trace.spatial.len()
            ))
        })?,
    };
    trace.graph.backward(trace.logit)?;
    let feat = trace.graph.value(target)?.clone();
    let grad = trace
        .graph
        .grad(target)?
        .ok_or_else(|| Error::Graph("target layer does not feed the output".to_string()))?
        .clone();
    let (c, fh, fw) = (feat.shape()[1], feat.shape()[2], feat.shape()[3]);
    let hw = (fh * fw) as f64;
    // Channel weight = spatial mean of the output gradient on that map.
    let mut raw = vec![0.0; fh * fw];
    for ch in 0..c {
        let mut weight = 0.0;
        for y in 0..fh {
            for x in 0..fw {
                weight += grad.at4(target_slice, ch, y, x);
            }
        }
        weight /= hw;
        for y in 0..fh {
            for x in 0..fw {
                raw[y * fw + x] += weight * feat.at4(target_slice, ch, y, x);
            }
        }
    }
    for v in &mut raw {
        *v = v.max(0.0);
    }
    let coarse = Tensor::from_vec(vec![fh, fw], raw)?;
    let up = bilinear_upsample(&coarse, volume.height(), volume.width())?;
    let max = up.data().iter().cloned().fold(0.0f64, f64::max);
    let data = if max > 0.0 {
        up.data().iter().map(|&v| (v / max).clamp(0.0, 1.0)).collect()
    } else {
        vec![0.0; up.len()]
    };
    SaliencyMap::new(volume.height(), volume.width(), data)
}
