//! Per-plane backbone: stride-2 3x3 convolution stages with ReLU, plus an
//! optional spatial attention block over the final stage.
//!
//! The architecture is config-driven so the same code serves the toy scale
//! used in tests and a paper-scale channel layout; shapes are validated, not
//! assumed.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::attention::{AttentionBlock, AttentionRecord};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::tensor::Tensor;

/// Architecture of one backbone and its head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    /// Output channels of each convolution stage.
    pub channels: Vec<usize>,
    /// Spatial downsampling factor per stage.
    pub stride: usize,
    /// Whether the spatial attention block follows the last stage.
    pub attention: bool,
    /// Width of the per-slice feature vector after the first fully
    /// connected layer.
    pub feature_width: usize,
}

impl BackboneConfig {
    /// Small configuration for tests and synthetic runs. The narrow feature
    /// vector matters: a wide head memorises small noisy datasets before the
    /// convolution stages learn anything transferable.
    pub fn toy() -> Self {
        Self {
            channels: vec![8, 16, 32],
            stride: 2,
            attention: true,
            feature_width: 64,
        }
    }

    /// Channel layout at the published scale; with 128x128 inputs the final
    /// spatial size is 8x8.
    pub fn paper_scale() -> Self {
        Self {
            channels: vec![64, 128, 256, 512],
            stride: 2,
            attention: true,
            feature_width: 1000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() {
            return Err(Error::dim("backbone needs at least one stage".to_string()));
        }
        if self.channels.iter().any(|&c| c == 0) {
            return Err(Error::dim("stage channel counts must be positive".to_string()));
        }
        if self.stride == 0 {
            return Err(Error::dim("stage stride must be positive".to_string()));
        }
        if self.feature_width == 0 {
            return Err(Error::dim("feature width must be positive".to_string()));
        }
        Ok(())
    }

    /// Spatial size of the final stage output for an `h x w` input.
    pub fn output_spatial(&self, h: usize, w: usize) -> (usize, usize) {
        let mut h = h;
        let mut w = w;
        for _ in &self.channels {
            h = (h - 1) / self.stride + 1;
            w = (w - 1) / self.stride + 1;
        }
        (h, w)
    }

    pub fn out_channels(&self) -> usize {
        *self.channels.last().expect("validated non-empty")
    }
}

/// One 3x3 convolution stage.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvStage {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl ConvStage {
    fn init(c_out: usize, c_in: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            weight: he_normal(vec![c_out, c_in, 3, 3], c_in * 9, rng)?,
            bias: Tensor::zeros(vec![c_out])?,
        })
    }

    fn zeroed(c_out: usize, c_in: usize) -> Result<Self> {
        Ok(Self {
            weight: Tensor::zeros(vec![c_out, c_in, 3, 3])?,
            bias: Tensor::zeros(vec![c_out])?,
        })
    }
}

/// A fully connected layer, `weight: [out, in]`, `bias: [out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LinearLayer {
    pub fn init(out: usize, inp: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            weight: he_normal(vec![out, inp], inp, rng)?,
            bias: Tensor::zeros(vec![out])?,
        })
    }

    pub fn zeroed(out: usize, inp: usize) -> Result<Self> {
        Ok(Self {
            weight: Tensor::zeros(vec![out, inp])?,
            bias: Tensor::zeros(vec![out])?,
        })
    }

    /// Record `linear(input)` with the layer parameters as named leaves.
    pub(crate) fn record(
        &self,
        g: &mut Graph,
        input: NodeId,
        name: &str,
        params: &mut Vec<(String, NodeId)>,
    ) -> Result<NodeId> {
        let w = g.leaf(self.weight.clone());
        let b = g.leaf(self.bias.clone());
        params.push((format!("{name}.weight"), w));
        params.push((format!("{name}.bias"), b));
        g.linear(input, w, b)
    }
}

fn he_normal(shape: Vec<usize>, fan_in: usize, rng: &mut impl Rng) -> Result<Tensor> {
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| normal.sample(rng)).collect())
}

/// Tape positions produced by recording one backbone.
#[derive(Debug, Clone)]
pub struct BackboneTrace {
    /// Output of every spatial layer in order: each convolution stage, then
    /// the attention output if attention is enabled.
    pub spatial: Vec<NodeId>,
    pub attention: Option<AttentionRecord>,
    /// The final spatial features (last element of `spatial`).
    pub features: NodeId,
}

/// Convolutional trunk of one plane, without the fully connected head.
#[derive(Debug, Clone, PartialEq)]
pub struct Backbone {
    config: BackboneConfig,
    stages: Vec<ConvStage>,
    attention: Option<AttentionBlock>,
}

impl Backbone {
    pub fn init(config: &BackboneConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut stages = Vec::with_capacity(config.channels.len());
        let mut c_in = 1;
        for &c_out in &config.channels {
            stages.push(ConvStage::init(c_out, c_in, rng)?);
            c_in = c_out;
        }
        let attention = config
            .attention
            .then(|| AttentionBlock::identity(c_in))
            .transpose()?;
        Ok(Self {
            config: config.clone(),
            stages,
            attention,
        })
    }

    pub fn zeroed(config: &BackboneConfig) -> Result<Self> {
        config.validate()?;
        let mut stages = Vec::with_capacity(config.channels.len());
        let mut c_in = 1;
        for &c_out in &config.channels {
            stages.push(ConvStage::zeroed(c_out, c_in)?);
            c_in = c_out;
        }
        let attention = config
            .attention
            .then(|| AttentionBlock::identity(c_in))
            .transpose()?;
        Ok(Self {
            config: config.clone(),
            stages,
            attention,
        })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn out_channels(&self) -> usize {
        self.config.out_channels()
    }

    /// Record the trunk on a tape; `input` must be `[s, 1, h, w]`.
    pub(crate) fn record(
        &self,
        g: &mut Graph,
        input: NodeId,
        prefix: &str,
        params: &mut Vec<(String, NodeId)>,
    ) -> Result<BackboneTrace> {
        let mut spatial = Vec::with_capacity(self.stages.len() + 1);
        let mut x = input;
        for (i, stage) in self.stages.iter().enumerate() {
            let w = g.leaf(stage.weight.clone());
            let b = g.leaf(stage.bias.clone());
            params.push((format!("{prefix}stage{i}.weight"), w));
            params.push((format!("{prefix}stage{i}.bias"), b));
            let conv = g.conv3x3(x, w, b, self.config.stride)?;
            x = g.relu(conv)?;
            spatial.push(x);
        }
        let attention = match &self.attention {
            Some(block) => {
                let w = g.leaf(block.weight().clone());
                let b = g.leaf(block.bias().clone());
                params.push((format!("{prefix}attention.weight"), w));
                params.push((format!("{prefix}attention.bias"), b));
                let rec = block.record_with_params(g, x, w, b)?;
                x = rec.output;
                spatial.push(x);
                Some(rec)
            }
            None => None,
        };
        Ok(BackboneTrace {
            spatial,
            attention,
            features: x,
        })
    }

    pub(crate) fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        for (i, stage) in self.stages.iter().enumerate() {
            f(format!("{prefix}stage{i}.weight"), &stage.weight);
            f(format!("{prefix}stage{i}.bias"), &stage.bias);
        }
        if let Some(block) = &self.attention {
            f(format!("{prefix}attention.weight"), block.weight());
            f(format!("{prefix}attention.bias"), block.bias());
        }
    }

    pub(crate) fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        for (i, stage) in self.stages.iter_mut().enumerate() {
            f(format!("{prefix}stage{i}.weight"), &mut stage.weight);
            f(format!("{prefix}stage{i}.bias"), &mut stage.bias);
        }
        if let Some(block) = &mut self.attention {
            f(format!("{prefix}attention.weight"), block.weight_mut());
            f(format!("{prefix}attention.bias"), block.bias_mut());
        }
    }
}
