//! Spatial attention block.
//!
//! A 1x1 convolution scores every pixel of every channel, a per-map softmax
//! turns the scores into a distribution over pixels, and dividing each map by
//! its own maximum rescales the strongest pixel to exactly 1.0. The input is
//! then reweighted element-wise by this mask, so attention can only preserve
//! or shrink activations, never amplify them.
//!
//! With zero convolution parameters the mask is exactly 1.0 everywhere
//! (the uniform softmax value divided by itself), making a freshly
//! initialised block a bitwise identity.

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::ops;
use crate::tensor::Tensor;

/// Parameters of one attention block over `channels` feature maps.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionBlock {
    weight: Tensor,
    bias: Tensor,
}

/// Tape positions of the intermediate values of one recorded block.
#[derive(Debug, Clone, Copy)]
pub struct AttentionRecord {
    pub logits: NodeId,
    pub softmax: NodeId,
    /// The max-normalised attention mask, in `[0, 1]` with per-map max 1.
    pub mask: NodeId,
    /// Input reweighted by the mask.
    pub output: NodeId,
}

impl AttentionBlock {
    /// Zero-initialised block: an exact identity until training moves it.
    pub fn identity(channels: usize) -> Result<Self> {
        Ok(Self {
            weight: Tensor::zeros(vec![channels, channels])?,
            bias: Tensor::zeros(vec![channels])?,
        })
    }

    /// Build from explicit parameters. `weight` must be square
    /// `[channels, channels]` and `bias` `[channels]`.
    pub fn from_params(weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.rank() != 2 || weight.shape()[0] != weight.shape()[1] {
            return Err(Error::dim(format!(
                "attention weight must be square, got shape {:?}",
                weight.shape()
            )));
        }
        if bias.rank() != 1 || bias.shape()[0] != weight.shape()[0] {
            return Err(Error::dim(format!(
                "attention bias must have shape [{}], got {:?}",
                weight.shape()[0],
                bias.shape()
            )));
        }
        Ok(Self { weight, bias })
    }

    pub fn channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    // Training-path access; element-wise updates must preserve the shapes.
    pub(crate) fn weight_mut(&mut self) -> &mut Tensor {
        &mut self.weight
    }

    pub(crate) fn bias_mut(&mut self) -> &mut Tensor {
        &mut self.bias
    }

    /// Record the block on a tape. `input` must be `[b, channels, h, w]`.
    /// Parameters enter the tape as fresh leaves whose ids are returned so a
    /// training loop can read their gradients.
    pub fn record(&self, g: &mut Graph, input: NodeId) -> Result<RecordedAttention> {
        let weight = g.leaf(self.weight.clone());
        let bias = g.leaf(self.bias.clone());
        let record = self.record_with_params(g, input, weight, bias)?;
        Ok(RecordedAttention {
            weight,
            bias,
            nodes: record,
        })
    }

    /// Record using already-placed parameter leaves (for shared parameters).
    pub fn record_with_params(
        &self,
        g: &mut Graph,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
    ) -> Result<AttentionRecord> {
        let logits = g.conv1x1(input, weight, bias)?;
        let softmax = g.softmax_per_map(logits)?;
        let mask = g.max_normalize_per_map(softmax)?;
        let output = g.hadamard(input, mask)?;
        Ok(AttentionRecord {
            logits,
            softmax,
            mask,
            output,
        })
    }

    /// Eager forward pass without a tape.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        ops::hadamard(input, &self.mask(input)?)
    }

    /// Eager attention mask for `input`.
    pub fn mask(&self, input: &Tensor) -> Result<Tensor> {
        let logits = ops::conv1x1(input, &self.weight, &self.bias)?;
        ops::max_normalize_per_map(&ops::softmax_per_map(&logits)?)
    }
}

/// Parameter leaf ids plus intermediate node ids of one recorded block.
#[derive(Debug, Clone, Copy)]
pub struct RecordedAttention {
    pub weight: NodeId,
    pub bias: NodeId,
    pub nodes: AttentionRecord,
}
