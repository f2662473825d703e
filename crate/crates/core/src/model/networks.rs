//! The single-plane network and the three multi-plane fusion networks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::AttentionRecord;
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::model::backbone::{Backbone, BackboneConfig, LinearLayer};
use crate::model::mplr::{mplr_predict, LrWeights};
use crate::model::{FusionStrategy, Plane, PlaneSet, Volume};

/// Internal: uniform named-parameter traversal, used by the optimiser and
/// the checkpoint writer. Names must match the leaves pushed during
/// recording.
pub(crate) trait HasParams {
    fn visit_params(&self, f: &mut dyn FnMut(String, &crate::tensor::Tensor));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(String, &mut crate::tensor::Tensor));
}

/// Single-plane classifier: backbone, GAP, FC1 per slice, max over slices,
/// FC2, sigmoid.
#[derive(Debug, Clone, PartialEq)]
pub struct SinglePlaneModel {
    plane: Plane,
    backbone: Backbone,
    fc1: LinearLayer,
    fc2: LinearLayer,
}

/// Tape positions of one recorded single-plane forward pass.
pub struct SinglePlaneTrace {
    pub graph: Graph,
    pub input: NodeId,
    /// Every spatial layer: each stage output, then the attention output.
    pub spatial: Vec<NodeId>,
    pub attention: Option<AttentionRecord>,
    pub gap: NodeId,
    pub fc1_out: NodeId,
    /// The `(1, f)` feature vector after the slice-axis maximum.
    pub pooled: NodeId,
    /// Pre-sigmoid output.
    pub logit: NodeId,
    pub prob: NodeId,
    pub params: Vec<(String, NodeId)>,
}

impl SinglePlaneModel {
    pub fn init(plane: Plane, config: &BackboneConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with_rng(plane, config, &mut rng)
    }

    pub fn init_with_rng(
        plane: Plane,
        config: &BackboneConfig,
        rng: &mut impl rand::Rng,
    ) -> Result<Self> {
        let backbone = Backbone::init(config, rng)?;
        let fc1 = LinearLayer::init(config.feature_width, config.out_channels(), rng)?;
        let fc2 = LinearLayer::init(1, config.feature_width, rng)?;
        Ok(Self {
            plane,
            backbone,
            fc1,
            fc2,
        })
    }

    pub fn zeroed(plane: Plane, config: &BackboneConfig) -> Result<Self> {
        Ok(Self {
            plane,
            backbone: Backbone::zeroed(config)?,
            fc1: LinearLayer::zeroed(config.feature_width, config.out_channels())?,
            fc2: LinearLayer::zeroed(1, config.feature_width)?,
        })
    }

    pub fn plane(&self) -> Plane {
        self.plane
    }

    pub fn config(&self) -> &BackboneConfig {
        self.backbone.config()
    }

    /// Direct head access for tests probing output-scaling invariances.
    #[cfg(test)]
    pub(crate) fn fc2_mut(&mut self) -> &mut LinearLayer {
        &mut self.fc2
    }

    /// Record a full forward pass for `volume` on a fresh tape.
    pub fn trace(&self, volume: &Volume) -> Result<SinglePlaneTrace> {
        if volume.plane() != self.plane {
            return Err(Error::Fusion(format!(
                "model expects plane {}, volume is {}",
                self.plane,
                volume.plane()
            )));
        }
        let mut g = Graph::new();
        let input = g.leaf(volume.slices().clone());
        let mut params = Vec::new();
        let bb = self.backbone.record(&mut g, input, "backbone.", &mut params)?;
        let gap = g.global_avg_pool(bb.features)?;
        let fc1_out = self.fc1.record(&mut g, gap, "fc1", &mut params)?;
        let pooled = g.max_over_slices(fc1_out)?;
        let logit = self.fc2.record(&mut g, pooled, "fc2", &mut params)?;
        let prob = g.sigmoid(logit)?;
        Ok(SinglePlaneTrace {
            graph: g,
            input,
            spatial: bb.spatial,
            attention: bb.attention,
            gap,
            fc1_out,
            pooled,
            logit,
            prob,
            params,
        })
    }

    /// Output probability for one volume.
    pub fn predict(&self, volume: &Volume) -> Result<f64> {
        let trace = self.trace(volume)?;
        trace.graph.value(trace.prob)?.item()
    }
}

impl HasParams for SinglePlaneModel {
    fn visit_params(&self, f: &mut dyn FnMut(String, &crate::tensor::Tensor)) {
        self.backbone.visit_params("backbone.", f);
        f("fc1.weight".to_string(), &self.fc1.weight);
        f("fc1.bias".to_string(), &self.fc1.bias);
        f("fc2.weight".to_string(), &self.fc2.weight);
        f("fc2.bias".to_string(), &self.fc2.bias);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(String, &mut crate::tensor::Tensor)) {
        self.backbone.visit_params_mut("backbone.", f);
        f("fc1.weight".to_string(), &mut self.fc1.weight);
        f("fc1.bias".to_string(), &mut self.fc1.bias);
        f("fc2.weight".to_string(), &mut self.fc2.weight);
        f("fc2.bias".to_string(), &mut self.fc2.bias);
    }
}

/// Fusion strategy I: per-plane backbones, spatial features concatenated
/// along the slice axis, one shared head.
#[derive(Debug, Clone, PartialEq)]
pub struct MpFuseNetModel {
    backbones: [Backbone; 3],
    fc1: LinearLayer,
    fc2: LinearLayer,
}

pub struct MpFuseNetTrace {
    pub graph: Graph,
    pub inputs: [NodeId; 3],
    /// Per-plane spatial features entering the fusion, canonical order.
    pub plane_features: [NodeId; 3],
    pub fused: NodeId,
    pub pooled: NodeId,
    pub logit: NodeId,
    pub prob: NodeId,
    pub params: Vec<(String, NodeId)>,
}

impl MpFuseNetModel {
    pub fn init(config: &BackboneConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let backbones = [
            Backbone::init(config, &mut rng)?,
            Backbone::init(config, &mut rng)?,
            Backbone::init(config, &mut rng)?,
        ];
        let fc1 = LinearLayer::init(config.feature_width, config.out_channels(), &mut rng)?;
        let fc2 = LinearLayer::init(1, config.feature_width, &mut rng)?;
        Ok(Self {
            backbones,
            fc1,
            fc2,
        })
    }

    pub fn zeroed(config: &BackboneConfig) -> Result<Self> {
        Ok(Self {
            backbones: [
                Backbone::zeroed(config)?,
                Backbone::zeroed(config)?,
                Backbone::zeroed(config)?,
            ],
            fc1: LinearLayer::zeroed(config.feature_width, config.out_channels())?,
            fc2: LinearLayer::zeroed(1, config.feature_width)?,
        })
    }

    pub fn config(&self) -> &BackboneConfig {
        self.backbones[0].config()
    }

    pub fn trace(&self, set: &PlaneSet) -> Result<MpFuseNetTrace> {
        let mut g = Graph::new();
        let mut params = Vec::new();
        let mut inputs = [0; 3];
        let mut features = [0; 3];
        for plane in Plane::ALL {
            let i = plane.index();
            let input = g.leaf(set.get(plane).slices().clone());
            let bb = self.backbones[i].record(&mut g, input, &format!("{plane}."), &mut params)?;
            inputs[i] = input;
            features[i] = bb.features;
        }
        let shapes: Vec<&[usize]> = features
            .iter()
            .map(|&id| g.value(id).map(|t| t.shape()))
            .collect::<Result<_>>()?;
        if shapes[1][1..] != shapes[0][1..] || shapes[2][1..] != shapes[0][1..] {
            return Err(Error::Fusion(format!(
                "backbone outputs disagree across planes: {shapes:?}"
            )));
        }
        let fused = g.concat(&features, 0)?;
        let gap = g.global_avg_pool(fused)?;
        let fc1_out = self.fc1.record(&mut g, gap, "fc1", &mut params)?;
        let pooled = g.max_over_slices(fc1_out)?;
        let logit = self.fc2.record(&mut g, pooled, "fc2", &mut params)?;
        let prob = g.sigmoid(logit)?;
        Ok(MpFuseNetTrace {
            graph: g,
            inputs,
            plane_features: features,
            fused,
            pooled,
            logit,
            prob,
            params,
        })
    }

    pub fn predict(&self, set: &PlaneSet) -> Result<f64> {
        let trace = self.trace(set)?;
        trace.graph.value(trace.prob)?.item()
    }

    /// The `(1, f)` post-max vector of a single plane run through the shared
    /// head in isolation; used to verify the fusion algebra.
    pub fn plane_pooled(&self, volume: &Volume) -> Result<crate::tensor::Tensor> {
        let mut g = Graph::new();
        let mut params = Vec::new();
        let input = g.leaf(volume.slices().clone());
        let bb = self.backbones[volume.plane().index()].record(
            &mut g,
            input,
            &format!("{}.", volume.plane()),
            &mut params,
        )?;
        let gap = g.global_avg_pool(bb.features)?;
        let fc1_out = self.fc1.record(&mut g, gap, "fc1", &mut params)?;
        let pooled = g.max_over_slices(fc1_out)?;
        Ok(g.value(pooled)?.clone())
    }

    /// The fused `(1, f)` post-max vector for a full plane set.
    pub fn fused_pooled(&self, set: &PlaneSet) -> Result<crate::tensor::Tensor> {
        let trace = self.trace(set)?;
        Ok(trace.graph.value(trace.pooled)?.clone())
    }
}

impl HasParams for MpFuseNetModel {
    fn visit_params(&self, f: &mut dyn FnMut(String, &crate::tensor::Tensor)) {
        for plane in Plane::ALL {
            self.backbones[plane.index()].visit_params(&format!("{plane}."), f);
        }
        f("fc1.weight".to_string(), &self.fc1.weight);
        f("fc1.bias".to_string(), &self.fc1.bias);
        f("fc2.weight".to_string(), &self.fc2.weight);
        f("fc2.bias".to_string(), &self.fc2.bias);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(String, &mut crate::tensor::Tensor)) {
        for plane in Plane::ALL {
            self.backbones[plane.index()].visit_params_mut(&format!("{plane}."), f);
        }
        f("fc1.weight".to_string(), &mut self.fc1.weight);
        f("fc1.bias".to_string(), &mut self.fc1.bias);
        f("fc2.weight".to_string(), &mut self.fc2.weight);
        f("fc2.bias".to_string(), &mut self.fc2.bias);
    }
}

/// Fusion strategy II: a full head per plane, post-max vectors concatenated
/// into one final fully connected layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mp2Model {
    backbones: [Backbone; 3],
    fc1s: [LinearLayer; 3],
    final_fc: LinearLayer,
}

pub struct Mp2Trace {
    pub graph: Graph,
    pub inputs: [NodeId; 3],
    /// Per-plane `(1, f)` post-max vectors, canonical order.
    pub plane_pooled: [NodeId; 3],
    /// The concatenated `(1, 3f)` vector.
    pub combined: NodeId,
    pub logit: NodeId,
    pub prob: NodeId,
    pub params: Vec<(String, NodeId)>,
}

impl Mp2Model {
    pub fn init(config: &BackboneConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = config.feature_width;
        let backbones = [
            Backbone::init(config, &mut rng)?,
            Backbone::init(config, &mut rng)?,
            Backbone::init(config, &mut rng)?,
        ];
        let fc1s = [
            LinearLayer::init(f, config.out_channels(), &mut rng)?,
            LinearLayer::init(f, config.out_channels(), &mut rng)?,
            LinearLayer::init(f, config.out_channels(), &mut rng)?,
        ];
        let final_fc = LinearLayer::init(1, 3 * f, &mut rng)?;
        Ok(Self {
            backbones,
            fc1s,
            final_fc,
        })
    }

    pub fn zeroed(config: &BackboneConfig) -> Result<Self> {
        let f = config.feature_width;
        Ok(Self {
            backbones: [
                Backbone::zeroed(config)?,
                Backbone::zeroed(config)?,
                Backbone::zeroed(config)?,
            ],
            fc1s: [
                LinearLayer::zeroed(f, config.out_channels())?,
                LinearLayer::zeroed(f, config.out_channels())?,
                LinearLayer::zeroed(f, config.out_channels())?,
            ],
            final_fc: LinearLayer::zeroed(1, 3 * f)?,
        })
    }

    pub fn config(&self) -> &BackboneConfig {
        self.backbones[0].config()
    }

    pub fn trace(&self, set: &PlaneSet) -> Result<Mp2Trace> {
        let mut g = Graph::new();
        let mut params = Vec::new();
        let mut inputs = [0; 3];
        let mut plane_pooled = [0; 3];
        for plane in Plane::ALL {
            let i = plane.index();
            let input = g.leaf(set.get(plane).slices().clone());
            let bb = self.backbones[i].record(&mut g, input, &format!("{plane}."), &mut params)?;
            let gap = g.global_avg_pool(bb.features)?;
            let fc1_out = self.fc1s[i].record(&mut g, gap, &format!("{plane}.fc1"), &mut params)?;
            inputs[i] = input;
            plane_pooled[i] = g.max_over_slices(fc1_out)?;
        }
        let combined = g.concat(&plane_pooled, 1)?;
        let logit = self.final_fc.record(&mut g, combined, "final_fc", &mut params)?;
        let prob = g.sigmoid(logit)?;
        Ok(Mp2Trace {
            graph: g,
            inputs,
            plane_pooled,
            combined,
            logit,
            prob,
            params,
        })
    }

    pub fn predict(&self, set: &PlaneSet) -> Result<f64> {
        let trace = self.trace(set)?;
        trace.graph.value(trace.prob)?.item()
    }
}

impl HasParams for Mp2Model {
    fn visit_params(&self, f: &mut dyn FnMut(String, &crate::tensor::Tensor)) {
        for plane in Plane::ALL {
            let i = plane.index();
            self.backbones[i].visit_params(&format!("{plane}."), f);
            f(format!("{plane}.fc1.weight"), &self.fc1s[i].weight);
            f(format!("{plane}.fc1.bias"), &self.fc1s[i].bias);
        }
        f("final_fc.weight".to_string(), &self.final_fc.weight);
        f("final_fc.bias".to_string(), &self.final_fc.bias);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(String, &mut crate::tensor::Tensor)) {
        for plane in Plane::ALL {
            let i = plane.index();
            self.backbones[i].visit_params_mut(&format!("{plane}."), f);
            f(format!("{plane}.fc1.weight"), &mut self.fc1s[i].weight);
            f(format!("{plane}.fc1.bias"), &mut self.fc1s[i].bias);
        }
        f("final_fc.weight".to_string(), &mut self.final_fc.weight);
        f("final_fc.bias".to_string(), &mut self.final_fc.bias);
    }
}

/// Fusion strategy III: three single-plane models combined by a logistic
/// regression over their output probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct MplrModel {
    pub(crate) planes: [SinglePlaneModel; 3],
    pub(crate) lr: LrWeights,
}

impl MplrModel {
    pub fn new(planes: [SinglePlaneModel; 3], lr: LrWeights) -> Result<Self> {
        for plane in Plane::ALL {
            if planes[plane.index()].plane() != plane {
                return Err(Error::Fusion(format!(
                    "plane model {} found at position {}",
                    planes[plane.index()].plane(),
                    plane
                )));
            }
        }
        Ok(Self { planes, lr })
    }

    pub fn plane_model(&self, plane: Plane) -> &SinglePlaneModel {
        &self.planes[plane.index()]
    }

    pub fn lr(&self) -> &LrWeights {
        &self.lr
    }

    /// Per-plane probabilities in canonical order.
    pub fn plane_probs(&self, set: &PlaneSet) -> Result<[f64; 3]> {
        let mut probs = [0.0; 3];
        for plane in Plane::ALL {
            probs[plane.index()] = self.planes[plane.index()].predict(set.get(plane))?;
        }
        Ok(probs)
    }

    pub fn predict(&self, set: &PlaneSet) -> Result<f64> {
        Ok(mplr_predict(&self.lr, &self.plane_probs(set)?))
    }
}

/// A trained model of any strategy, as produced by training or a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    SinglePlane(SinglePlaneModel),
    MpFuseNet(MpFuseNetModel),
    Mp2(Mp2Model),
    Mplr(MplrModel),
}

impl TrainedModel {
    pub fn strategy(&self) -> FusionStrategy {
        match self {
            TrainedModel::SinglePlane(_) => FusionStrategy::SinglePlane,
            TrainedModel::MpFuseNet(_) => FusionStrategy::MpFuseNet,
            TrainedModel::Mp2(_) => FusionStrategy::Mp2,
            TrainedModel::Mplr(_) => FusionStrategy::Mplr,
        }
    }

    /// Probability for a full three-plane case. Single-plane models read
    /// their own plane's volume and ignore the rest.
    pub fn predict_case(&self, set: &PlaneSet) -> Result<f64> {
        match self {
            TrainedModel::SinglePlane(m) => m.predict(set.get(m.plane())),
            TrainedModel::MpFuseNet(m) => m.predict(set),
            TrainedModel::Mp2(m) => m.predict(set),
            TrainedModel::Mplr(m) => m.predict(set),
        }
    }

    pub fn as_single(&self) -> Option<&SinglePlaneModel> {
        match self {
            TrainedModel::SinglePlane(m) => Some(m),
            _ => None,
        }
    }
}
