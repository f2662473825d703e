//! Toy training loop: Adam, weighted cross-entropy with one MRI per batch,
//! and per-slice affine augmentation.
//!
//! Runs are deterministic for a fixed seed: sample order, augmentation draws,
//! and parameter initialisation all come from one seeded generator, and
//! training is single-threaded.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::metrics::classification_auc;
use crate::model::backbone::BackboneConfig;
use crate::model::mplr::mplr_fit;
use crate::model::networks::{
    HasParams, Mp2Model, MpFuseNetModel, MplrModel, SinglePlaneModel, TrainedModel,
};
use crate::model::{FusionStrategy, Plane, PlaneSet, Volume};
use crate::tensor::Tensor;

/// Adam optimiser with per-parameter state keyed by parameter name.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    state: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            state: BTreeMap::new(),
        }
    }

    /// Advance the shared step counter; call once per batch before `update`.
    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    pub fn update(&mut self, name: &str, param: &mut Tensor, grad: &Tensor) {
        debug_assert_eq!(param.shape(), grad.shape());
        let (m, v) = self
            .state
            .entry(name.to_string())
            .or_insert_with(|| (vec![0.0; param.len()], vec![0.0; param.len()]));
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for ((p, g), (mi, vi)) in param
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(m.iter_mut().zip(v.iter_mut()))
        {
            *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
            *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Toy-scale default 1e-3; the published value 1e-5 assumes a pretrained
    /// backbone and is selectable.
    pub lr: f64,
    pub seed: u64,
    pub augment: bool,
    pub backbone: BackboneConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 4,
            lr: 1e-3,
            seed: 0,
            augment: true,
            backbone: BackboneConfig::toy(),
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    /// AUC over the un-augmented training set at epoch end.
    pub train_auc: f64,
}

/// A trained model plus its per-epoch log.
pub struct TrainOutcome {
    pub model: TrainedModel,
    pub log: Vec<EpochLog>,
}

/// Random affine augmentation of every slice: horizontal flip with
/// probability 0.5, translation up to 10% of each axis, rotation up to 15
/// degrees, nearest-neighbour resampling, zero fill outside the image.
/// Draws per slice, in that order, from `rng`.
pub fn augment_volume(volume: &Volume, rng: &mut impl Rng) -> Result<Volume> {
    let (h, w) = (volume.height(), volume.width());
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut out = Vec::with_capacity(volume.slices().len());
    for i in 0..volume.num_slices() {
        let flip = rng.random_bool(0.5);
        let dx = rng.random_range(-0.1..=0.1) * w as f64;
        let dy = rng.random_range(-0.1..=0.1) * h as f64;
        let theta = rng.random_range(-15.0f64..=15.0).to_radians();
        let (sin, cos) = theta.sin_cos();
        let slice = volume.slice_2d(i)?;
        for y in 0..h {
            for x in 0..w {
                // Invert translate-then-rotate about the image center, then
                // undo the flip.
                let ux = x as f64 - cx - dx;
                let uy = y as f64 - cy - dy;
                let mut sx = cos * ux + sin * uy + cx;
                let sy = -sin * ux + cos * uy + cy;
                if flip {
                    sx = (w as f64 - 1.0) - sx;
                }
                let rx = sx.round();
                let ry = sy.round();
                let inside =
                    rx >= 0.0 && ry >= 0.0 && (rx as usize) < w && (ry as usize) < h;
                out.push(if inside {
                    slice.at2(ry as usize, rx as usize)
                } else {
                    0.0
                });
            }
        }
    }
    Volume::new(
        volume.plane(),
        Tensor::from_vec(vec![volume.num_slices(), 1, h, w], out)?,
    )
}

/// Internal: one gradient step on a recorded forward pass.
fn descend(
    mut graph: Graph,
    prob: NodeId,
    params: &[(String, NodeId)],
    label: bool,
    w_pos: f64,
    adam: &mut Adam,
    model: &mut dyn HasParams,
) -> Result<f64> {
    let loss = graph.weighted_bce(prob, f64::from(u8::from(label)), w_pos)?;
    graph.backward(loss)?;
    let mut grads: BTreeMap<String, Tensor> = BTreeMap::new();
    for (name, id) in params {
        if let Some(g) = graph.grad(*id)? {
            grads.insert(name.clone(), g.clone());
        }
    }
    adam.begin_step();
    model.visit_params_mut(&mut |name, tensor| {
        if let Some(g) = grads.get(&name) {
            adam.update(&name, tensor, g);
        }
    });
    graph.value(loss)?.item()
}

fn class_weight(labels: &[bool]) -> Result<f64> {
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Training(
            "training set must contain both classes".to_string(),
        ));
    }
    Ok(n_neg as f64 / n_pos as f64)
}

fn check_lengths(cases: usize, labels: usize) -> Result<()> {
    if cases != labels {
        return Err(Error::Training(format!(
            "{cases} cases vs {labels} labels"
        )));
    }
    if cases == 0 {
        return Err(Error::Training("empty training set".to_string()));
    }
    Ok(())
}

/// Internal: shared epoch loop. `step` runs one case; `predict` scores one
/// case for the epoch AUC.
fn run_epochs<M: HasParams>(
    model: &mut M,
    cases: &[PlaneSet],
    labels: &[bool],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    step: impl Fn(&mut M, &PlaneSet, bool, f64, bool, &mut ChaCha8Rng, &mut Adam) -> Result<f64>,
    predict: impl Fn(&M, &PlaneSet) -> Result<f64>,
) -> Result<Vec<EpochLog>> {
    let w_pos = class_weight(labels)?;
    let mut adam = Adam::new(cfg.lr);
    let mut order: Vec<usize> = (0..cases.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let mut loss_sum = 0.0;
        for &i in &order {
            loss_sum += step(model, &cases[i], labels[i], w_pos, cfg.augment, rng, &mut adam)?;
        }
        let probs: Vec<f64> = cases
            .iter()
            .map(|c| predict(model, c))
            .collect::<Result<_>>()?;
        log.push(EpochLog {
            epoch,
            mean_loss: loss_sum / cases.len() as f64,
            train_auc: classification_auc(&probs, labels)?,
        });
    }
    Ok(log)
}

/// Train a single-plane model on one plane of each case.
pub fn train_single_plane(
    plane: Plane,
    cases: &[PlaneSet],
    labels: &[bool],
    cfg: &TrainConfig,
) -> Result<(SinglePlaneModel, Vec<EpochLog>)> {
    check_lengths(cases.len(), labels.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = SinglePlaneModel::init_with_rng(plane, &cfg.backbone, &mut rng)?;
    let log = run_epochs(
        &mut model,
        cases,
        labels,
        cfg,
        &mut rng,
        |model, case, label, w_pos, augment, rng, adam| {
            let volume = case.get(model.plane());
            let volume = if augment {
                augment_volume(volume, rng)?
            } else {
                volume.clone()
            };
            let trace = model.trace(&volume)?;
            descend(trace.graph, trace.prob, &trace.params, label, w_pos, adam, model)
        },
        |model, case| model.predict(case.get(model.plane())),
    )?;
    Ok((model, log))
}

fn augment_set(set: &PlaneSet, rng: &mut impl Rng) -> Result<PlaneSet> {
    let volumes = set
        .iter()
        .map(|v| augment_volume(v, rng))
        .collect::<Result<Vec<_>>>()?;
    PlaneSet::new(volumes)
}

pub fn train_mpfusenet(
    cases: &[PlaneSet],
    labels: &[bool],
    cfg: &TrainConfig,
) -> Result<(MpFuseNetModel, Vec<EpochLog>)> {
    check_lengths(cases.len(), labels.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = MpFuseNetModel::init(&cfg.backbone, cfg.seed)?;
    let log = run_epochs(
        &mut model,
        cases,
        labels,
        cfg,
        &mut rng,
        |model, case, label, w_pos, augment, rng, adam| {
            let set = if augment {
                augment_set(case, rng)?
            } else {
                case.clone()
            };
            let trace = model.trace(&set)?;
            descend(trace.graph, trace.prob, &trace.params, label, w_pos, adam, model)
        },
        |model, case| model.predict(case),
    )?;
    Ok((model, log))
}

pub fn train_mp2(
    cases: &[PlaneSet],
    labels: &[bool],
    cfg: &TrainConfig,
) -> Result<(Mp2Model, Vec<EpochLog>)> {
    check_lengths(cases.len(), labels.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Mp2Model::init(&cfg.backbone, cfg.seed)?;
    let log = run_epochs(
        &mut model,
        cases,
        labels,
        cfg,
        &mut rng,
        |model, case, label, w_pos, augment, rng, adam| {
            let set = if augment {
                augment_set(case, rng)?
            } else {
                case.clone()
            };
            let trace = model.trace(&set)?;
            descend(trace.graph, trace.prob, &trace.params, label, w_pos, adam, model)
        },
        |model, case| model.predict(case),
    )?;
    Ok((model, log))
}

/// Train three single-plane models (per-plane seeds derived from the base
/// seed), then fit the logistic regression on their training-set outputs.
pub fn train_mplr(
    cases: &[PlaneSet],
    labels: &[bool],
    cfg: &TrainConfig,
) -> Result<(MplrModel, Vec<EpochLog>)> {
    check_lengths(cases.len(), labels.len())?;
    let mut plane_models = Vec::with_capacity(3);
    let mut log = Vec::new();
    for plane in Plane::ALL {
        let mut plane_cfg = cfg.clone();
        plane_cfg.seed = cfg.seed.wrapping_add(plane.index() as u64);
        let (model, plane_log) = train_single_plane(plane, cases, labels, &plane_cfg)?;
        log.extend(plane_log);
        plane_models.push(model);
    }
    let planes: [SinglePlaneModel; 3] = plane_models
        .try_into()
        .expect("exactly three plane models");
    let probs: Vec<[f64; 3]> = cases
        .iter()
        .map(|case| {
            let mut p = [0.0; 3];
            for plane in Plane::ALL {
                p[plane.index()] = planes[plane.index()].predict(case.get(plane))?;
            }
            Ok(p)
        })
        .collect::<Result<_>>()?;
    let lr = mplr_fit(&probs, labels)?;
    let model = MplrModel::new(planes, lr)?;
    Ok((model, log))
}

/// Train any strategy. `plane` selects the plane for `SinglePlane` and is
/// ignored otherwise.
pub fn train_toy(
    strategy: FusionStrategy,
    plane: Plane,
    cases: &[PlaneSet],
    labels: &[bool],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let (model, log) = match strategy {
        FusionStrategy::SinglePlane => {
            let (m, log) = train_single_plane(plane, cases, labels, cfg)?;
            (TrainedModel::SinglePlane(m), log)
        }
        FusionStrategy::MpFuseNet => {
            let (m, log) = train_mpfusenet(cases, labels, cfg)?;
            (TrainedModel::MpFuseNet(m), log)
        }
        FusionStrategy::Mp2 => {
            let (m, log) = train_mp2(cases, labels, cfg)?;
            (TrainedModel::Mp2(m), log)
        }
        FusionStrategy::Mplr => {
            let (m, log) = train_mplr(cases, labels, cfg)?;
            (TrainedModel::Mplr(m), log)
        }
    };
    Ok(TrainOutcome { model, log })
}
