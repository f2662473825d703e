//! Train all four strategies on the same data and compare.
//!
//! The strategies differ only in where the three planes meet: not at all
//! (single plane), before the shared head (MPFuseNet, slice concatenation),
//! between head layers (MP2, per-plane feature vectors joined before the
//! final layer), or after three full networks (MPLR, logistic regression
//! over the three probabilities).
//!
//! Run with `cargo run --example fusion_strategies`.

use locvalid::io::synth::{self, SynthConfig};
use locvalid::metrics;
use locvalid::model::{train_toy, BackboneConfig, FusionStrategy, Plane, TrainConfig, TrainedModel};
use locvalid::Result;

fn main() -> Result<()> {
    let data_cfg = SynthConfig {
        seed: 5,
        n_cases: 12,
        slices_min: 3,
        slices_max: 3,
        height: 12,
        width: 12,
        radius_min: 3,
        radius_max: 3,
        intensity: 6.0,
        noise_sigma: 0.4,
        positive_fraction: 0.5,
    };
    let dataset = synth::generate_synthetic(&data_cfg)?;
    let cases: Vec<_> = dataset.cases.iter().map(|c| c.planes.clone()).collect();
    let labels = dataset.labels();

    let train_cfg = TrainConfig {
        epochs: 4,
        lr: 3e-3,
        seed: 1,
        augment: false,
        backbone: BackboneConfig {
            channels: vec![6, 12],
            stride: 2,
            attention: true,
            feature_width: 8,
        },
    };

    for strategy in [
        FusionStrategy::SinglePlane,
        FusionStrategy::MpFuseNet,
        FusionStrategy::Mp2,
        FusionStrategy::Mplr,
    ] {
        let outcome = train_toy(strategy, Plane::Axial, &cases, &labels, &train_cfg)?;
        let probs: Vec<f64> = cases
            .iter()
            .map(|c| outcome.model.predict_case(c))
            .collect::<Result<_>>()?;
        let auc = metrics::classification_auc(&probs, &labels)?;
        println!("{:<11} train AUC {:.3}", strategy.as_str(), auc);

        if let TrainedModel::Mplr(m) = &outcome.model {
            let lr = m.lr();
            println!(
                "            mplr mixes plane probabilities with weights {:?} bias {:.3}",
                lr.weights.map(|w| (w * 1000.0).round() / 1000.0),
                lr.bias
            );
        }
    }
    Ok(())
}
