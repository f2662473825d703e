//! Train the single-plane classifier on a small synthetic set and watch the
//! loss fall. Everything is seeded, so this prints the same numbers on every
//! run.
//!
//! Run with `cargo run --example train_single_plane`.

use locvalid::io::synth::{self, SynthConfig};
use locvalid::metrics;
use locvalid::model::{train_toy, BackboneConfig, FusionStrategy, Plane, TrainConfig};
use locvalid::Result;

fn main() -> Result<()> {
    let data_cfg = SynthConfig {
        seed: 3,
        n_cases: 16,
        slices_min: 4,
        slices_max: 4,
        height: 16,
        width: 16,
        radius_min: 3,
        radius_max: 4,
        intensity: 6.0,
        noise_sigma: 0.4,
        positive_fraction: 0.5,
    };
    let dataset = synth::generate_synthetic(&data_cfg)?;
    let cases: Vec<_> = dataset.cases.iter().map(|c| c.planes.clone()).collect();
    let labels = dataset.labels();

    let train_cfg = TrainConfig {
        epochs: 6,
        lr: 3e-3,
        seed: 0,
        augment: true,
        backbone: BackboneConfig {
            channels: vec![8, 16],
            stride: 2,
            attention: true,
            feature_width: 16,
        },
    };
    let outcome = train_toy(
        FusionStrategy::SinglePlane,
        Plane::Axial,
        &cases,
        &labels,
        &train_cfg,
    )?;
    for line in &outcome.log {
        println!(
            "epoch {}: mean loss {:.4}, train AUC {:.3}",
            line.epoch, line.mean_loss, line.train_auc
        );
    }
    let first = outcome.log.first().expect("at least one epoch");
    let last = outcome.log.last().expect("at least one epoch");
    assert!(
        last.mean_loss < first.mean_loss,
        "loss should fall over six epochs on an easy set"
    );

    // Score the training set with the final model (a sanity readout, not an
    // unbiased estimate; the full_pipeline example holds cases out).
    let probs: Vec<f64> = cases
        .iter()
        .map(|c| outcome.model.predict_case(c))
        .collect::<Result<_>>()?;
    let auc = metrics::classification_auc(&probs, &labels)?;
    println!("final train-set AUC {auc:.3}");
    for (case, prob) in dataset.cases.iter().zip(&probs).take(4) {
        println!("  {} label={} prob={:.3}", case.case_id, case.label, prob);
    }
    Ok(())
}
