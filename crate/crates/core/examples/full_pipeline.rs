//! The whole validation loop in one process: generate data, train, hold
//! cases out, classify, localise with Grad-Cam, score the localisation, and
//! aggregate.
//!
//! This is the in-library mirror of the CLI flow
//! `synth -> train -> gradcam -> metrics -> aggregate`.
//!
//! Run with `cargo run --example full_pipeline`.

use locvalid::io::synth::{self, SynthConfig, LESION_CATEGORY};
use locvalid::metrics::{self, MetricKind};
use locvalid::model::{train_toy, BackboneConfig, FusionStrategy, Plane, TrainConfig};
use locvalid::saliency::{gradcam, GradCamLayer};
use locvalid::Result;

fn main() -> Result<()> {
    let data_cfg = SynthConfig {
        seed: 21,
        n_cases: 24,
        slices_min: 6,
        slices_max: 6,
        height: 32,
        width: 32,
        radius_min: 4,
        radius_max: 6,
        intensity: 6.0,
        noise_sigma: 0.5,
        positive_fraction: 0.5,
    };
    let dataset = synth::generate_synthetic(&data_cfg)?;
    let cases: Vec<_> = dataset.cases.iter().map(|c| c.planes.clone()).collect();
    let labels = dataset.labels();

    // Hold out every fourth case.
    let holdout: Vec<usize> = (0..cases.len()).step_by(4).collect();
    let train_idx: Vec<usize> = (0..cases.len()).filter(|i| i % 4 != 0).collect();
    let train_cases: Vec<_> = train_idx.iter().map(|&i| cases[i].clone()).collect();
    let train_labels: Vec<bool> = train_idx.iter().map(|&i| labels[i]).collect();
    println!(
        "training on {} cases, holding out {}",
        train_cases.len(),
        holdout.len()
    );

    let train_cfg = TrainConfig {
        epochs: 8,
        lr: 3e-3,
        seed: 4,
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
        &train_cases,
        &train_labels,
        &train_cfg,
    )?;
    let model = outcome.model.as_single().expect("single-plane model");

    // Classification on the holdout.
    let mut probs = Vec::new();
    let mut hold_labels = Vec::new();
    for &i in &holdout {
        probs.push(model.predict(cases[i].get(Plane::Axial))?);
        hold_labels.push(labels[i]);
    }
    let auc = metrics::classification_auc(&probs, &hold_labels)?;
    println!("holdout classification AUC {auc:.3}");

    // Localisation on correctly classified holdout positives: Grad-Cam each
    // annotated slice, score it against the box, keep the best slice per
    // metric.
    let mut key_la = Vec::new();
    for (&i, &prob) in holdout.iter().zip(&probs) {
        if !labels[i] || prob <= 0.5 {
            continue;
        }
        let case = &dataset.cases[i];
        let volume = case.planes.get(Plane::Axial);
        let ann = case.annotation_for(Plane::Axial);
        let mut scores = Vec::new();
        for slice in ann.annotated_slices() {
            let map = gradcam(model, volume, slice, GradCamLayer::Stage(0))?;
            let mask = metrics::rasterize(
                ann,
                slice,
                volume.height(),
                volume.width(),
                Some(LESION_CATEGORY),
            )?;
            scores.push(metrics::score_slice(&map, &mask, 0.6, slice)?);
        }
        let key = metrics::key_slice(&scores, MetricKind::La)?;
        println!(
            "  {}: best slice {} with LA {:.3}",
            case.case_id, key.slice_index, key.la
        );
        key_la.push(key.la);
    }

    // Aggregate over the scored cases.
    let ks = [0.5, 0.6, 0.7, 0.8, 0.9];
    println!("accuracy above k over {} localised cases:", key_la.len());
    for (k, acc) in metrics::aggregate_accuracy(&key_la, &ks)? {
        println!("  k = {k:.2}  accuracy = {acc:.3}");
    }
    let (count, rate) = metrics::feature_detection_rate(&key_la, 0.6)?;
    println!(
        "feature detection: {count}/{} cases localise {LESION_CATEGORY} above 0.6 ({rate:.2})",
        key_la.len()
    );
    Ok(())
}
