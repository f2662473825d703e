//! Grad-Cam on a trained single-plane model, rendered as ASCII art.
//!
//! The map is computed per slice: backpropagate the pre-sigmoid logit to a
//! chosen spatial layer, weight each channel by the spatial mean of its
//! gradient, combine, rectify, upsample to input resolution, and normalise
//! by the slice maximum.
//!
//! Run with `cargo run --example gradcam_saliency`.

use locvalid::io::synth::{self, SynthConfig};
use locvalid::model::{train_toy, BackboneConfig, FusionStrategy, Plane, TrainConfig};
use locvalid::saliency::{gradcam, GradCamLayer};
use locvalid::Result;

fn ascii(map: &locvalid::saliency::SaliencyMap) -> String {
    let shades = [' ', '.', ':', '+', '*', '#'];
    let mut out = String::new();
    for y in 0..map.height() {
        for x in 0..map.width() {
            let v = map.get(y, x);
            let idx = ((v * (shades.len() - 1) as f64).round() as usize).min(shades.len() - 1);
            out.push(shades[idx]);
        }
        out.push('\n');
    }
    out
}

fn main() -> Result<()> {
    let data_cfg = SynthConfig {
        seed: 9,
        n_cases: 16,
        slices_min: 4,
        slices_max: 4,
        height: 24,
        width: 24,
        radius_min: 4,
        radius_max: 5,
        intensity: 6.0,
        noise_sigma: 0.4,
        positive_fraction: 0.5,
    };
    let dataset = synth::generate_synthetic(&data_cfg)?;
    let cases: Vec<_> = dataset.cases.iter().map(|c| c.planes.clone()).collect();
    let labels = dataset.labels();

    let train_cfg = TrainConfig {
        epochs: 8,
        lr: 3e-3,
        seed: 2,
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
    let model = outcome
        .model
        .as_single()
        .expect("single-plane strategy yields a single-plane model");

    // Pick the first positive case and its first annotated slice.
    let case = dataset.cases.iter().find(|c| c.label).expect("positives exist");
    let ann = case.annotation_for(Plane::Axial);
    let slice = ann.annotated_slices().next().expect("positive case is annotated");
    let volume = case.planes.get(Plane::Axial);
    println!(
        "{}: prob {:.3}, lesion box on slice {slice}: {:?}",
        case.case_id,
        model.predict(volume)?,
        ann.boxes_for(slice)[0]
    );

    let map = gradcam(model, volume, slice, GradCamLayer::Last)?;
    println!("\nlast-layer map (normalised to the slice maximum):");
    print!("{}", ascii(&map));
    let (py, px) = map.argmax();
    println!("peak at (y={py}, x={px})");

    // Earlier stages trade class specificity for spatial resolution.
    let fine = gradcam(model, volume, slice, GradCamLayer::Stage(0))?;
    println!("\nstage-0 map of the same slice:");
    print!("{}", ascii(&fine));

    let max = map.data().iter().cloned().fold(f64::MIN, f64::max);
    assert!(
        max == 1.0 || map.data().iter().all(|&v| v == 0.0),
        "per-slice normalisation puts the peak at exactly 1"
    );
    Ok(())
}
