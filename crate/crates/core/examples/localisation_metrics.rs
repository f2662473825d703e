//! The localisation metric family on a hand-checkable 10x10 slice.
//!
//! A saliency map activates six pixels; the annotation covers a 3x3 box.
//! Four activated pixels fall inside the box, two outside, so every metric
//! can be verified by counting squares on paper.
//!
//! Run with `cargo run --example localisation_metrics`.

use locvalid::metrics::{self, AnnotationSet, BoundingBox, MetricKind};
use locvalid::saliency::SaliencyMap;
use locvalid::Result;

fn main() -> Result<()> {
    // Saliency: strong inside the box around (4,4), two stray activations.
    let mut data = vec![0.05; 100];
    for (y, x, v) in [
        (3usize, 3usize, 0.95),
        (3, 4, 0.90),
        (4, 3, 0.85),
        (4, 4, 1.00),
        (7, 8, 0.70), // stray
        (0, 9, 0.65), // stray
    ] {
        data[y * 10 + x] = v;
    }
    let saliency = SaliencyMap::new(10, 10, data)?;

    let mut ann = AnnotationSet::new();
    ann.add(0, BoundingBox::new(3, 3, 5, 5, "lesion")?);
    let mask = metrics::rasterize(&ann, 0, 10, 10, Some("lesion"))?;
    println!("annotation mask covers {} pixels (3x3 box)", mask.count());

    let score = metrics::score_slice(&saliency, &mask, 0.6, 0)?;
    println!("threshold 0.6 activates 6 pixels, 4 inside the box:");
    for kind in MetricKind::ALL {
        println!("  {:>5} = {:.4}", kind.as_str(), score.get(kind));
    }

    // Paper arithmetic: LA covers 4 of 9 box pixels; FPP is 2 strays over
    // 100 pixels; PLA = max(LA - FPP, 0); IoU = 4/(6+9-4); Dice = 2*4/(6+9).
    assert!((score.la - 4.0 / 9.0).abs() < 1e-12);
    assert!((score.fpp - 2.0 / 100.0).abs() < 1e-12);
    assert!((score.pla - (4.0 / 9.0 - 2.0 / 100.0)).abs() < 1e-12);
    assert!((score.iou - 4.0 / 11.0).abs() < 1e-12);
    assert!((score.dice - 8.0 / 15.0).abs() < 1e-12);
    println!("all five threshold metrics match the hand counts");
    println!("rank AUC of saliency vs box membership: {:.4}", score.auc);

    // The aggregation step: fraction of cases whose score clears k, swept
    // over k. Eleven of twelve example scores sit above 0.85, so accuracy
    // holds at 11/12 until k crosses the lowest of them.
    let scores = [
        0.98, 0.97, 0.96, 0.95, 0.94, 0.93, 0.92, 0.91, 0.90, 0.88, 0.86, 0.40,
    ];
    let ks: Vec<f64> = (0..10).map(|i| 0.5 + 0.05 * i as f64).collect();
    let curve = metrics::aggregate_accuracy(&scores, &ks)?;
    println!("\naccuracy above k:");
    for (k, acc) in &curve {
        println!("  k = {k:.2}  accuracy = {:.3}", acc);
    }
    let (count, rate) = metrics::feature_detection_rate(&scores, 0.6)?;
    println!("detected above 0.6: {count}/12 = {rate:.3}");
    Ok(())
}
