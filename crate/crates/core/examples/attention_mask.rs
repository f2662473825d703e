//! The spatial attention block, before and after it learns anything.
//!
//! A freshly initialised block (zero conv weights) is exactly the identity:
//! the per-map softmax is uniform and dividing by its own maximum gives a
//! mask of ones. A block with a non-trivial 1x1 conv concentrates the mask
//! on the locations its conv scores highest.
//!
//! Run with `cargo run --example attention_mask`.

use locvalid::attention::AttentionBlock;
use locvalid::{Result, Tensor};

fn print_map(label: &str, t: &Tensor, slice: usize, channel: usize) {
    let (h, w) = (t.shape()[2], t.shape()[3]);
    println!("{label}:");
    for y in 0..h {
        let row: Vec<String> = (0..w)
            .map(|x| format!("{:5.2}", t.at4(slice, channel, y, x)))
            .collect();
        println!("  {}", row.join(" "));
    }
}

fn main() -> Result<()> {
    // Two feature maps over a 5x5 grid; channel 0 has a bright spot at (1,3).
    let mut data = vec![0.1; 2 * 25];
    data[5 + 3] = 2.0; // channel 0, y=1, x=3
    data[25 + 12] = 0.4; // channel 1, center
    let features = Tensor::from_vec(vec![1, 2, 5, 5], data)?;

    let identity = AttentionBlock::identity(2)?;
    let passed = identity.forward(&features)?;
    assert_eq!(passed.data(), features.data(), "zero-init block must be a no-op");
    println!("zero-init block: output is bit-for-bit identical to its input");

    let mask = identity.mask(&features)?;
    let ones = mask.iter().all(|&v| v == 1.0);
    println!("zero-init mask is all ones: {ones}");

    // A hand-built 1x1 conv (weight layout [out_channel, in_channel]) that
    // scores every location by 3x its channel-0 value. The softmax then
    // concentrates on the bright spot and the max-normalised mask is 1.0
    // there and smaller everywhere else.
    let weight = Tensor::from_vec(vec![2, 2], vec![3.0, 0.0, 3.0, 0.0])?;
    let bias = Tensor::zeros(vec![2])?;
    let focused = AttentionBlock::from_params(weight, bias)?;
    let mask = focused.mask(&features)?;
    print_map("focused mask, channel 0", &mask, 0, 0);

    let peak = (0..25).fold((0, f64::MIN), |best, i| {
        let v = mask.data()[i];
        if v > best.1 { (i, v) } else { best }
    });
    println!(
        "mask peak {:.3} at (y={}, x={}); input bright spot is at (y=1, x=3)",
        peak.1,
        peak.0 / 5,
        peak.0 % 5
    );
    assert_eq!(peak.0, 8, "mask must peak where the conv scores highest");
    assert_eq!(peak.1, 1.0, "max-normalised mask peaks at exactly one");
    Ok(())
}
