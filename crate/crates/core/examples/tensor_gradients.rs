//! Record a small network on the tape, backpropagate, and confirm one of the
//! gradients against a central finite difference.
//!
//! Run with `cargo run --example tensor_gradients`.

use locvalid::{Graph, Result, Tensor};

/// Forward pass used both for the recorded graph and the probed reruns:
/// conv3x3 -> relu -> global average pool -> linear -> sigmoid.
fn forward(g: &mut Graph, input: &Tensor, kernel: &Tensor, w: &Tensor) -> Result<(f64, Vec<f64>)> {
    let x = g.leaf(input.clone());
    let k = g.leaf(kernel.clone());
    let kb = g.leaf(Tensor::zeros(vec![2])?);
    let conv = g.conv3x3(x, k, kb, 1)?;
    let act = g.relu(conv)?;
    let pooled = g.global_avg_pool(act)?;
    let wn = g.leaf(w.clone());
    let wb = g.leaf(Tensor::zeros(vec![1])?);
    let logit = g.linear(pooled, wn, wb)?;
    let prob = g.sigmoid(logit)?;
    let loss = g.weighted_bce(prob, 1.0, 1.0)?;
    g.backward(loss)?;
    let grad_k = g.grad(k)?.expect("kernel reachable from loss");
    Ok((g.value(loss)?.item()?, grad_k.data().to_vec()))
}

fn main() -> Result<()> {
    // One 6x6 slice, one input channel, two conv channels.
    let input = Tensor::from_vec(
        vec![1, 1, 6, 6],
        (0..36).map(|i| ((i * 7) % 11) as f64 / 11.0 - 0.5).collect(),
    )?;
    let kernel = Tensor::from_vec(
        vec![2, 1, 3, 3],
        (0..18).map(|i| ((i * 5) % 13) as f64 / 13.0 - 0.5).collect(),
    )?;
    let w = Tensor::from_vec(vec![1, 2], vec![0.8, -0.6])?;

    let mut g = Graph::new();
    let (loss, grad) = forward(&mut g, &input, &kernel, &w)?;
    println!("loss = {loss:.6}");
    println!("d loss / d kernel[0] = {:+.6} (reverse mode)", grad[0]);

    // Central finite difference on the same coordinate.
    let eps = 1e-6;
    let mut bumped = kernel.clone();
    bumped.data_mut()[0] += eps;
    let (up, _) = forward(&mut Graph::new(), &input, &bumped, &w)?;
    bumped.data_mut()[0] -= 2.0 * eps;
    let (down, _) = forward(&mut Graph::new(), &input, &bumped, &w)?;
    let fd = (up - down) / (2.0 * eps);
    println!("d loss / d kernel[0] = {fd:+.6} (finite difference)");

    let rel = (grad[0] - fd).abs() / grad[0].abs().max(fd.abs()).max(1e-12);
    println!("relative error {rel:.2e}");
    assert!(rel < 1e-4, "autodiff disagrees with the finite difference");
    println!("tape length: {} nodes", g.len());
    Ok(())
}
