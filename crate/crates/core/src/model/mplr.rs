//! Logistic regression over per-plane probabilities (fusion strategy III).
//!
//! Plain full-batch gradient descent on the mean logistic loss, run until
//! the gradient's infinity norm drops below 1e-8 or 100 000 iterations pass.
//! The problem is three-dimensional and the features are probabilities, so
//! a fixed step size is stable and nothing fancier is warranted.

use crate::error::{Error, Result};
use crate::ops::sigmoid_scalar;

const STEP: f64 = 1.0;
const TOLERANCE: f64 = 1e-8;
const MAX_ITERS: usize = 100_000;

/// Fitted weights: one per plane, plus a bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LrWeights {
    pub weights: [f64; 3],
    pub bias: f64,
}

/// Fit the regression on per-plane probability triples.
pub fn mplr_fit(probs: &[[f64; 3]], labels: &[bool]) -> Result<LrWeights> {
    if probs.len() != labels.len() {
        return Err(Error::dim(format!(
            "{} probability rows vs {} labels",
            probs.len(),
            labels.len()
        )));
    }
    if probs.len() < 2
        || labels.iter().all(|&l| l)
        || labels.iter().all(|&l| !l)
    {
        return Err(Error::DegenerateFit(
            "logistic fit needs at least two samples with both classes".to_string(),
        ));
    }
    let n = probs.len() as f64;
    let mut w = [0.0f64; 3];
    let mut b = 0.0f64;
    for _ in 0..MAX_ITERS {
        let mut gw = [0.0f64; 3];
        let mut gb = 0.0f64;
        for (x, &y) in probs.iter().zip(labels) {
            let z = w[0] * x[0] + w[1] * x[1] + w[2] * x[2] + b;
            let err = sigmoid_scalar(z) - f64::from(u8::from(y));
            for j in 0..3 {
                gw[j] += err * x[j];
            }
            gb += err;
        }
        for g in &mut gw {
            *g /= n;
        }
        gb /= n;
        let grad_max = gw
            .iter()
            .chain(std::iter::once(&gb))
            .fold(0.0f64, |m, g| m.max(g.abs()));
        if grad_max < TOLERANCE {
            break;
        }
        for j in 0..3 {
            w[j] -= STEP * gw[j];
        }
        b -= STEP * gb;
    }
    Ok(LrWeights { weights: w, bias: b })
}

/// Probability from a fitted regression and one probability triple.
pub fn mplr_predict(lr: &LrWeights, probs: &[f64; 3]) -> f64 {
    let z = lr.weights[0] * probs[0] + lr.weights[1] * probs[1] + lr.weights[2] * probs[2] + lr.bias;
    sigmoid_scalar(z)
}
