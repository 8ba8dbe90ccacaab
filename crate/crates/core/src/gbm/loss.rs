use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// First and second derivative of the loss at one row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradPair {
    pub g: f64,
    pub h: f64,
}

/// Derivatives of `0.5 * (pred - y)^2`.
pub fn grad_hess_squared(y: &[f64], pred: &[f64]) -> Result<Vec<GradPair>> {
    if y.len() != pred.len() {
        return Err(Error::LengthMismatch {
            left: y.len(),
            right: pred.len(),
        });
    }
    Ok(y.iter()
        .zip(pred)
        .map(|(t, p)| GradPair { g: p - t, h: 1.0 })
        .collect())
}

/// Optimal leaf value `-G / (H + lambda)`.
pub fn leaf_weight(grad_sum: f64, hess_sum: f64, lambda: f64) -> Result<f64> {
    let denom = hess_sum + lambda;
    if denom <= 0.0 || denom.is_nan() {
        return Err(Error::DegenerateLeaf {
            hess: hess_sum,
            lambda,
        });
    }
    Ok(-grad_sum / denom)
}

/// Structure-score improvement of splitting a node into (L, R), minus the
/// per-leaf penalty `gamma`.
pub fn split_gain(gl: f64, hl: f64, gr: f64, hr: f64, lambda: f64, gamma: f64) -> f64 {
    let parent = gl + gr;
    0.5 * (gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - parent * parent / (hl + hr + lambda))
        - gamma
}
