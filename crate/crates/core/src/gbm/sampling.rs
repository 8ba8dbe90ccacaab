//! Row sampling (GOSS) and per-tree column sampling.

use crate::rng::SplitRng;

use super::loss::GradPair;

/// `ceil(rate * n)` with a small tolerance so that products such as
/// `0.7 * 10` do not round up past the intended count.
pub(crate) fn rate_count(rate: f64, n: usize) -> usize {
    let raw = rate * n as f64 - 1e-9;
    (raw.ceil().max(0.0) as usize).min(n)
}

/// Rows chosen for one boosting round, ascending, each with the factor its
/// gradient and hessian are multiplied by.
#[derive(Debug, Clone, PartialEq)]
pub struct GossSample {
    pub rows: Vec<u32>,
    pub multipliers: Vec<f64>,
}

/// Gradient-based one-side sampling: keep the `ceil(a n)` rows with the
/// largest `|g|` (ties to the lower row index) and draw `ceil(b n)` of the
/// rest uniformly without replacement, amplified by `(1 - a) / b`.
pub fn goss_sample(
    grads: &[GradPair],
    top_rate: f64,
    other_rate: f64,
    rng: &mut SplitRng,
) -> GossSample {
    let n = grads.len();
    let mut order: Vec<u32> = (0..n as u32).collect();
    order.sort_by(|&i, &j| {
        grads[j as usize]
            .g
            .abs()
            .total_cmp(&grads[i as usize].g.abs())
            .then(i.cmp(&j))
    });
    let top = rate_count(top_rate, n);
    let mut chosen: Vec<(u32, f64)> = order[..top].iter().map(|&r| (r, 1.0)).collect();
    if other_rate > 0.0 {
        let rest = &order[top..];
        let draw = rate_count(other_rate, n).min(rest.len());
        let amplify = (1.0 - top_rate) / other_rate;
        chosen.extend(rng.sample(rest, draw).into_iter().map(|r| (r, amplify)));
    }
    chosen.sort_by_key(|&(r, _)| r);
    GossSample {
        rows: chosen.iter().map(|c| c.0).collect(),
        multipliers: chosen.iter().map(|c| c.1).collect(),
    }
}

/// Allowed-feature mask with `ceil(rate * F)` features (at least one).
pub fn column_sample(n_features: usize, rate: f64, rng: &mut SplitRng) -> Vec<bool> {
    let k = rate_count(rate, n_features).max(1).min(n_features);
    if k == n_features {
        return vec![true; n_features];
    }
    let pool: Vec<usize> = (0..n_features).collect();
    let mut mask = vec![false; n_features];
    for f in rng.sample(&pool, k) {
        mask[f] = true;
    }
    mask
}
