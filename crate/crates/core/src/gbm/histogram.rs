//! Gradient histograms and split search.
//!
//! Gradient and hessian sums are accumulated as fixed-point integers with a
//! power-of-two scale chosen per boosting round, so histogram arithmetic is
//! exact: accumulation order does not matter, a sibling histogram obtained
//! by subtraction equals the directly built one, and bundled histograms
//! unpack to exactly the per-feature ones.

use std::ops::{Add, AddAssign, Sub};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::bins::BinnedData;
use super::loss::{split_gain, GradPair};

/// Headroom kept below `i64::MAX` when picking the fixed-point scale.
const SUM_BITS: i32 = 61;

fn pow2(exp: i32) -> f64 {
    f64::from_bits(((exp.clamp(-1022, 1023) + 1023) as u64) << 52)
}

/// Binary exponent `e` with `2^e <= x < 2^(e+1)` for normal positive `x`.
fn exponent_of(x: f64) -> i32 {
    ((x.to_bits() >> 52) & 0x7ff) as i32 - 1023
}

/// Scale exponent so that `rows * max_abs * 2^scale < 2^SUM_BITS`.
fn pick_scale(max_abs: f64, rows: usize) -> i32 {
    let bound = max_abs * rows.max(1) as f64;
    if bound == 0.0 || !bound.is_normal() {
        return 0;
    }
    (SUM_BITS - 1 - exponent_of(bound)).clamp(-1000, 1000)
}

/// Per-row gradients of the rows in play this round, in fixed point.
#[derive(Debug, Clone)]
pub struct QuantizedGrads {
    pub(crate) grad: Vec<i64>,
    pub(crate) hess: Vec<i64>,
    grad_scale: i32,
    hess_scale: i32,
}

impl QuantizedGrads {
    /// `rows` are the sampled rows and `weights` their multipliers (one per
    /// row in `rows`); rows outside the sample get zero.
    pub fn new(
        grads: &[GradPair],
        rows: &[u32],
        weights: Option<&[f64]>,
    ) -> Result<QuantizedGrads> {
        let weight = |i: usize| weights.map_or(1.0, |w| w[i]);
        let mut max_g: f64 = 0.0;
        let mut max_h: f64 = 0.0;
        for (i, &r) in rows.iter().enumerate() {
            let p = grads[r as usize];
            let (g, h) = (p.g * weight(i), p.h * weight(i));
            if !g.is_finite() || !h.is_finite() {
                return Err(Error::NonFinite(format!("gradient at row {r}")));
            }
            max_g = max_g.max(g.abs());
            max_h = max_h.max(h.abs());
        }
        let grad_scale = pick_scale(max_g, rows.len());
        let hess_scale = pick_scale(max_h, rows.len());
        let (gs, hs) = (pow2(grad_scale), pow2(hess_scale));
        let mut grad = vec![0i64; grads.len()];
        let mut hess = vec![0i64; grads.len()];
        for (i, &r) in rows.iter().enumerate() {
            let p = grads[r as usize];
            grad[r as usize] = (p.g * weight(i) * gs).round() as i64;
            hess[r as usize] = (p.h * weight(i) * hs).round() as i64;
        }
        Ok(QuantizedGrads {
            grad,
            hess,
            grad_scale,
            hess_scale,
        })
    }

    pub fn grad_value(&self, raw: i64) -> f64 {
        raw as f64 * pow2(-self.grad_scale)
    }

    pub fn hess_value(&self, raw: i64) -> f64 {
        raw as f64 * pow2(-self.hess_scale)
    }

    pub fn sum_rows(&self, rows: &[u32]) -> BinSum {
        let mut s = BinSum::default();
        for &r in rows {
            s.push(self, r as usize);
        }
        s
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinSum {
    pub grad: i64,
    pub hess: i64,
    pub count: u32,
}

impl BinSum {
    #[inline]
    fn push(&mut self, q: &QuantizedGrads, row: usize) {
        self.grad += q.grad[row];
        self.hess += q.hess[row];
        self.count += 1;
    }
}

impl Add for BinSum {
    type Output = BinSum;
    fn add(self, o: BinSum) -> BinSum {
        BinSum {
            grad: self.grad + o.grad,
            hess: self.hess + o.hess,
            count: self.count + o.count,
        }
    }
}

impl AddAssign for BinSum {
    fn add_assign(&mut self, o: BinSum) {
        *self = *self + o;
    }
}

impl Sub for BinSum {
    type Output = BinSum;
    fn sub(self, o: BinSum) -> BinSum {
        BinSum {
            grad: self.grad - o.grad,
            hess: self.hess - o.hess,
            count: self.count - o.count,
        }
    }
}

/// Per-group bin sums for one tree node, plus the node total.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Histogram {
    pub(crate) groups: Vec<Vec<BinSum>>,
    pub total: BinSum,
}

impl Histogram {
    /// Accumulates the rows of one node. Rows are visited in the given order
    /// within each group; groups are independent and built in parallel.
    pub fn build(data: &BinnedData, rows: &[u32], grads: &QuantizedGrads) -> Histogram {
        let groups = data
            .groups
            .par_iter()
            .map(|group| {
                let mut bins = vec![BinSum::default(); group.n_bins];
                match &group.bins {
                    Some(gb) => {
                        for &r in rows {
                            bins[gb[r as usize] as usize].push(grads, r as usize);
                        }
                    }
                    None => {
                        let fb = &data.feature_bins[group.members[0]];
                        for &r in rows {
                            bins[fb[r as usize] as usize].push(grads, r as usize);
                        }
                    }
                }
                bins
            })
            .collect();
        Histogram {
            groups,
            total: grads.sum_rows(rows),
        }
    }

    /// `self - other`, bin by bin.
    pub fn subtract(&self, other: &Histogram) -> Histogram {
        Histogram {
            groups: self
                .groups
                .iter()
                .zip(&other.groups)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| *x - *y).collect())
                .collect(),
            total: self.total - other.total,
        }
    }

    /// `self + other`, bin by bin.
    pub fn merge(&self, other: &Histogram) -> Histogram {
        Histogram {
            groups: self
                .groups
                .iter()
                .zip(&other.groups)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| *x + *y).collect())
                .collect(),
            total: self.total + other.total,
        }
    }

    /// Histogram of a single original feature (finite bins, then missing).
    pub fn feature(&self, data: &BinnedData, feature: usize) -> Vec<BinSum> {
        let (g, pos) = data.feature_group[feature];
        let group = &data.groups[g];
        let group_hist = &self.groups[g];
        if group.bins.is_none() {
            return group_hist.clone();
        }
        let off = group.offsets[pos];
        let n = data.total_bins[feature];
        let mut out = group_hist[off..off + n].to_vec();
        let stored = out.iter().fold(BinSum::default(), |acc, b| acc + *b);
        out[data.zero_bins[feature]] += self.total - stored;
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SplitParams {
    pub lambda: f64,
    pub gamma: f64,
    pub min_child_hess: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    /// Finite bins `0..=bin` go left.
    pub bin: usize,
    pub default_left: bool,
    pub gain: f64,
    pub left: BinSum,
    pub right: BinSum,
}

fn feature_best(
    hist: &[BinSum],
    feature: usize,
    total: BinSum,
    grads: &QuantizedGrads,
    params: &SplitParams,
) -> Option<Split> {
    let missing = *hist.last()?;
    let finite = &hist[..hist.len() - 1];
    let mut best: Option<Split> = None;
    let mut left_finite = BinSum::default();
    for (bin, sum) in finite.iter().enumerate() {
        left_finite += *sum;
        for default_left in [true, false] {
            let left = if default_left {
                left_finite + missing
            } else {
                left_finite
            };
            let right = total - left;
            if left.count == 0 || right.count == 0 {
                continue;
            }
            let (gl, hl) = (grads.grad_value(left.grad), grads.hess_value(left.hess));
            let (gr, hr) = (grads.grad_value(right.grad), grads.hess_value(right.hess));
            if hl < params.min_child_hess || hr < params.min_child_hess {
                continue;
            }
            let gain = split_gain(gl, hl, gr, hr, params.lambda, params.gamma);
            if gain > best.map_or(0.0, |b| b.gain) {
                best = Some(Split {
                    feature,
                    bin,
                    default_left,
                    gain,
                    left,
                    right,
                });
            }
        }
    }
    best
}

/// Best (feature, bin, default direction) over the allowed features, or
/// `None` when no candidate has positive gain. Ties go to the lower feature
/// index, then the lower bin, then default-left.
pub fn best_split(
    data: &BinnedData,
    hist: &Histogram,
    grads: &QuantizedGrads,
    allowed: &[bool],
    params: &SplitParams,
) -> Option<Split> {
    let per_feature: Vec<Option<Split>> = (0..data.n_features())
        .into_par_iter()
        .map(|f| {
            if !allowed[f] {
                return None;
            }
            feature_best(&hist.feature(data, f), f, hist.total, grads, params)
        })
        .collect();
    per_feature
        .into_iter()
        .flatten()
        .fold(None, |best: Option<Split>, s| match best {
            Some(b) if b.gain >= s.gain => Some(b),
            _ => Some(s),
        })
}
