//! Quantile discretization of feature columns.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

use super::bundle::FeatureBundle;

/// Per-feature bin upper bounds. A feature with `k` bounds has `k + 1`
/// finite bins; bin `b` holds values in `(bounds[b-1], bounds[b]]` and the
/// last finite bin is unbounded above. Missing values get the reserved bin
/// right after the finite ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinMapper {
    pub max_bins: usize,
    pub bounds: Vec<Vec<f64>>,
}

/// Bounds for one column: one bin per distinct value when they fit, else
/// near-equal-population bins.
fn feature_bounds(mut values: Vec<f64>, finite_bins: usize) -> Vec<f64> {
    if values.is_empty() {
        return Vec::new();
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let mut distinct: Vec<(f64, usize)> = Vec::new();
    for v in values.iter().copied() {
        match distinct.last_mut() {
            Some((last, count)) if *last == v => *count += 1,
            _ => distinct.push((v, 1)),
        }
    }
    let cut = |lo: f64, hi: f64| {
        let mid = lo + (hi - lo) / 2.0;
        if mid < hi && mid >= lo {
            mid
        } else {
            lo
        }
    };
    if distinct.len() <= finite_bins {
        return distinct.windows(2).map(|w| cut(w[0].0, w[1].0)).collect();
    }
    let n = values.len();
    let target = |k: usize| ((k + 1) * n).div_ceil(finite_bins);
    let mut bounds = Vec::with_capacity(finite_bins - 1);
    let mut cumulative = 0;
    let mut k = 0;
    for w in distinct.windows(2) {
        if bounds.len() + 1 >= finite_bins {
            break;
        }
        cumulative += w[0].1;
        if cumulative >= target(k) {
            bounds.push(cut(w[0].0, w[1].0));
            while k + 1 < finite_bins && target(k) <= cumulative {
                k += 1;
            }
        }
    }
    bounds
}

impl BinMapper {
    pub fn fit(matrix: &FeatureMatrix, max_bins: usize) -> Result<BinMapper> {
        if !(2..=u16::MAX as usize).contains(&max_bins) {
            return Err(Error::InvalidArgument(format!(
                "max_bins must be in 2..=65535, got {max_bins}"
            )));
        }
        let bounds = (0..matrix.n_features())
            .map(|f| {
                feature_bounds(
                    matrix.column(f).into_iter().flatten().collect(),
                    max_bins - 1,
                )
            })
            .collect();
        Ok(BinMapper { max_bins, bounds })
    }

    pub fn n_features(&self) -> usize {
        self.bounds.len()
    }

    pub fn finite_bins(&self, feature: usize) -> usize {
        self.bounds[feature].len() + 1
    }

    /// Finite bins plus the missing bin.
    pub fn total_bins(&self, feature: usize) -> usize {
        self.finite_bins(feature) + 1
    }

    pub fn missing_bin(&self, feature: usize) -> usize {
        self.finite_bins(feature)
    }

    pub fn bin(&self, feature: usize, value: Option<f64>) -> usize {
        match value {
            Some(v) => self.bounds[feature].partition_point(|ub| *ub < v),
            None => self.missing_bin(feature),
        }
    }

    /// Value threshold equivalent to "bin <= b".
    pub fn threshold(&self, feature: usize, bin: usize) -> f64 {
        self.bounds[feature].get(bin).copied().unwrap_or(f64::MAX)
    }
}

/// Storage unit for histogram construction: either one feature's raw bins
/// or an exclusive bundle of several features.
#[derive(Debug, Clone)]
pub(crate) struct FeatureGroup {
    pub members: Vec<usize>,
    /// First group bin of each member (bundles only; bin 0 means "all zero").
    pub offsets: Vec<usize>,
    pub n_bins: usize,
    /// Group bin per row for bundles; raw groups read the feature bins.
    pub bins: Option<Vec<u32>>,
}

/// Training rows discretized by a [`BinMapper`], optionally bundled.
#[derive(Debug, Clone)]
pub struct BinnedData {
    n_rows: usize,
    pub(crate) feature_bins: Vec<Vec<u16>>,
    pub(crate) total_bins: Vec<usize>,
    /// Bin that 0.0 falls into, per feature.
    pub(crate) zero_bins: Vec<usize>,
    pub(crate) groups: Vec<FeatureGroup>,
    /// (group index, position within group) per feature.
    pub(crate) feature_group: Vec<(usize, usize)>,
}

impl BinnedData {
    pub fn new(
        matrix: &FeatureMatrix,
        mapper: &BinMapper,
        bundles: Option<&[FeatureBundle]>,
    ) -> Result<BinnedData> {
        if mapper.n_features() != matrix.n_features() {
            return Err(Error::FeatureMismatch(format!(
                "bin mapper has {} features, matrix has {}",
                mapper.n_features(),
                matrix.n_features()
            )));
        }
        let n_rows = matrix.n_rows();
        let n_features = matrix.n_features();
        let feature_bins: Vec<Vec<u16>> = (0..n_features)
            .map(|f| {
                (0..n_rows)
                    .map(|r| mapper.bin(f, matrix.get(r, f)) as u16)
                    .collect()
            })
            .collect();
        let total_bins: Vec<usize> = (0..n_features).map(|f| mapper.total_bins(f)).collect();
        let zero_bins: Vec<usize> = (0..n_features).map(|f| mapper.bin(f, Some(0.0))).collect();

        let singletons: Vec<FeatureBundle>;
        let bundles = match bundles {
            Some(b) => b,
            None => {
                singletons = (0..n_features).map(FeatureBundle::single).collect();
                &singletons
            }
        };
        let mut feature_group = vec![(usize::MAX, 0); n_features];
        let mut groups = Vec::with_capacity(bundles.len());
        for (g, bundle) in bundles.iter().enumerate() {
            for (pos, &f) in bundle.members.iter().enumerate() {
                if f >= n_features || feature_group[f].0 != usize::MAX {
                    return Err(Error::InvalidArgument(format!(
                        "bundle member {f} invalid or repeated"
                    )));
                }
                feature_group[f] = (g, pos);
            }
            if bundle.members.len() == 1 {
                let f = bundle.members[0];
                groups.push(FeatureGroup {
                    members: vec![f],
                    offsets: vec![0],
                    n_bins: total_bins[f],
                    bins: None,
                });
                continue;
            }
            let offsets = bundle.offsets.clone();
            let next = bundle
                .members
                .iter()
                .zip(&offsets)
                .map(|(&f, &off)| off + total_bins[f])
                .max()
                .unwrap_or(1);
            if offsets.len() != bundle.members.len() || offsets.iter().any(|&o| o == 0) {
                return Err(Error::InvalidArgument(
                    "bundle offsets must be non-zero, one per member".into(),
                ));
            }
            let bins = (0..n_rows)
                .map(|r| {
                    bundle
                        .members
                        .iter()
                        .zip(&offsets)
                        .find(|(&f, _)| !matches!(matrix.get(r, f), Some(v) if v == 0.0))
                        .map_or(0, |(&f, &off)| (off + feature_bins[f][r] as usize) as u32)
                })
                .collect();
            groups.push(FeatureGroup {
                members: bundle.members.clone(),
                offsets,
                n_bins: next,
                bins: Some(bins),
            });
        }
        if let Some(f) = feature_group.iter().position(|g| g.0 == usize::MAX) {
            return Err(Error::InvalidArgument(format!(
                "feature {f} is not covered by any bundle"
            )));
        }
        Ok(BinnedData {
            n_rows,
            feature_bins,
            total_bins,
            zero_bins,
            groups,
            feature_group,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.feature_bins.len()
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn bin(&self, row: usize, feature: usize) -> usize {
        self.feature_bins[feature][row] as usize
    }

    pub fn missing_bin(&self, feature: usize) -> usize {
        self.total_bins[feature] - 1
    }
}
