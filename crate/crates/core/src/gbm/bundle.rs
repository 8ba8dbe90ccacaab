//! Exclusive feature bundling: features that are (almost) never non-zero on
//! the same row share one histogram column.

use serde::{Deserialize, Serialize};

use crate::features::FeatureMatrix;

use super::bins::BinMapper;

/// A set of mutually (near-)exclusive features. Member `i` occupies group
/// bins `offsets[i] .. offsets[i] + total_bins(member)`; group bin 0 means
/// every member is zero on that row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureBundle {
    pub members: Vec<usize>,
    pub offsets: Vec<usize>,
    /// Sum over members of the rows each shares with the members before it.
    pub conflicts: usize,
}

impl FeatureBundle {
    pub fn single(feature: usize) -> FeatureBundle {
        FeatureBundle {
            members: vec![feature],
            offsets: vec![0],
            conflicts: 0,
        }
    }
}

/// Missing counts as non-zero: it needs its own slot in the bundle.
fn non_zero_rows(matrix: &FeatureMatrix, feature: usize) -> Vec<usize> {
    (0..matrix.n_rows())
        .filter(|&r| !matches!(matrix.get(r, feature), Some(v) if v == 0.0))
        .collect()
}

/// Rows where both features are non-zero.
pub fn conflict_count(matrix: &FeatureMatrix, a: usize, b: usize) -> usize {
    let rows_a = non_zero_rows(matrix, a);
    rows_a
        .into_iter()
        .filter(|&r| !matches!(matrix.get(r, b), Some(v) if v == 0.0))
        .count()
}

/// Greedy bundling. Features are visited by non-zero count (descending,
/// ties by index); each joins the first bundle whose accumulated conflict
/// count stays within `max_conflict`, otherwise it opens a new bundle.
pub fn efb_bundle(
    matrix: &FeatureMatrix,
    mapper: &BinMapper,
    max_conflict: usize,
) -> Vec<FeatureBundle> {
    let n_rows = matrix.n_rows();
    let non_zero: Vec<Vec<usize>> = (0..matrix.n_features())
        .map(|f| non_zero_rows(matrix, f))
        .collect();
    let mut order: Vec<usize> = (0..matrix.n_features()).collect();
    order.sort_by(|&a, &b| non_zero[b].len().cmp(&non_zero[a].len()).then(a.cmp(&b)));

    struct Open {
        members: Vec<usize>,
        used: Vec<bool>,
        used_count: usize,
        conflicts: usize,
    }
    let mut open: Vec<Open> = Vec::new();
    for f in order {
        let rows = &non_zero[f];
        let mut placed = false;
        for bundle in open.iter_mut() {
            // pigeonhole lower bound on the overlap
            let lower = (rows.len() + bundle.used_count).saturating_sub(n_rows);
            if bundle.conflicts + lower > max_conflict {
                continue;
            }
            let overlap = rows.iter().filter(|&&r| bundle.used[r]).count();
            if bundle.conflicts + overlap <= max_conflict {
                for &r in rows {
                    if !bundle.used[r] {
                        bundle.used[r] = true;
                        bundle.used_count += 1;
                    }
                }
                bundle.conflicts += overlap;
                bundle.members.push(f);
                placed = true;
                break;
            }
        }
        if !placed {
            let mut used = vec![false; n_rows];
            for &r in rows {
                used[r] = true;
            }
            open.push(Open {
                members: vec![f],
                used,
                used_count: rows.len(),
                conflicts: 0,
            });
        }
    }
    open.into_iter()
        .map(|b| {
            if b.members.len() == 1 {
                return FeatureBundle::single(b.members[0]);
            }
            let mut offsets = Vec::with_capacity(b.members.len());
            let mut next = 1;
            for &f in &b.members {
                offsets.push(next);
                next += mapper.total_bins(f);
            }
            FeatureBundle {
                members: b.members,
                offsets,
                conflicts: b.conflicts,
            }
        })
        .collect()
}
