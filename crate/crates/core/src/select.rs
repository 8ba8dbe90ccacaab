//! Embedded feature selection: rank features by a booster's gain importance
//! and keep a subset.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::gbm::{self, ImportanceKind, ImportanceReport, TrainConfig};
use crate::tabular::write_text;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    TopK(usize),
    MinImportance(f64),
}

impl Criterion {
    pub fn validate(&self, n_features: usize) -> Result<()> {
        match *self {
            Criterion::TopK(0) => Err(Error::InvalidArgument("top_k must be positive".into())),
            Criterion::TopK(k) if k > n_features => Err(Error::InvalidArgument(format!(
                "top_k = {k} exceeds the {n_features} available features"
            ))),
            Criterion::MinImportance(t) if !(t >= 0.0) => Err(Error::InvalidArgument(format!(
                "min_importance must be >= 0, got {t}"
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Kept names, most important first.
    pub kept: Vec<String>,
    pub dropped: Vec<String>,
    pub report: ImportanceReport,
    pub criterion: Criterion,
}

/// Splits a ranked report according to `criterion`.
pub fn apply_criterion(report: ImportanceReport, criterion: Criterion) -> Result<SelectionResult> {
    criterion.validate(report.entries.len())?;
    let n_kept = match criterion {
        Criterion::TopK(k) => k,
        Criterion::MinImportance(t) => report
            .entries
            .iter()
            .take_while(|(_, v)| *v >= t && !(t > 0.0 && *v <= 0.0))
            .count(),
    };
    let names = report.entries.iter().map(|(n, _)| n.clone());
    let kept = names.clone().take(n_kept).collect();
    let dropped = names.skip(n_kept).collect();
    Ok(SelectionResult {
        kept,
        dropped,
        report,
        criterion,
    })
}

/// Trains `config` on the full matrix and keeps features by gain importance.
pub fn select_features(
    matrix: &FeatureMatrix,
    y: &[f64],
    config: &TrainConfig,
    criterion: Criterion,
) -> Result<SelectionResult> {
    if matrix.n_rows() == 0 || matrix.n_features() == 0 {
        return Err(Error::Empty("selection needs a non-empty matrix".into()));
    }
    criterion.validate(matrix.n_features())?;
    let model = gbm::train(matrix, y, config)?;
    apply_criterion(model.feature_importance(ImportanceKind::Gain), criterion)
}

/// Restricts `matrix` to the kept features, in rank order.
pub fn project(matrix: &FeatureMatrix, result: &SelectionResult) -> Result<FeatureMatrix> {
    if result.kept.is_empty() {
        return Err(Error::InvalidArgument("selection kept no features".into()));
    }
    matrix.select_features(&result.kept)
}

/// One `rank<TAB>name<TAB>importance` line per feature, kept ones first.
pub fn render_selection(result: &SelectionResult) -> String {
    let mut out = String::from("rank\tfeature\timportance\tkept\n");
    for (i, (name, value)) in result.report.entries.iter().enumerate() {
        let kept = i < result.kept.len();
        let _ = writeln!(out, "{}\t{name}\t{value}\t{kept}", i + 1);
    }
    out
}

pub fn write_selection(result: &SelectionResult, path: &Path) -> Result<()> {
    write_text(path, &render_selection(result))
}
