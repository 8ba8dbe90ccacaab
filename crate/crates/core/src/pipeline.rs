//! Batch operations behind the command-line verbs.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs::{self, File};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ModelChoice, PipelineConfig};
use crate::error::{Error, Result};
use crate::features::{add_interval_column, assemble_matrix, FeatureMatrix};
use crate::gbm::{self, BoostedModel, ImportanceKind, ImportanceReport, MODEL_FORMAT};
use crate::preprocess::apply_policies;
use crate::select::{self, SelectionResult};
use crate::stack::{
    self, kfold_split, predict_stacking, rmse, CvScores, StackingModel, STACK_FORMAT,
};
use crate::tabular::{deduplicate, load_corpus, write_text, DuplicateKeyPolicy, MultiTableCorpus};

/// Ingest, clean and aggregate the corpus in `corpus_dir`.
pub fn build_matrix(config: &PipelineConfig, corpus_dir: &Path) -> Result<FeatureMatrix> {
    config.validate()?;
    let raw = load_corpus(corpus_dir, &config.schema)?;
    let raw = if config.features.deduplicate {
        let mut out = MultiTableCorpus::new(raw.key_name());
        for table in raw.tables() {
            out.insert(deduplicate(table))?;
        }
        out
    } else {
        raw
    };
    let (cleaned, _) = apply_policies(raw, &config.preprocess)?;
    let mut corpus = MultiTableCorpus::new(cleaned.key_name());
    for table in cleaned.tables() {
        let mut table = table.clone();
        let name = table.name().to_string();
        for spec in config.features.intervals.iter().filter(|s| s.table == name) {
            table = add_interval_column(table, spec)?;
        }
        corpus.insert(table)?;
    }
    assemble_matrix(&corpus, &config.features.plans, &config.features.base_table)
}

/// Reads an `id,score` file.
pub fn read_labels(path: &Path) -> Result<Vec<(String, f64)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != ["id", "score"] {
        return Err(Error::Labels(format!(
            "{}: header must be `id,score`",
            path.display()
        )));
    }
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let id = record.get(0).unwrap_or("").to_string();
        let raw = record.get(1).unwrap_or("");
        let score = raw
            .trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| {
                Error::Labels(format!("row {}: score `{raw}` is not a number", i + 1))
            })?;
        out.push((id, score));
    }
    Ok(out)
}

/// Labels in matrix row order. Every matrix id needs a label and every
/// label needs a matrix row; repeated ids follow `duplicates`.
pub fn align_labels(
    matrix: &FeatureMatrix,
    labels: &[(String, f64)],
    duplicates: DuplicateKeyPolicy,
) -> Result<Vec<f64>> {
    let mut by_id = HashMap::with_capacity(labels.len());
    for (id, v) in labels {
        if by_id.contains_key(id.as_str()) {
            if duplicates == DuplicateKeyPolicy::Reject {
                return Err(Error::Labels(format!("duplicate label for id `{id}`")));
            }
            continue;
        }
        by_id.insert(id.as_str(), *v);
    }
    let in_matrix: HashSet<&str> = matrix.ids().iter().map(String::as_str).collect();
    let offending: Vec<&str> = matrix
        .ids()
        .iter()
        .map(String::as_str)
        .filter(|id| !by_id.contains_key(id))
        .chain(
            labels
                .iter()
                .map(|(id, _)| id.as_str())
                .filter(|id| !in_matrix.contains(id)),
        )
        .collect();
    if !offending.is_empty() {
        let shown: Vec<&str> = offending.iter().take(5).copied().collect();
        return Err(Error::Labels(format!(
            "{} ids do not match between matrix and labels; first: {}",
            offending.len(),
            shown.join(", ")
        )));
    }
    Ok(matrix.ids().iter().map(|id| by_id[id.as_str()]).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    Boosted(BoostedModel),
    Stacking(StackingModel),
}

#[derive(Deserialize)]
struct FormatProbe {
    format: String,
}

impl TrainedModel {
    pub fn load(path: &Path) -> Result<TrainedModel> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let probe: FormatProbe = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Model(format!("{}: {e}", path.display())))?;
        match probe.format.as_str() {
            MODEL_FORMAT => Ok(TrainedModel::Boosted(BoostedModel::from_json(&bytes)?)),
            STACK_FORMAT => Ok(TrainedModel::Stacking(StackingModel::from_json(&bytes)?)),
            other => Err(Error::Model(format!(
                "{}: unknown model format `{other}`",
                path.display()
            ))),
        }
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        match self {
            TrainedModel::Boosted(m) => m.to_json(),
            TrainedModel::Stacking(m) => m.to_json(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn predict(&self, matrix: &FeatureMatrix) -> Result<Vec<f64>> {
        match self {
            TrainedModel::Boosted(m) => m.predict(matrix),
            TrainedModel::Stacking(m) => predict_stacking(m, matrix),
        }
    }

    /// Gain or split-count importance. For a stack, the full-data bases'
    /// importances are summed per feature.
    pub fn importance(&self, kind: ImportanceKind) -> ImportanceReport {
        match self {
            TrainedModel::Boosted(m) => m.feature_importance(kind),
            TrainedModel::Stacking(s) => {
                let mut totals: BTreeMap<String, f64> = BTreeMap::new();
                for m in &s.full_models {
                    for (name, v) in m.feature_importance(kind).entries {
                        *totals.entry(name).or_insert(0.0) += v;
                    }
                }
                ImportanceReport::ranked(kind, totals.into_iter().collect())
            }
        }
    }
}

pub struct TrainSummary {
    pub model: TrainedModel,
    pub train_rmse: f64,
}

pub fn train_model(
    config: &PipelineConfig,
    matrix: &FeatureMatrix,
    y: &[f64],
) -> Result<TrainSummary> {
    match config.models.train {
        choice @ (ModelChoice::Depthwise | ModelChoice::Leafwise) => {
            let out = gbm::train_with_trace(matrix, y, &config.booster(choice))?;
            let train_rmse = rmse(y, &out.train_predictions)?;
            Ok(TrainSummary {
                model: TrainedModel::Boosted(out.model),
                train_rmse,
            })
        }
        ModelChoice::Stacking => {
            let plan = kfold_split(matrix.n_rows(), config.cv.k, config.seed)?;
            let model =
                stack::fit_stacking(matrix, y, &config.stack_bases(), &plan, &config.ridge)?;
            let train_rmse = rmse(y, &predict_stacking(&model, matrix)?)?;
            Ok(TrainSummary {
                model: TrainedModel::Stacking(model),
                train_rmse,
            })
        }
    }
}

pub fn run_selection(
    config: &PipelineConfig,
    matrix: &FeatureMatrix,
    y: &[f64],
) -> Result<SelectionResult> {
    select::select_features(
        matrix,
        y,
        &config.selection_booster(),
        config.selection.criterion,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSetInfo {
    pub name: String,
    pub n_features: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    /// One entry per feature set, in `feature_sets` order.
    pub scores: Vec<CvScores>,
}

/// Model-by-feature-set grid of cross-validated RMSE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub metric: String,
    /// Every cell is the mean RMSE over the held-out folds.
    pub score: String,
    pub k: usize,
    pub seed: u64,
    pub n_rows: usize,
    pub feature_sets: Vec<FeatureSetInfo>,
    pub rows: Vec<ReportRow>,
    /// SHA-256 of the canonical JSON of each configuration block.
    pub fingerprints: BTreeMap<String, String>,
    pub selected_features: Vec<String>,
}

fn fingerprint<T: Serialize>(value: &T) -> Result<String> {
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(value)?)))
}

pub fn evaluate(
    config: &PipelineConfig,
    matrix: &FeatureMatrix,
    y: &[f64],
) -> Result<EvaluationReport> {
    let selection = run_selection(config, matrix, y)?;
    let selected = select::project(matrix, &selection)?;
    let plan = kfold_split(matrix.n_rows(), config.cv.k, config.seed)?;
    let bases = config.stack_bases();
    let mut per_set = Vec::new();
    for m in [matrix, &selected] {
        let oof = stack::oof_predictions(m, y, &bases, &plan)?;
        per_set.push(stack::score_oof(&oof, y, &plan, &config.ridge)?);
    }
    let cell = |row: usize| -> Vec<CvScores> {
        per_set
            .iter()
            .map(|s| {
                if row < bases.len() {
                    s.bases[row].clone()
                } else {
                    s.stacking.clone()
                }
            })
            .collect()
    };
    let rows = ["depthwise", "leafwise", "stacking"]
        .iter()
        .enumerate()
        .map(|(i, name)| ReportRow {
            model: name.to_string(),
            scores: cell(i),
        })
        .collect();
    let fingerprints = BTreeMap::from([
        ("depthwise".to_string(), fingerprint(&bases[0])?),
        ("leafwise".to_string(), fingerprint(&bases[1])?),
        (
            "selection".to_string(),
            fingerprint(&(&config.selection_booster(), &config.selection.criterion))?,
        ),
        ("ridge".to_string(), fingerprint(&config.ridge)?),
    ]);
    Ok(EvaluationReport {
        metric: "rmse".into(),
        score: format!("mean over {} cross-validation folds", config.cv.k),
        k: config.cv.k,
        seed: config.seed,
        n_rows: matrix.n_rows(),
        feature_sets: vec![
            FeatureSetInfo {
                name: "all_features".into(),
                n_features: matrix.n_features(),
            },
            FeatureSetInfo {
                name: "selected_features".into(),
                n_features: selected.n_features(),
            },
        ],
        rows,
        fingerprints,
        selected_features: selection.kept,
    })
}

impl EvaluationReport {
    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }

    pub fn cell(&self, model: &str, set: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.model == model)
            .and_then(|r| r.scores.get(set))
            .map(|s| s.mean_rmse)
    }

    /// Plain-text grid, one row per model.
    pub fn render_table(&self) -> String {
        let headers: Vec<String> = self
            .feature_sets
            .iter()
            .map(|s| format!("{} ({})", s.name.replace('_', " "), s.n_features))
            .collect();
        let mut out = format!("{:<12}", format!("{} ({})", self.metric, "cv mean"));
        for h in &headers {
            let _ = write!(out, "  {h:>24}");
        }
        out.push('\n');
        for row in &self.rows {
            let _ = write!(out, "{:<12}", row.model);
            for s in &row.scores {
                let _ = write!(out, "  {:>24.6}", s.mean_rmse);
            }
            out.push('\n');
        }
        out
    }
}

/// `(rank, feature, importance)` for the top `top_n` features that appear
/// in at least one split.
pub fn importance_rows(model: &TrainedModel, top_n: usize) -> Vec<(usize, String, f64)> {
    let used = model.importance(ImportanceKind::SplitCount);
    let report = model.importance(ImportanceKind::Gain);
    report
        .entries
        .into_iter()
        .filter(|(name, _)| used.get(name).is_some_and(|c| c > 0.0))
        .take(top_n)
        .enumerate()
        .map(|(i, (name, v))| (i + 1, name, v))
        .collect()
}

pub fn write_importance(rows: &[(usize, String, f64)], path: &Path) -> Result<()> {
    let mut text = String::from("rank,feature,importance\n");
    for (rank, name, v) in rows {
        let _ = writeln!(text, "{rank},{name},{v}");
    }
    write_text(path, &text)
}

pub fn write_predictions(ids: &[String], predictions: &[f64], path: &Path) -> Result<()> {
    let mut text = String::from("id,prediction\n");
    for (id, p) in ids.iter().zip(predictions) {
        let _ = writeln!(text, "{id},{p}");
    }
    write_text(path, &text)
}
