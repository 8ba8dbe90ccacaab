//! Second-order gradient-boosted regression trees.
//!
//! Two growth variants share one engine: depth-wise growth with column
//! subsampling, and leaf-wise growth with a depth cap, gradient-based
//! one-side sampling (GOSS) and exclusive feature bundling (EFB). Splits are
//! found on quantile histograms; missing values get their own bin and a
//! learned default direction.

pub mod bins;
pub mod bundle;
pub mod histogram;
pub mod loss;
pub mod sampling;
pub mod tree;

use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::rng::{Purpose, SplitRng, PRNG_ALGORITHM};

pub use bins::{BinMapper, BinnedData};
pub use bundle::{conflict_count, efb_bundle, FeatureBundle};
pub use histogram::{best_split, BinSum, Histogram, QuantizedGrads, Split, SplitParams};
pub use loss::{grad_hess_squared, leaf_weight, split_gain, GradPair};
pub use sampling::{column_sample, goss_sample, GossSample};
pub use tree::{grow_tree, NodeKind, Tree, TreeNode};

pub const MODEL_FORMAT: &str = "valuekit-boosted-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrowthVariant {
    Depthwise,
    Leafwise,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GossConfig {
    #[serde(default = "GossConfig::default_top_rate")]
    pub top_rate: f64,
    #[serde(default = "GossConfig::default_other_rate")]
    pub other_rate: f64,
}

impl GossConfig {
    fn default_top_rate() -> f64 {
        0.2
    }

    fn default_other_rate() -> f64 {
        0.1
    }
}

impl Default for GossConfig {
    fn default() -> Self {
        GossConfig {
            top_rate: 0.2,
            other_rate: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EfbConfig {
    #[serde(default)]
    pub max_conflict: usize,
}

/// Booster hyperparameters. Every default is visible here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub variant: GrowthVariant,
    pub n_rounds: usize,
    pub max_depth: usize,
    /// Leaf budget for leaf-wise growth; ignored by depth-wise growth.
    pub max_leaves: usize,
    /// L2 penalty on leaf weights.
    pub lambda: f64,
    /// Penalty per additional leaf, subtracted from every split gain.
    pub gamma: f64,
    /// Shrinkage applied to every leaf value.
    pub learning_rate: f64,
    /// Fraction of features drawn for each tree.
    pub colsample: f64,
    pub min_child_hess: f64,
    pub max_bins: usize,
    pub goss: Option<GossConfig>,
    pub efb: Option<EfbConfig>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: GrowthVariant::Depthwise,
            n_rounds: 100,
            max_depth: 6,
            max_leaves: 31,
            lambda: 1.0,
            gamma: 0.0,
            learning_rate: 0.1,
            colsample: 1.0,
            min_child_hess: 1.0,
            max_bins: 256,
            goss: None,
            efb: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lambda >= 0.0) || !(self.gamma >= 0.0) {
            return bad(format!(
                "lambda and gamma must be >= 0 (got {}, {})",
                self.lambda, self.gamma
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad(format!(
                "learning_rate must be in (0, 1], got {}",
                self.learning_rate
            ));
        }
        if !(self.colsample > 0.0 && self.colsample <= 1.0) {
            return bad(format!(
                "colsample must be in (0, 1], got {}",
                self.colsample
            ));
        }
        if !(self.min_child_hess >= 0.0) {
            return bad("min_child_hess must be >= 0".into());
        }
        if !(2..=u16::MAX as usize).contains(&self.max_bins) {
            return bad(format!(
                "max_bins must be in 2..=65535, got {}",
                self.max_bins
            ));
        }
        if self.variant == GrowthVariant::Leafwise && self.max_leaves < 2 {
            return bad("leaf-wise growth needs max_leaves >= 2".into());
        }
        if let Some(g) = self.goss {
            if !(g.top_rate >= 0.0 && g.other_rate >= 0.0 && g.top_rate + g.other_rate <= 1.0) {
                return bad(format!(
                    "goss rates must be >= 0 with sum <= 1 (got {}, {})",
                    g.top_rate, g.other_rate
                ));
            }
            if g.top_rate + g.other_rate == 0.0 {
                return bad("goss would sample no rows".into());
            }
        }
        Ok(())
    }

    /// Canonical form: GOSS that keeps every row is the same as no GOSS.
    pub fn normalized(&self) -> TrainConfig {
        let mut c = self.clone();
        if c.goss.is_some_and(|g| g.top_rate >= 1.0) {
            c.goss = None;
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrngInfo {
    pub algorithm: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedModel {
    pub format: String,
    pub version: u32,
    pub feature_names: Vec<String>,
    pub base_score: f64,
    pub learning_rate: f64,
    pub config: TrainConfig,
    pub prng: PrngInfo,
    pub bin_mapper: BinMapper,
    pub bundles: Option<Vec<FeatureBundle>>,
    pub trees: Vec<Tree>,
}

/// A trained model plus what training observed along the way.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: BoostedModel,
    /// Final in-sample predictions, accumulated round by round.
    pub train_predictions: Vec<f64>,
    /// Training RMSE before the first tree and after each round.
    pub rmse_trace: Vec<f64>,
}

/// Mean that is exact when every value is equal.
pub(crate) fn stable_mean(values: &[f64]) -> f64 {
    let pivot = values[0];
    pivot + values.iter().map(|v| v - pivot).sum::<f64>() / values.len() as f64
}

fn training_rmse(y: &[f64], pred: &[f64]) -> f64 {
    let sse: f64 = y.iter().zip(pred).map(|(a, b)| (a - b) * (a - b)).sum();
    (sse / y.len() as f64).sqrt()
}

pub fn train(matrix: &FeatureMatrix, y: &[f64], config: &TrainConfig) -> Result<BoostedModel> {
    Ok(train_with_trace(matrix, y, config)?.model)
}

pub fn train_with_trace(
    matrix: &FeatureMatrix,
    y: &[f64],
    config: &TrainConfig,
) -> Result<TrainOutput> {
    config.validate()?;
    let config = config.normalized();
    if matrix.n_rows() == 0 {
        return Err(Error::Empty("training matrix has no rows".into()));
    }
    if matrix.n_rows() != y.len() {
        return Err(Error::LengthMismatch {
            left: matrix.n_rows(),
            right: y.len(),
        });
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("target at row {i}")));
    }

    let mapper = BinMapper::fit(matrix, config.max_bins)?;
    let bundles = config
        .efb
        .map(|efb| bundle::efb_bundle(matrix, &mapper, efb.max_conflict));
    let data = BinnedData::new(matrix, &mapper, bundles.as_deref())?;
    let n = matrix.n_rows();
    let base_score = stable_mean(y);
    let mut predictions = vec![base_score; n];
    let mut rmse_trace = vec![training_rmse(y, &predictions)];
    let all_rows: Vec<u32> = (0..n as u32).collect();
    let mut trees = Vec::with_capacity(config.n_rounds);

    for round in 0..config.n_rounds {
        let grads = grad_hess_squared(y, &predictions)?;
        let sample = match config.goss {
            Some(g) => {
                let mut rng = SplitRng::new(config.seed, Purpose::Goss, round as u32);
                Some(goss_sample(&grads, g.top_rate, g.other_rate, &mut rng))
            }
            None => None,
        };
        let (rows, weights) = match &sample {
            Some(s) => (&s.rows[..], Some(&s.multipliers[..])),
            None => (&all_rows[..], None),
        };
        let quantized = QuantizedGrads::new(&grads, rows, weights)?;
        let allowed = if config.colsample < 1.0 {
            let mut rng = SplitRng::new(config.seed, Purpose::ColumnSample, round as u32);
            column_sample(matrix.n_features(), config.colsample, &mut rng)
        } else {
            vec![true; matrix.n_features()]
        };
        let tree = grow_tree(&data, &mapper, rows, &quantized, &config, &allowed)?;
        for (r, p) in predictions.iter_mut().enumerate() {
            *p += tree.predict_binned(&data, r);
        }
        rmse_trace.push(training_rmse(y, &predictions));
        trees.push(tree);
    }

    let model = BoostedModel {
        format: MODEL_FORMAT.to_string(),
        version: MODEL_VERSION,
        feature_names: matrix.feature_names().to_vec(),
        base_score,
        learning_rate: config.learning_rate,
        prng: PrngInfo {
            algorithm: PRNG_ALGORITHM.to_string(),
            seed: config.seed,
        },
        config,
        bin_mapper: mapper,
        bundles,
        trees,
    };
    Ok(TrainOutput {
        model,
        train_predictions: predictions,
        rmse_trace,
    })
}

impl BoostedModel {
    /// Column position in `matrix` of each model feature (None = absent,
    /// treated as Missing). Matrix columns unknown to the model are errors.
    fn column_map(&self, matrix: &FeatureMatrix) -> Result<Vec<Option<usize>>> {
        if let Some(unknown) = matrix
            .feature_names()
            .iter()
            .find(|n| !self.feature_names.contains(n))
        {
            return Err(Error::FeatureMismatch(format!(
                "unknown feature column `{unknown}`"
            )));
        }
        Ok(self
            .feature_names
            .iter()
            .map(|n| matrix.feature_index(n))
            .collect())
    }

    pub fn predict(&self, matrix: &FeatureMatrix) -> Result<Vec<f64>> {
        let map = self.column_map(matrix)?;
        Ok((0..matrix.n_rows())
            .map(|r| {
                let value = |f: usize| map[f].and_then(|c| matrix.get(r, c));
                self.trees
                    .iter()
                    .fold(self.base_score, |acc, t| acc + t.predict_with(value))
            })
            .collect())
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    pub fn from_json(bytes: &[u8]) -> Result<BoostedModel> {
        let model: BoostedModel = serde_json::from_slice(bytes)?;
        model.check()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<BoostedModel> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        BoostedModel::from_json(&bytes)
    }

    pub(crate) fn check(&self) -> Result<()> {
        if self.format != MODEL_FORMAT || self.version != MODEL_VERSION {
            return Err(Error::Model(format!(
                "unsupported model {} v{}",
                self.format, self.version
            )));
        }
        let n = self.feature_names.len();
        if self.bin_mapper.n_features() != n {
            return Err(Error::Model(
                "bin mapper width differs from feature list".into(),
            ));
        }
        for (t, tree) in self.trees.iter().enumerate() {
            if tree.nodes.is_empty() {
                return Err(Error::Model(format!("tree {t} is empty")));
            }
            for node in &tree.nodes {
                match node.kind {
                    NodeKind::Leaf { value } if !value.is_finite() => {
                        return Err(Error::Model(format!("tree {t} has a non-finite leaf")))
                    }
                    NodeKind::Split {
                        feature,
                        left,
                        right,
                        ..
                    } if feature >= n || left >= tree.nodes.len() || right >= tree.nodes.len() => {
                        return Err(Error::Model(format!("tree {t} has a dangling reference")))
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    pub fn feature_importance(&self, kind: ImportanceKind) -> ImportanceReport {
        let mut totals = vec![0.0; self.feature_names.len()];
        for tree in &self.trees {
            for node in &tree.nodes {
                if let NodeKind::Split { feature, gain, .. } = node.kind {
                    totals[feature] += match kind {
                        ImportanceKind::Gain => gain,
                        ImportanceKind::SplitCount => 1.0,
                    };
                }
            }
        }
        ImportanceReport::ranked(
            kind,
            self.feature_names.iter().cloned().zip(totals).collect(),
        )
    }

    /// Original features referenced by at least one split.
    pub fn used_features(&self) -> Vec<&str> {
        let mut used = vec![false; self.feature_names.len()];
        for tree in &self.trees {
            for node in &tree.nodes {
                if let NodeKind::Split { feature, .. } = node.kind {
                    used[feature] = true;
                }
            }
        }
        self.feature_names
            .iter()
            .zip(used)
            .filter(|(_, u)| *u)
            .map(|(n, _)| n.as_str())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceKind {
    Gain,
    SplitCount,
}

/// Features ranked by importance, descending; ties by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub kind: ImportanceKind,
    pub entries: Vec<(String, f64)>,
}

impl ImportanceReport {
    pub fn ranked(kind: ImportanceKind, mut entries: Vec<(String, f64)>) -> ImportanceReport {
        entries.sort_by(|a, b| match b.1.partial_cmp(&a.1) {
            Some(Ordering::Equal) | None => a.0.cmp(&b.0),
            Some(o) => o,
        });
        ImportanceReport { kind, entries }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries.iter().find(|e| e.0 == name).map(|e| e.1)
    }
}
