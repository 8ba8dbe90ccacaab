//! Declarative pipeline configuration (TOML).

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{AggregationPlan, IntervalSpec, Stat, Transform, ROWS};
use crate::gbm::TrainConfig;
use crate::preprocess::{EncoderKind, PreprocessSettings};
use crate::select::Criterion;
use crate::stack::RidgeParams;
use crate::tabular::{ColumnKind, DuplicateKeyPolicy, SchemaSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSettings {
    /// Table whose keys define the matrix rows.
    pub base_table: String,
    /// Drop exact duplicate rows from every table before preprocessing.
    #[serde(default = "yes")]
    pub deduplicate: bool,
    #[serde(default)]
    pub intervals: Vec<IntervalSpec>,
    #[serde(default)]
    pub plans: Vec<AggregationPlan>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionSettings {
    pub criterion: Criterion,
    /// Booster used only to rank features.
    pub booster: TrainConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelChoice {
    Depthwise,
    Leafwise,
    Stacking,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSettings {
    /// What `train` produces.
    pub train: ModelChoice,
    pub depthwise: TrainConfig,
    pub leafwise: TrainConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CvSettings {
    pub k: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelSettings {
    /// What to do with several scores for one company.
    #[serde(default)]
    pub duplicates: DuplicateKeyPolicy,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    pub matrix: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub selection: Option<PathBuf>,
    pub importance: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
}

/// Everything a pipeline run depends on. Booster `seed` fields are replaced
/// by the global `seed` when the pipeline builds its models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Worker threads (0 = one per core). Never changes results.
    #[serde(default)]
    pub workers: usize,
    pub schema: SchemaSet,
    #[serde(default)]
    pub preprocess: PreprocessSettings,
    pub features: FeatureSettings,
    pub selection: SelectionSettings,
    pub models: ModelSettings,
    pub cv: CvSettings,
    #[serde(default)]
    pub ridge: RidgeParams,
    #[serde(default)]
    pub labels: LabelSettings,
    #[serde(default)]
    pub output: OutputPaths,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<PipelineConfig> {
        let config: PipelineConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        PipelineConfig::from_toml(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Booster settings with the global seed applied.
    pub fn booster(&self, choice: ModelChoice) -> TrainConfig {
        let mut config = match choice {
            ModelChoice::Depthwise | ModelChoice::Stacking => self.models.depthwise.clone(),
            ModelChoice::Leafwise => self.models.leafwise.clone(),
        };
        config.seed = self.seed;
        config
    }

    /// Bases of the stack, depth-wise first.
    pub fn stack_bases(&self) -> Vec<TrainConfig> {
        vec![
            self.booster(ModelChoice::Depthwise),
            self.booster(ModelChoice::Leafwise),
        ]
    }

    pub fn selection_booster(&self) -> TrainConfig {
        let mut config = self.selection.booster.clone();
        config.seed = self.seed;
        config
    }

    /// Closed-world check of every table, column and parameter reference.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.cv.k < 2 {
            return bad(format!("cv.k must satisfy k ≥ 2, got {}", self.cv.k));
        }
        for (name, c) in [
            ("models.depthwise", &self.models.depthwise),
            ("models.leafwise", &self.models.leafwise),
            ("selection.booster", &self.selection.booster),
        ] {
            c.validate()
                .map_err(|e| Error::Config(format!("{name}: {e}")))?;
        }
        match self.selection.criterion {
            Criterion::TopK(0) => return bad("selection top_k must be positive".into()),
            Criterion::MinImportance(t) if !(t >= 0.0) => {
                return bad("selection min_importance must be >= 0".into())
            }
            _ => {}
        }
        if !(self.ridge.tol > 0.0) || self.ridge.max_iter == 0 {
            return bad("ridge needs tol > 0 and max_iter > 0".into());
        }

        let kinds = self.column_kinds()?;
        let lookup = |table: &str, column: &str, what: &str| -> Result<ColumnKind> {
            let columns = kinds.get(table).ok_or_else(|| {
                Error::Config(format!("{what} references unknown table `{table}`"))
            })?;
            columns.get(column).copied().ok_or_else(|| {
                Error::Config(format!(
                    "{what} references unknown column `{table}.{column}`"
                ))
            })
        };

        if !kinds.contains_key(&self.features.base_table) {
            return bad(format!("unknown base table `{}`", self.features.base_table));
        }
        if self.features.plans.is_empty() {
            return bad("no plans configured".into());
        }
        let one_hot: HashSet<(&str, &str)> = self
            .preprocess
            .columns
            .iter()
            .filter(|p| p.encode.contains(&EncoderKind::OneHot))
            .map(|p| (p.table.as_str(), p.column.as_str()))
            .collect();
        for (i, plan) in self.features.plans.iter().enumerate() {
            let what = format!("plan {i} ({}.{})", plan.table, plan.column);
            if !kinds.contains_key(&plan.table) {
                return bad(format!("{what} references unknown table `{}`", plan.table));
            }
            if plan.stats.is_empty() {
                return bad(format!("{what} has no statistics"));
            }
            if let Some(key) = &plan.group_key {
                lookup(&plan.table, key, &what)?;
            }
            if plan.column == ROWS {
                if plan.stats != [Stat::Count] || plan.transform != Transform::Identity {
                    return bad(format!("{what}: row counting supports only `count`"));
                }
                continue;
            }
            if let Some(base) = plan.column.strip_suffix("=*") {
                lookup(&plan.table, base, &what)?;
                if !one_hot.contains(&(plan.table.as_str(), base)) {
                    return bad(format!("{what}: `{base}` is not one-hot encoded"));
                }
                continue;
            }
            let kind = lookup(&plan.table, &plan.column, &what)?;
            if plan.transform != Transform::Identity && kind != ColumnKind::Date {
                return bad(format!("{what}: transform needs a date column"));
            }
            let numeric = plan
                .stats
                .iter()
                .any(|s| !matches!(s, Stat::Count | Stat::Nunique));
            if numeric && !matches!(kind, ColumnKind::Numeric | ColumnKind::Date) {
                return bad(format!("{what}: numeric statistics on a {kind:?} column"));
            }
        }
        Ok(())
    }

    /// Column kinds per table after preprocessing and interval derivation.
    fn column_kinds(&self) -> Result<BTreeMap<String, BTreeMap<String, ColumnKind>>> {
        let bad = |m: String| Err(Error::Config(m));
        let mut kinds: BTreeMap<String, BTreeMap<String, ColumnKind>> = BTreeMap::new();
        let mut files = HashSet::new();
        for table in &self.schema.tables {
            if !files.insert(&table.file) {
                return bad(format!("file `{}` used by two tables", table.file));
            }
            let mut columns = BTreeMap::from([(self.schema.key.clone(), ColumnKind::Categorical)]);
            for c in &table.columns {
                if columns.insert(c.name.clone(), c.kind).is_some() {
                    return bad(format!("duplicate column `{}.{}`", table.name, c.name));
                }
            }
            if kinds.insert(table.name.clone(), columns).is_some() {
                return bad(format!("duplicate table `{}`", table.name));
            }
        }
        let mut seen = HashSet::new();
        for policy in &self.preprocess.columns {
            let what = format!("preprocess policy for `{}.{}`", policy.table, policy.column);
            if !seen.insert((&policy.table, &policy.column)) {
                return bad(format!("{what} is declared twice"));
            }
            if policy.column == self.schema.key {
                return bad(format!("{what} rewrites the key column"));
            }
            let Some(slot) = kinds
                .get_mut(&policy.table)
                .and_then(|t| t.get_mut(&policy.column))
            else {
                return bad(format!("{what} references an unknown table or column"));
            };
            let original = *slot;
            if policy.date {
                *slot = ColumnKind::Date;
            }
            if policy.extract_number
                || policy.credit_rating
                || policy.indicator
                || policy.encode.contains(&EncoderKind::Label)
            {
                *slot = ColumnKind::Numeric;
            }
            if !policy.encode.is_empty() && original != ColumnKind::Categorical {
                return bad(format!("{what}: encoders need a categorical column"));
            }
            if (policy.unit.is_some() || policy.fill.is_some()) && *slot != ColumnKind::Numeric {
                return bad(format!(
                    "{what}: unit conversion and filling need a numeric column"
                ));
            }
        }
        for spec in &self.features.intervals {
            let what = format!("interval `{}`", spec.name);
            let Some(columns) = kinds.get_mut(&spec.table) else {
                return bad(format!("{what} references unknown table `{}`", spec.table));
            };
            for c in [&spec.from, &spec.to] {
                if columns.get(c) != Some(&ColumnKind::Date) {
                    return bad(format!("{what}: `{}.{c}` is not a date column", spec.table));
                }
            }
            if columns
                .insert(spec.name.clone(), ColumnKind::Numeric)
                .is_some()
            {
                return bad(format!("{what} collides with an existing column"));
            }
        }
        Ok(kinds)
    }
}
