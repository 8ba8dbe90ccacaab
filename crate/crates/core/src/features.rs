//! Group-by aggregation engine and the dense feature matrix it produces.
//!
//! Feature columns are named `<table>.<column>.<transform>.<stat>`, so every
//! importance entry can be traced back to the plan that generated it.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::date_parts;
use crate::tabular::{
    Column, ColumnKind, MultiTableCorpus, Table, Value, ValueKey, SECONDS_PER_DAY,
};

/// Pseudo-column that counts rows instead of reading a column.
pub const ROWS: &str = "ROWS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stat {
    Count,
    Nunique,
    Mean,
    Max,
    Min,
    Std,
    Skew,
    Kurt,
    Median,
    Sum,
    LogMean,
}

impl Stat {
    pub fn name(self) -> &'static str {
        match self {
            Stat::Count => "count",
            Stat::Nunique => "nunique",
            Stat::Mean => "mean",
            Stat::Max => "max",
            Stat::Min => "min",
            Stat::Std => "std",
            Stat::Skew => "skew",
            Stat::Kurt => "kurt",
            Stat::Median => "median",
            Stat::Sum => "sum",
            Stat::LogMean => "log_mean",
        }
    }

    fn needs_numbers(self) -> bool {
        !matches!(self, Stat::Count | Stat::Nunique)
    }
}

impl fmt::Display for Stat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    #[default]
    Identity,
    /// Sort the group's dates and take consecutive differences (seconds).
    FirstDifference,
    YearOf,
    DayOf,
}

impl Transform {
    pub fn tag(self) -> &'static str {
        match self {
            Transform::Identity => "id",
            Transform::FirstDifference => "diff",
            Transform::YearOf => "year",
            Transform::DayOf => "day",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregationPlan {
    pub table: String,
    /// Grouping column; defaults to the corpus key.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_key: Option<String>,
    /// Source column, `ROWS` to count rows, or `<column>=*` to expand over
    /// the one-hot indicators generated from `<column>`.
    pub column: String,
    pub stats: Vec<Stat>,
    #[serde(default, skip_serializing_if = "is_identity")]
    pub transform: Transform,
}

fn is_identity(t: &Transform) -> bool {
    *t == Transform::Identity
}

impl AggregationPlan {
    pub fn new(table: &str, column: &str, stats: &[Stat]) -> Self {
        AggregationPlan {
            table: table.to_string(),
            group_key: None,
            column: column.to_string(),
            stats: stats.to_vec(),
            transform: Transform::Identity,
        }
    }

    pub fn with_transform(mut self, transform: Transform) -> Self {
        self.transform = transform;
        self
    }

    fn expansion_prefix(&self) -> Option<String> {
        self.column
            .strip_suffix("=*")
            .map(|base| format!("{base}="))
    }

    fn check(&self, table: &Table) -> Result<Vec<String>> {
        let err = |msg: String| {
            Err(Error::Plan(format!(
                "{}.{}: {msg}",
                self.table, self.column
            )))
        };
        if self.stats.is_empty() {
            return err("no statistics requested".into());
        }
        if let Some(key) = &self.group_key {
            if table.column(key).is_none() {
                return err(format!("unknown group key `{key}`"));
            }
        }
        if self.column == ROWS {
            if self.stats != [Stat::Count] || self.transform != Transform::Identity {
                return err("row counting supports only `count`".into());
            }
            return Ok(vec![ROWS.to_string()]);
        }
        let columns: Vec<&Column> = match self.expansion_prefix() {
            Some(prefix) => {
                let found: Vec<&Column> = table
                    .columns()
                    .iter()
                    .filter(|c| c.name.starts_with(&prefix))
                    .collect();
                if found.is_empty() {
                    return err("no one-hot columns to expand".into());
                }
                found
            }
            None => match table.column(&self.column) {
                Some(c) => vec![c],
                None => return err("unknown column".into()),
            },
        };
        if self.transform != Transform::Identity
            && columns.iter().any(|c| c.kind != ColumnKind::Date)
        {
            return err(format!(
                "transform `{}` needs a date column",
                self.transform.tag()
            ));
        }
        Ok(columns.into_iter().map(|c| c.name.clone()).collect())
    }

    /// Feature names this plan produces for the given source column.
    fn feature_names(&self, column: &str) -> Vec<String> {
        self.stats
            .iter()
            .map(|s| format!("{}.{}.{}.{}", self.table, column, self.transform.tag(), s))
            .collect()
    }
}

/// Per-company statistics, one slot per plan stat.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupStats {
    pub stats: Vec<Stat>,
    pub by_company: BTreeMap<String, Vec<Option<f64>>>,
}

impl GroupStats {
    pub fn get(&self, company: &str, stat: Stat) -> Option<f64> {
        let slot = self.stats.iter().position(|s| *s == stat)?;
        self.by_company.get(company)?[slot]
    }
}

/// Mean that is exact for constant inputs: first + mean(x - first).
fn shifted_mean(sorted: &[f64]) -> f64 {
    let pivot = sorted[0];
    pivot + sorted.iter().map(|x| x - pivot).sum::<f64>() / sorted.len() as f64
}

fn central_moments(sorted: &[f64]) -> (f64, f64, f64, f64) {
    let n = sorted.len() as f64;
    let mean = shifted_mean(sorted);
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for x in sorted {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    (mean, m2 / n, m3 / n, m4 / n)
}

/// Computes one statistic over finite numbers sorted ascending.
/// `group_size` feeds `count`; `distinct` feeds `nunique`.
fn compute_stat(stat: Stat, sorted: &[f64], group_size: usize, distinct: usize) -> Option<f64> {
    let n = sorted.len();
    let nf = n as f64;
    match stat {
        Stat::Count => Some(group_size as f64),
        Stat::Nunique => Some(distinct as f64),
        _ if n == 0 => None,
        Stat::Mean => Some(shifted_mean(sorted)),
        Stat::Max => sorted.last().copied(),
        Stat::Min => sorted.first().copied(),
        Stat::Sum => Some(sorted.iter().sum()),
        Stat::Median => Some(if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        }),
        Stat::Std => {
            if n < 2 {
                return None;
            }
            let (_, m2, _, _) = central_moments(sorted);
            Some((m2 * nf / (nf - 1.0)).sqrt())
        }
        Stat::Skew => {
            if n < 3 {
                return None;
            }
            let (_, m2, m3, _) = central_moments(sorted);
            if m2 == 0.0 {
                return Some(0.0);
            }
            Some((nf * (nf - 1.0)).sqrt() / (nf - 2.0) * m3 / m2.powf(1.5))
        }
        Stat::Kurt => {
            if n < 4 {
                return None;
            }
            let (_, m2, _, m4) = central_moments(sorted);
            if m2 == 0.0 {
                return Some(0.0);
            }
            let g2 = m4 / (m2 * m2);
            Some((nf - 1.0) / ((nf - 2.0) * (nf - 3.0)) * ((nf + 1.0) * g2 - 3.0 * (nf - 1.0)))
        }
        Stat::LogMean => {
            let logs: Vec<f64> = sorted
                .iter()
                .filter(|x| **x > 0.0)
                .map(|x| x.ln())
                .collect();
            if logs.is_empty() {
                None
            } else {
                Some(logs.iter().sum::<f64>() / logs.len() as f64)
            }
        }
    }
}

fn sort_numbers(values: &mut [f64]) {
    values.sort_by(|a, b| a.total_cmp(b));
}

fn distinct_numbers(sorted: &[f64]) -> usize {
    let mut count = 0;
    let mut last: Option<f64> = None;
    for &x in sorted {
        if last != Some(x) {
            count += 1;
            last = Some(x);
        }
    }
    count
}

fn year_of(stamp: i64) -> f64 {
    date_parts(stamp).year as f64
}

fn day_of(stamp: i64) -> f64 {
    date_parts(stamp).day as f64
}

fn first_differences(mut stamps: Vec<i64>) -> Vec<f64> {
    stamps.sort_unstable();
    stamps.windows(2).map(|w| (w[1] - w[0]) as f64).collect()
}

fn group_rows(table: &Table, key: &str) -> Result<Vec<(String, Vec<usize>)>> {
    let column = table
        .column(key)
        .ok_or_else(|| Error::Plan(format!("{}: unknown group key `{key}`", table.name())))?;
    let mut index: HashMap<ValueKey, usize> = HashMap::new();
    let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
    for (row, value) in column.values.iter().enumerate() {
        if value.is_missing() {
            continue;
        }
        let slot = *index.entry(value.key()).or_insert_with(|| {
            groups.push((cell_text(value), Vec::new()));
            groups.len() - 1
        });
        groups[slot].1.push(row);
    }
    Ok(groups)
}

fn cell_text(value: &Value) -> String {
    match value {
        Value::Categorical(s) | Value::Text(s) => s.clone(),
        Value::Numeric(x) => format!("{x}"),
        Value::Date(t) => t.to_string(),
        Value::Missing => String::new(),
    }
}

fn aggregate_column(
    table: &Table,
    plan: &AggregationPlan,
    source: &str,
    key: &str,
) -> Result<GroupStats> {
    let groups = group_rows(table, key)?;
    let mut by_company = BTreeMap::new();
    let needs_numbers = plan.stats.iter().any(|s| s.needs_numbers());

    for (company, rows) in groups {
        let stats = if source == ROWS {
            vec![Some(rows.len() as f64)]
        } else {
            let column = table.column(source).expect("plan checked");
            let present: Vec<&Value> = rows
                .iter()
                .map(|&r| &column.values[r])
                .filter(|v| !v.is_missing())
                .collect();
            let (mut numbers, group_size, distinct) = match plan.transform {
                Transform::Identity => {
                    let mut numbers = Vec::with_capacity(present.len());
                    for v in &present {
                        match v.as_f64() {
                            Some(x) => numbers.push(x),
                            None if needs_numbers => {
                                return Err(Error::Plan(format!(
                                    "{}.{}: non-numeric value {v:?} for company `{company}`",
                                    plan.table, source
                                )))
                            }
                            None => {}
                        }
                    }
                    let distinct = present
                        .iter()
                        .map(|v| v.key())
                        .collect::<HashSet<_>>()
                        .len();
                    (numbers, rows.len(), distinct)
                }
                transform => {
                    let stamps: Vec<i64> = present
                        .iter()
                        .filter_map(|v| match v {
                            Value::Date(t) => Some(*t),
                            _ => None,
                        })
                        .collect();
                    let numbers: Vec<f64> = match transform {
                        Transform::FirstDifference => first_differences(stamps),
                        Transform::YearOf => stamps.into_iter().map(year_of).collect(),
                        Transform::DayOf => stamps.into_iter().map(day_of).collect(),
                        Transform::Identity => unreachable!(),
                    };
                    let mut sorted = numbers.clone();
                    sort_numbers(&mut sorted);
                    let distinct = distinct_numbers(&sorted);
                    (numbers, sorted.len(), distinct)
                }
            };
            sort_numbers(&mut numbers);
            plan.stats
                .iter()
                .map(|s| compute_stat(*s, &numbers, group_size, distinct))
                .collect()
        };
        by_company.insert(company, stats);
    }
    Ok(GroupStats {
        stats: plan.stats.clone(),
        by_company,
    })
}

/// Aggregates one plan over a table. Expansion plans (`<column>=*`) are
/// resolved by [`assemble_matrix`]; here the plan must name one column or
/// `ROWS`.
pub fn aggregate(table: &Table, plan: &AggregationPlan) -> Result<GroupStats> {
    let sources = plan.check(table)?;
    if sources.len() != 1 || plan.expansion_prefix().is_some() {
        return Err(Error::Plan(format!(
            "{}.{}: expansion plans aggregate several columns; use assemble_matrix",
            plan.table, plan.column
        )));
    }
    let key = plan.group_key.as_deref().unwrap_or(table.key_column());
    aggregate_column(table, plan, &sources[0], key)
}

/// Summary of the gaps between consecutive dates plus year and day-of-month
/// statistics. Fewer than two dates gives all-Missing.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DateDifferenceStats {
    pub diff_mean: Option<f64>,
    pub diff_max: Option<f64>,
    pub diff_std: Option<f64>,
    pub diff_skew: Option<f64>,
    pub diff_kurt: Option<f64>,
    pub year_nunique: Option<f64>,
    pub year_max: Option<f64>,
    pub year_min: Option<f64>,
    pub year_mean: Option<f64>,
    pub year_median: Option<f64>,
    pub day_nunique: Option<f64>,
    pub day_max: Option<f64>,
    pub day_min: Option<f64>,
    pub day_mean: Option<f64>,
    pub day_median: Option<f64>,
}

pub fn date_difference_stats(dates: &[i64]) -> DateDifferenceStats {
    if dates.len() < 2 {
        return DateDifferenceStats::default();
    }
    let mut diffs = first_differences(dates.to_vec());
    sort_numbers(&mut diffs);
    let diff = |s| compute_stat(s, &diffs, diffs.len(), distinct_numbers(&diffs));
    let component = |f: fn(i64) -> f64| {
        let mut v: Vec<f64> = dates.iter().map(|&t| f(t)).collect();
        sort_numbers(&mut v);
        let d = distinct_numbers(&v);
        move |s| compute_stat(s, &v, v.len(), d)
    };
    let year = component(year_of);
    let day = component(day_of);
    DateDifferenceStats {
        diff_mean: diff(Stat::Mean),
        diff_max: diff(Stat::Max),
        diff_std: diff(Stat::Std),
        diff_skew: diff(Stat::Skew),
        diff_kurt: diff(Stat::Kurt),
        year_nunique: year(Stat::Nunique),
        year_max: year(Stat::Max),
        year_min: year(Stat::Min),
        year_mean: year(Stat::Mean),
        year_median: year(Stat::Median),
        day_nunique: day(Stat::Nunique),
        day_max: day(Stat::Max),
        day_min: day(Stat::Min),
        day_mean: day(Stat::Mean),
        day_median: day(Stat::Median),
    }
}

/// Days from establishment to the end of the operating term. Negative
/// values are kept.
pub fn establishment_interval(established: &Value, term_end: &Value) -> Option<f64> {
    match (established, term_end) {
        (Value::Date(a), Value::Date(b)) => Some((b - a) as f64 / SECONDS_PER_DAY as f64),
        _ => None,
    }
}

/// Adds a derived day-interval column between two date columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntervalSpec {
    pub table: String,
    pub from: String,
    pub to: String,
    pub name: String,
}

pub fn add_interval_column(table: Table, spec: &IntervalSpec) -> Result<Table> {
    let lookup = |name: &str| {
        table
            .column(name)
            .ok_or_else(|| Error::Plan(format!("{}: unknown interval column `{name}`", spec.table)))
    };
    let from = lookup(&spec.from)?;
    let to = lookup(&spec.to)?;
    let values = from
        .values
        .iter()
        .zip(&to.values)
        .map(|(a, b)| establishment_interval(a, b).map_or(Value::Missing, Value::Numeric))
        .collect();
    let derived = Column::new(spec.name.clone(), ColumnKind::Numeric, values);
    let mut columns = table.columns().to_vec();
    columns.push(derived);
    table.with_columns(columns)
}

/// Dense companies-by-features matrix with an explicit missing mask.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    ids: Vec<String>,
    names: Vec<String>,
    values: Vec<f64>,
    missing: Vec<bool>,
}

impl FeatureMatrix {
    pub fn new(ids: Vec<String>, names: Vec<String>, rows: Vec<Vec<Option<f64>>>) -> Result<Self> {
        if ids.len() != rows.len() {
            return Err(Error::LengthMismatch {
                left: ids.len(),
                right: rows.len(),
            });
        }
        let mut seen = HashSet::new();
        if let Some(dup) = names.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(Error::Assembly(format!("duplicate feature name `{dup}`")));
        }
        let width = names.len();
        let mut values = Vec::with_capacity(rows.len() * width);
        let mut missing = Vec::with_capacity(rows.len() * width);
        for (r, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(Error::Assembly(format!(
                    "row {r} has {} values, expected {width}",
                    row.len()
                )));
            }
            for v in row {
                match v {
                    Some(x) if x.is_finite() => {
                        values.push(*x);
                        missing.push(false);
                    }
                    _ => {
                        values.push(0.0);
                        missing.push(true);
                    }
                }
            }
        }
        Ok(FeatureMatrix {
            ids,
            names,
            values,
            missing,
        })
    }

    /// Builds a matrix from row-major dense data where NaN marks missing.
    pub fn from_dense(ids: Vec<String>, names: Vec<String>, data: &[f64]) -> Result<Self> {
        let width = names.len();
        if data.len() != ids.len() * width {
            return Err(Error::LengthMismatch {
                left: data.len(),
                right: ids.len() * width,
            });
        }
        let rows = data
            .chunks(width.max(1))
            .take(ids.len())
            .map(|r| r.iter().map(|x| x.is_finite().then_some(*x)).collect())
            .collect();
        FeatureMatrix::new(ids, names, rows)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn feature_names(&self) -> &[String] {
        &self.names
    }

    pub fn n_rows(&self) -> usize {
        self.ids.len()
    }

    pub fn n_features(&self) -> usize {
        self.names.len()
    }

    pub fn get(&self, row: usize, feature: usize) -> Option<f64> {
        let i = row * self.names.len() + feature;
        (!self.missing[i]).then_some(self.values[i])
    }

    pub fn row(&self, row: usize) -> impl Iterator<Item = Option<f64>> + '_ {
        (0..self.names.len()).map(move |f| self.get(row, f))
    }

    pub fn column(&self, feature: usize) -> Vec<Option<f64>> {
        (0..self.n_rows()).map(|r| self.get(r, feature)).collect()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        let width = self.names.len();
        let mut values = Vec::with_capacity(rows.len() * width);
        let mut missing = Vec::with_capacity(rows.len() * width);
        for &r in rows {
            values.extend_from_slice(&self.values[r * width..(r + 1) * width]);
            missing.extend_from_slice(&self.missing[r * width..(r + 1) * width]);
        }
        FeatureMatrix {
            ids: rows.iter().map(|&r| self.ids[r].clone()).collect(),
            names: self.names.clone(),
            values,
            missing,
        }
    }

    /// Restricts to the named columns, in the given order.
    pub fn select_features(&self, names: &[String]) -> Result<FeatureMatrix> {
        let positions: Vec<usize> = names
            .iter()
            .map(|n| {
                self.feature_index(n)
                    .ok_or_else(|| Error::FeatureMismatch(format!("feature `{n}` not in matrix")))
            })
            .collect::<Result<_>>()?;
        let rows = (0..self.n_rows())
            .map(|r| positions.iter().map(|&f| self.get(r, f)).collect())
            .collect();
        FeatureMatrix::new(self.ids.clone(), names.to_vec(), rows)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut writer = csv::Writer::from_writer(file);
        writer.write_record(std::iter::once("id").chain(self.names.iter().map(String::as_str)))?;
        for r in 0..self.n_rows() {
            let cells = self
                .row(r)
                .map(|v| v.map_or_else(String::new, |x| format!("{x}")));
            writer.write_record(std::iter::once(self.ids[r].clone()).chain(cells))?;
        }
        writer.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<FeatureMatrix> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::Reader::from_reader(file);
        let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        if header.first().map(String::as_str) != Some("id") {
            return Err(Error::Assembly(format!(
                "{}: first column must be `id`",
                path.display()
            )));
        }
        let names = header[1..].to_vec();
        let mut ids = Vec::new();
        let mut rows = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record?;
            ids.push(record.get(0).unwrap_or("").to_string());
            let row = record
                .iter()
                .skip(1)
                .map(|cell| {
                    if cell.is_empty() {
                        Ok(None)
                    } else {
                        cell.parse::<f64>().map(Some).map_err(|_| {
                            Error::Assembly(format!(
                                "{}: row {}: bad number `{cell}`",
                                path.display(),
                                line + 2
                            ))
                        })
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        FeatureMatrix::new(ids, names, rows)
    }
}

/// Left-joins every plan's per-company statistics onto the company list of
/// `base_table`. Companies missing from a source table get Missing.
pub fn assemble_matrix(
    corpus: &MultiTableCorpus,
    plans: &[AggregationPlan],
    base_table: &str,
) -> Result<FeatureMatrix> {
    let base = corpus
        .table(base_table)
        .ok_or_else(|| Error::Assembly(format!("unknown base table `{base_table}`")))?;
    let mut ids = base.key_strings();
    let mut seen = HashSet::new();
    ids.retain(|id| seen.insert(id.clone()));

    let resolved: Vec<(&AggregationPlan, &Table, Vec<String>)> = plans
        .iter()
        .map(|plan| {
            let table = corpus
                .table(&plan.table)
                .ok_or_else(|| Error::Plan(format!("unknown table `{}`", plan.table)))?;
            Ok((plan, table, plan.check(table)?))
        })
        .collect::<Result<_>>()?;

    // one job per (plan, source column); merged back in plan order
    let jobs: Vec<(&AggregationPlan, &Table, &str)> = resolved
        .iter()
        .flat_map(|(plan, table, sources)| sources.iter().map(move |s| (*plan, *table, s.as_str())))
        .collect();
    let outputs: Vec<(Vec<String>, GroupStats)> = jobs
        .par_iter()
        .map(|(plan, table, source)| {
            let key = plan.group_key.as_deref().unwrap_or(table.key_column());
            Ok((
                plan.feature_names(source),
                aggregate_column(table, plan, source, key)?,
            ))
        })
        .collect::<Result<_>>()?;

    let mut names = Vec::new();
    for (n, _) in &outputs {
        names.extend(n.iter().cloned());
    }
    let rows = ids
        .iter()
        .map(|id| {
            let mut row = Vec::with_capacity(names.len());
            for (n, stats) in &outputs {
                match stats.by_company.get(id) {
                    Some(values) => row.extend(values.iter().copied()),
                    None => row.extend(std::iter::repeat_n(None, n.len())),
                }
            }
            row
        })
        .collect();
    FeatureMatrix::new(ids, names, rows)
}
