//! Column rewrites applied between ingestion and feature aggregation.
//!
//! Every function here is pure: same input and policy, same output.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use chrono::{Datelike, NaiveDate};
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tabular::{Column, ColumnKind, MultiTableCorpus, Table, Value, SECONDS_PER_DAY};

pub const DOLLAR_TO_YUAN: f64 = 6.7;
pub const EXCEPTION_FILL: f64 = -99.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "i64")]
pub enum FillValue {
    Zero,
    MinusNinetyNine,
}

impl FillValue {
    pub fn value(self) -> f64 {
        match self {
            FillValue::Zero => 0.0,
            FillValue::MinusNinetyNine => -99.0,
        }
    }
}

impl TryFrom<i64> for FillValue {
    type Error = String;

    fn try_from(v: i64) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(FillValue::Zero),
            -99 => Ok(FillValue::MinusNinetyNine),
            other => Err(format!("fill value must be 0 or -99, got {other}")),
        }
    }
}

impl From<FillValue> for i64 {
    fn from(v: FillValue) -> i64 {
        v.value() as i64
    }
}

pub fn fill_missing(column: &Column, fill: FillValue) -> Result<Column> {
    column.expect_kind(ColumnKind::Numeric)?;
    let values = column
        .values
        .iter()
        .map(|v| match v {
            Value::Missing => Value::Numeric(fill.value()),
            other => other.clone(),
        })
        .collect();
    Ok(Column::new(column.name.clone(), column.kind, values))
}

/// Tokens that stand for "no data" in the raw sheets. Whitespace-only and
/// empty strings are always treated as exceptions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExceptionTokens(pub Vec<String>);

impl Default for ExceptionTokens {
    fn default() -> Self {
        // "\u{ad}" is the soft hyphen; the escaped spelling also shows up
        // in exports that went through a Python repr.
        ExceptionTokens(vec!["--".into(), "\u{ad}".into(), "\\xad".into()])
    }
}

impl ExceptionTokens {
    pub fn sanitize(&self, v: &Value) -> Value {
        match v {
            Value::Text(s) => {
                let trimmed = s.trim();
                if trimmed.is_empty() || self.0.iter().any(|t| t == trimmed) {
                    Value::Numeric(EXCEPTION_FILL)
                } else {
                    v.clone()
                }
            }
            other => other.clone(),
        }
    }
}

pub fn sanitize_token(v: &Value) -> Value {
    ExceptionTokens::default().sanitize(v)
}

fn number_pattern() -> &'static Regex {
    static PATTERN: OnceLock<Regex> = OnceLock::new();
    PATTERN.get_or_init(|| {
        Regex::new(r"[-+]?(?:(?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d+)?|\.\d+)").expect("valid pattern")
    })
}

/// First decimal number embedded in a text cell. Thousands separators in
/// the `1,234,567` layout are accepted.
pub fn extract_number(v: &Value) -> Value {
    match v {
        Value::Text(s) => match number_pattern().find(s) {
            Some(m) => m
                .as_str()
                .replace(',', "")
                .parse::<f64>()
                .map(Value::numeric)
                .unwrap_or(Value::Missing),
            None => Value::Missing,
        },
        other => other.clone(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurrencyUnit {
    Dollar,
    HundredMillionYuan,
    TenThousandYuan,
    Yuan,
}

impl CurrencyUnit {
    pub fn yuan_factor(self) -> f64 {
        match self {
            CurrencyUnit::Dollar => DOLLAR_TO_YUAN,
            CurrencyUnit::HundredMillionYuan => 100_000_000.0,
            CurrencyUnit::TenThousandYuan => 10_000.0,
            CurrencyUnit::Yuan => 1.0,
        }
    }
}

/// Converts an amount to yuan.
pub fn convert_currency(amount: f64, unit: CurrencyUnit) -> f64 {
    match unit {
        CurrencyUnit::Yuan => amount,
        _ => amount * unit.yuan_factor(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DateParts {
    pub stamp: i64,
    pub year: i32,
    pub month: u32,
    pub day: u32,
}

const DATE_LAYOUTS: [&str; 3] = ["%Y-%m-%d", "%Y/%m/%d", "%Y年%m月%d日"];

/// Parses one of the accepted calendar layouts to midnight UTC.
pub fn convert_date(token: &str) -> Result<DateParts> {
    let trimmed = token.trim();
    for layout in DATE_LAYOUTS {
        if let Ok(date) = NaiveDate::parse_from_str(trimmed, layout) {
            let stamp = date
                .and_hms_opt(0, 0, 0)
                .expect("midnight exists")
                .and_utc()
                .timestamp();
            return Ok(DateParts {
                stamp,
                year: date.year(),
                month: date.month(),
                day: date.day(),
            });
        }
    }
    Err(Error::Date(token.to_string()))
}

/// Calendar decomposition of a timestamp (UTC).
pub fn date_parts(stamp: i64) -> DateParts {
    let days = stamp.div_euclid(SECONDS_PER_DAY);
    let date = NaiveDate::from_ymd_opt(1970, 1, 1).expect("epoch") + chrono::Duration::days(days);
    DateParts {
        stamp,
        year: date.year(),
        month: date.month(),
        day: date.day(),
    }
}

/// Credit rating text to ordinal score; anything unlisted scores 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreditRatingMap(pub BTreeMap<String, f64>);

impl Default for CreditRatingMap {
    fn default() -> Self {
        CreditRatingMap(BTreeMap::from([
            ("Advanced certification enterprise".to_string(), 4.0),
            ("General certified enterprise".to_string(), 3.0),
            ("General credit enterprise".to_string(), 2.0),
        ]))
    }
}

impl CreditRatingMap {
    pub const FALLBACK: f64 = 1.0;

    pub fn score(&self, token: &str) -> f64 {
        self.0.get(token.trim()).copied().unwrap_or(Self::FALLBACK)
    }
}

pub fn map_credit_rating(token: &str) -> f64 {
    CreditRatingMap::default().score(token)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Label,
    OneHot,
}

/// Token vocabulary of one categorical column, sorted lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderMap {
    pub kind: EncoderKind,
    pub column: String,
    pub categories: Vec<String>,
}

impl EncoderMap {
    pub fn fit(column: &Column, kind: EncoderKind) -> Result<EncoderMap> {
        column.expect_kind(ColumnKind::Categorical)?;
        let mut categories: Vec<String> = column
            .values
            .iter()
            .filter_map(|v| match v {
                Value::Categorical(s) => Some(s.clone()),
                _ => None,
            })
            .collect();
        categories.sort();
        categories.dedup();
        Ok(EncoderMap {
            kind,
            column: column.name.clone(),
            categories,
        })
    }

    pub fn code_of(&self, token: &str) -> Option<usize> {
        self.categories
            .binary_search_by(|c| c.as_str().cmp(token))
            .ok()
    }

    /// Replays label codes; unseen tokens become Missing.
    pub fn apply_label(&self, column: &Column) -> Column {
        let values = column
            .values
            .iter()
            .map(|v| match v {
                Value::Categorical(s) => self
                    .code_of(s)
                    .map_or(Value::Missing, |c| Value::Numeric(c as f64)),
                _ => Value::Missing,
            })
            .collect();
        Column::new(column.name.clone(), ColumnKind::Numeric, values)
    }
}

pub fn label_encode(column: &Column) -> Result<(Column, EncoderMap)> {
    let map = EncoderMap::fit(column, EncoderKind::Label)?;
    Ok((map.apply_label(column), map))
}

/// One indicator column per known category, named `<column>=<token>`.
pub fn one_hot_encode(column: &Column, map: &EncoderMap) -> Vec<Column> {
    let codes: Vec<Option<usize>> = column
        .values
        .iter()
        .map(|v| match v {
            Value::Categorical(s) => map.code_of(s),
            _ => None,
        })
        .collect();
    map.categories
        .iter()
        .enumerate()
        .map(|(code, token)| {
            let values = codes
                .iter()
                .map(|c| Value::Numeric(if *c == Some(code) { 1.0 } else { 0.0 }))
                .collect();
            Column::new(
                format!("{}={}", column.name, token),
                ColumnKind::Numeric,
                values,
            )
        })
        .collect()
}

/// 1 where a value is present, 0 where it is missing.
pub fn missing_indicator(column: &Column) -> Column {
    let values = column
        .values
        .iter()
        .map(|v| Value::Numeric(if v.is_missing() { 0.0 } else { 1.0 }))
        .collect();
    Column::new(column.name.clone(), ColumnKind::Numeric, values)
}

/// Per-column rewrite recipe. Steps run in field order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnPolicy {
    pub table: String,
    pub column: String,
    /// Replace exception strings with -99.
    #[serde(default)]
    pub sanitize: bool,
    /// Pull the first number out of remaining text cells.
    #[serde(default)]
    pub extract_number: bool,
    /// Map rating text to 4/3/2/1.
    #[serde(default)]
    pub credit_rating: bool,
    #[serde(default)]
    pub unit: Option<CurrencyUnit>,
    /// Parse text cells as dates; failures become Missing.
    #[serde(default)]
    pub date: bool,
    /// Replace with a presence flag (1 present, 0 missing).
    #[serde(default)]
    pub indicator: bool,
    #[serde(default)]
    pub fill: Option<FillValue>,
    #[serde(default)]
    pub encode: Vec<EncoderKind>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessSettings {
    #[serde(default)]
    pub exception_tokens: ExceptionTokens,
    #[serde(default)]
    pub credit_ratings: CreditRatingMap,
    #[serde(default)]
    pub columns: Vec<ColumnPolicy>,
}

fn rewrite(column: &Column, kind: ColumnKind, f: impl Fn(&Value) -> Value) -> Column {
    Column::new(
        column.name.clone(),
        kind,
        column.values.iter().map(f).collect(),
    )
}

fn apply_policy(
    mut column: Column,
    policy: &ColumnPolicy,
    settings: &PreprocessSettings,
    encoders: &mut Vec<EncoderMap>,
) -> Result<Vec<Column>> {
    if policy.sanitize {
        column = rewrite(&column, column.kind, |v| {
            settings.exception_tokens.sanitize(v)
        });
    }
    if policy.extract_number {
        column = rewrite(&column, ColumnKind::Numeric, |v| match v {
            Value::Numeric(_) | Value::Missing | Value::Text(_) => extract_number(v),
            Value::Categorical(s) => extract_number(&Value::Text(s.clone())),
            Value::Date(_) => Value::Missing,
        });
    }
    if policy.credit_rating {
        column = rewrite(&column, ColumnKind::Numeric, |v| match v {
            Value::Categorical(s) | Value::Text(s) => {
                Value::Numeric(settings.credit_ratings.score(s))
            }
            Value::Missing => Value::Missing,
            _ => Value::Numeric(CreditRatingMap::FALLBACK),
        });
    }
    if let Some(unit) = policy.unit {
        column.expect_kind(ColumnKind::Numeric)?;
        column = rewrite(&column, ColumnKind::Numeric, |v| match v {
            Value::Numeric(x) => Value::numeric(convert_currency(*x, unit)),
            other => other.clone(),
        });
    }
    if policy.date {
        column = rewrite(&column, ColumnKind::Date, |v| match v {
            Value::Date(t) => Value::Date(*t),
            Value::Categorical(s) | Value::Text(s) => {
                convert_date(s).map_or(Value::Missing, |d| Value::Date(d.stamp))
            }
            _ => Value::Missing,
        });
    }
    if policy.indicator {
        column = missing_indicator(&column);
    }
    if let Some(fill) = policy.fill {
        column = fill_missing(&column, fill)?;
    }
    let mut out = Vec::new();
    let mut one_hot = Vec::new();
    let mut label = None;
    for kind in &policy.encode {
        let map = EncoderMap::fit(&column, *kind)?;
        match kind {
            EncoderKind::OneHot => one_hot = one_hot_encode(&column, &map),
            EncoderKind::Label => label = Some(map.apply_label(&column)),
        }
        encoders.push(map);
    }
    out.push(label.unwrap_or(column));
    out.extend(one_hot);
    Ok(out)
}

/// Applies every column policy to the corpus, returning the rewritten corpus
/// and the fitted encoders (in policy order).
pub fn apply_policies(
    corpus: MultiTableCorpus,
    settings: &PreprocessSettings,
) -> Result<(MultiTableCorpus, Vec<EncoderMap>)> {
    let key = corpus.key_name().to_string();
    for policy in &settings.columns {
        let table = corpus.table(&policy.table).ok_or_else(|| {
            Error::Config(format!(
                "preprocess policy references unknown table `{}`",
                policy.table
            ))
        })?;
        if table.column(&policy.column).is_none() {
            return Err(Error::Config(format!(
                "preprocess policy references unknown column `{}.{}`",
                policy.table, policy.column
            )));
        }
    }
    let mut encoders = Vec::new();
    let mut out = MultiTableCorpus::new(key.clone());
    for (name, table) in corpus.into_tables() {
        let policies: Vec<&ColumnPolicy> = settings
            .columns
            .iter()
            .filter(|p| p.table == name)
            .collect();
        if policies.is_empty() {
            out.insert(table)?;
            continue;
        }
        let mut columns = Vec::new();
        for column in table.into_columns() {
            match policies.iter().find(|p| p.column == column.name) {
                Some(policy) => {
                    columns.extend(apply_policy(column, policy, settings, &mut encoders)?)
                }
                None => columns.push(column),
            }
        }
        out.insert(Table::new(name, key.clone(), columns)?)?;
    }
    Ok((out, encoders))
}
