//! Columnar multi-table data model and CSV ingestion.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess;

pub const SECONDS_PER_DAY: i64 = 86_400;

/// One cell. `Numeric` is always finite; NaN and infinities are stored as
/// `Missing`.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Numeric(f64),
    Categorical(String),
    /// Seconds since the Unix epoch, UTC.
    Date(i64),
    Text(String),
    Missing,
}

impl Value {
    pub fn numeric(x: f64) -> Value {
        if x.is_finite() {
            Value::Numeric(x)
        } else {
            Value::Missing
        }
    }

    pub fn is_missing(&self) -> bool {
        matches!(self, Value::Missing)
    }

    /// Numeric view used by aggregation: numbers as-is, dates as seconds.
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Numeric(x) => Some(*x),
            Value::Date(t) => Some(*t as f64),
            _ => None,
        }
    }

    pub(crate) fn key(&self) -> ValueKey {
        match self {
            // +0.0 and -0.0 compare equal, so they share a key
            Value::Numeric(x) => ValueKey::Numeric(if *x == 0.0 { 0 } else { x.to_bits() }),
            Value::Categorical(s) => ValueKey::Categorical(s.clone()),
            Value::Date(t) => ValueKey::Date(*t),
            Value::Text(s) => ValueKey::Text(s.clone()),
            Value::Missing => ValueKey::Missing,
        }
    }

    fn to_cell(&self) -> String {
        match self {
            Value::Numeric(x) => format!("{x}"),
            Value::Categorical(s) | Value::Text(s) => s.clone(),
            Value::Date(t) => {
                if t.rem_euclid(SECONDS_PER_DAY) == 0 {
                    let parts = preprocess::date_parts(*t);
                    format!("{:04}-{:02}-{:02}", parts.year, parts.month, parts.day)
                } else {
                    t.to_string()
                }
            }
            Value::Missing => String::new(),
        }
    }
}

/// Hashable, totally ordered image of a [`Value`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub(crate) enum ValueKey {
    Numeric(u64),
    Categorical(String),
    Date(i64),
    Text(String),
    Missing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
    Date,
    Text,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
    pub values: Vec<Value>,
}

impl Column {
    pub fn new(name: impl Into<String>, kind: ColumnKind, values: Vec<Value>) -> Self {
        Column {
            name: name.into(),
            kind,
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub(crate) fn expect_kind(&self, expected: ColumnKind) -> Result<()> {
        if self.kind == expected {
            Ok(())
        } else {
            Err(Error::Kind {
                column: self.name.clone(),
                expected,
                actual: self.kind,
            })
        }
    }
}

/// A named table whose rows are keyed by a company identifier column.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    name: String,
    key_column: String,
    columns: Vec<Column>,
}

impl Table {
    pub fn new(
        name: impl Into<String>,
        key_column: impl Into<String>,
        columns: Vec<Column>,
    ) -> Result<Self> {
        let name = name.into();
        let key_column = key_column.into();
        let Some(key) = columns.iter().find(|c| c.name == key_column) else {
            return Err(Error::Ingest {
                table: name,
                message: format!("key column `{key_column}` not present"),
            });
        };
        if let Some(row) = key.values.iter().position(Value::is_missing) {
            return Err(Error::Ingest {
                table: name,
                message: format!("key column `{key_column}` is empty at row {}", row + 1),
            });
        }
        let n = key.len();
        if let Some(bad) = columns.iter().find(|c| c.len() != n) {
            return Err(Error::Ingest {
                table: name,
                message: format!("column `{}` has {} rows, key has {n}", bad.name, bad.len()),
            });
        }
        let mut seen = HashSet::new();
        if let Some(dup) = columns.iter().find(|c| !seen.insert(c.name.as_str())) {
            return Err(Error::Ingest {
                table: name,
                message: format!("duplicate column `{}`", dup.name),
            });
        }
        Ok(Table {
            name,
            key_column,
            columns,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn key_column(&self) -> &str {
        &self.key_column
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, Column::len)
    }

    pub fn keys(&self) -> &[Value] {
        &self
            .column(&self.key_column)
            .expect("key column checked at construction")
            .values
    }

    /// Company id of each row, rendered as text.
    pub fn key_strings(&self) -> Vec<String> {
        self.keys().iter().map(Value::to_cell).collect()
    }

    /// Replaces the column list, re-validating invariants.
    pub fn with_columns(self, columns: Vec<Column>) -> Result<Table> {
        Table::new(self.name, self.key_column, columns)
    }

    pub(crate) fn into_columns(self) -> Vec<Column> {
        self.columns
    }

    fn select_rows(&self, rows: &[usize]) -> Table {
        let columns = self
            .columns
            .iter()
            .map(|c| {
                Column::new(
                    c.name.clone(),
                    c.kind,
                    rows.iter().map(|&r| c.values[r].clone()).collect(),
                )
            })
            .collect();
        Table {
            name: self.name.clone(),
            key_column: self.key_column.clone(),
            columns,
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut writer = csv::Writer::from_writer(file);
        writer.write_record(self.columns.iter().map(|c| c.name.as_str()))?;
        for row in 0..self.n_rows() {
            writer.write_record(self.columns.iter().map(|c| c.values[row].to_cell()))?;
        }
        writer.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Exact-duplicate row removal, keeping the first occurrence.
pub fn deduplicate(table: &Table) -> Table {
    let mut seen = HashSet::new();
    let keep: Vec<usize> = (0..table.n_rows())
        .filter(|&r| {
            let row: Vec<ValueKey> = table.columns.iter().map(|c| c.values[r].key()).collect();
            seen.insert(row)
        })
        .collect();
    table.select_rows(&keep)
}

/// How to resolve several rows sharing one key (e.g. conflicting labels).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DuplicateKeyPolicy {
    #[default]
    KeepFirst,
    Reject,
}

pub fn deduplicate_keys(table: &Table, policy: DuplicateKeyPolicy) -> Result<Table> {
    let mut seen = HashSet::new();
    let mut keep = Vec::with_capacity(table.n_rows());
    for (row, key) in table.keys().iter().enumerate() {
        if seen.insert(key.key()) {
            keep.push(row);
        } else if policy == DuplicateKeyPolicy::Reject {
            return Err(Error::Ingest {
                table: table.name.clone(),
                message: format!("duplicate key `{}` at row {}", key.to_cell(), row + 1),
            });
        }
    }
    Ok(table.select_rows(&keep))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableSchema {
    pub name: String,
    pub file: String,
    /// Non-key columns, in output order. The key column is implicit.
    pub columns: Vec<ColumnSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaSet {
    pub key: String,
    #[serde(default)]
    pub tables: Vec<TableSchema>,
}

impl SchemaSet {
    pub fn table(&self, name: &str) -> Option<&TableSchema> {
        self.tables.iter().find(|t| t.name == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiTableCorpus {
    key_name: String,
    tables: BTreeMap<String, Table>,
}

impl MultiTableCorpus {
    pub fn new(key_name: impl Into<String>) -> Self {
        MultiTableCorpus {
            key_name: key_name.into(),
            tables: BTreeMap::new(),
        }
    }

    pub fn key_name(&self) -> &str {
        &self.key_name
    }

    pub fn insert(&mut self, table: Table) -> Result<()> {
        if table.key_column() != self.key_name {
            return Err(Error::Ingest {
                table: table.name().to_string(),
                message: format!(
                    "key column `{}` differs from corpus key `{}`",
                    table.key_column(),
                    self.key_name
                ),
            });
        }
        self.tables.insert(table.name().to_string(), table);
        Ok(())
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.get(name)
    }

    pub fn tables(&self) -> impl Iterator<Item = &Table> {
        self.tables.values()
    }

    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }

    pub(crate) fn into_tables(self) -> BTreeMap<String, Table> {
        self.tables
    }

    /// Writes each table as CSV using the file names from `schema`.
    pub fn write_csv(&self, directory: &Path, schema: &SchemaSet) -> Result<()> {
        for entry in &schema.tables {
            let table = self.table(&entry.name).ok_or_else(|| Error::Ingest {
                table: entry.name.clone(),
                message: "table not in corpus".into(),
            })?;
            table.write_csv(&directory.join(&entry.file))?;
        }
        Ok(())
    }
}

fn parse_cell(raw: &str, kind: ColumnKind) -> Value {
    if raw.is_empty() {
        return Value::Missing;
    }
    match kind {
        ColumnKind::Numeric => match raw.parse::<f64>() {
            Ok(x) => Value::numeric(x),
            Err(_) => Value::Text(raw.to_string()),
        },
        ColumnKind::Categorical => Value::Categorical(raw.to_string()),
        ColumnKind::Date => match preprocess::convert_date(raw) {
            Ok(parts) => Value::Date(parts.stamp),
            Err(_) => match raw.parse::<i64>() {
                Ok(t) => Value::Date(t),
                Err(_) => Value::Text(raw.to_string()),
            },
        },
        ColumnKind::Text => Value::Text(raw.to_string()),
    }
}

/// Reads one CSV table. The header must contain the key column plus exactly
/// the schema's columns (any order); output columns follow schema order.
pub fn load_table(path: &Path, key: &str, schema: &TableSchema) -> Result<Table> {
    let file = File::open(path).map_err(|e| Error::Ingest {
        table: schema.name.clone(),
        message: format!("cannot open {}: {e}", path.display()),
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();

    let declared: Vec<(&str, ColumnKind)> = std::iter::once((key, ColumnKind::Categorical))
        .chain(schema.columns.iter().map(|c| (c.name.as_str(), c.kind)))
        .collect();
    let unknown: Vec<String> = header
        .iter()
        .filter(|h| !declared.iter().any(|(n, _)| n == h))
        .cloned()
        .collect();
    if !unknown.is_empty() {
        return Err(Error::UnknownColumns {
            table: schema.name.clone(),
            unknown,
        });
    }
    let mut positions = Vec::with_capacity(declared.len());
    for (name, _) in &declared {
        let pos = header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Ingest {
                table: schema.name.clone(),
                message: format!("declared column `{name}` missing from header"),
            })?;
        positions.push(pos);
    }

    let mut values: Vec<Vec<Value>> = vec![Vec::new(); declared.len()];
    for record in reader.records() {
        let record = record?;
        for (slot, (&pos, (_, kind))) in positions.iter().zip(&declared).enumerate() {
            values[slot].push(parse_cell(record.get(pos).unwrap_or(""), *kind));
        }
    }
    let columns = declared
        .iter()
        .zip(values)
        .map(|((name, kind), vals)| Column::new(*name, *kind, vals))
        .collect();
    Table::new(schema.name.clone(), key, columns)
}

/// Loads one CSV per schema entry from `directory`.
pub fn load_corpus(directory: &Path, schema: &SchemaSet) -> Result<MultiTableCorpus> {
    let tables: Vec<Table> = schema
        .tables
        .par_iter()
        .map(|entry| {
            let path = directory.join(&entry.file);
            if !path.is_file() {
                return Err(Error::Ingest {
                    table: entry.name.clone(),
                    message: format!("missing file {}", path.display()),
                });
            }
            load_table(&path, &schema.key, entry)
        })
        .collect::<Result<_>>()?;
    let mut corpus = MultiTableCorpus::new(schema.key.clone());
    for table in tables {
        corpus.insert(table)?;
    }
    Ok(corpus)
}

/// Writes a tiny CSV file; used by generators and tests.
pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(contents.as_bytes())
        .map_err(|e| Error::io(path, e))
}
