//! Seeded synthetic data: a multi-table company corpus shaped like the
//! real competition sheets (with their dirt: exception tokens, mixed date
//! layouts, unit-bearing numbers, duplicates), the matching "paper-shape"
//! pipeline configuration, and a flat matrix for selection experiments.

use std::path::{Path, PathBuf};

use crate::config::{
    CvSettings, FeatureSettings, LabelSettings, ModelChoice, ModelSettings, OutputPaths,
    PipelineConfig, SelectionSettings,
};
use crate::error::Result;
use crate::features::{AggregationPlan, FeatureMatrix, IntervalSpec, Stat, Transform, ROWS};
use crate::gbm::{EfbConfig, GossConfig, GrowthVariant, TrainConfig};
use crate::pipeline;
use crate::preprocess::{
    date_parts, ColumnPolicy, CurrencyUnit, EncoderKind, FillValue, PreprocessSettings,
};
use crate::rng::{Purpose, SplitRng};
use crate::select::Criterion;
use crate::stack::RidgeParams;
use crate::tabular::{
    write_text, Column, ColumnKind, ColumnSpec, MultiTableCorpus, SchemaSet, Table, TableSchema,
    Value,
};

pub const KEY: &str = "company_id";
pub const LABELS_FILE: &str = "labels.csv";
pub const DEFAULT_COMPANIES: usize = 3500;
pub const DEFAULT_SEED: u64 = 2019;
pub const PAPER_SHAPE_FEATURES: usize = 436;

/// Category vocabulary sizes of the one-hot expanded columns.
const N_INDUSTRY: usize = 97;
const N_ECON_DIVISION: usize = 90;
const N_TRADEMARK_STATE: usize = 80;
const N_PATENT_TYPE: usize = 6;
const N_PATENT_STATE: usize = 50;

/// Matrix columns the synthetic score is built from, with their weights.
pub const PLANTED: [(&str, f64); 10] = [
    ("base_info.registered_capital.id.mean", 6.0),
    ("ratios.current_liab_ratio.id.std", 4.5),
    ("ratios.total_asset_turnover.id.mean", 4.0),
    ("per_share.eps.id.std", 3.5),
    ("per_share.provident_fund_ps.id.mean", 3.0),
    ("land.transaction_price.id.median", 2.5),
    ("per_share.net_assets_ps.id.mean", 2.5),
    ("capital.paid_in.id.log_mean", 2.0),
    ("base_info.employees.id.mean", 2.0),
    ("balance.total_assets.id.mean", 1.5),
];

const SCORE_CENTER: f64 = 70.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub companies: usize,
    pub seed: u64,
    /// Standard deviation of the label noise.
    pub noise_sd: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            companies: DEFAULT_COMPANIES,
            seed: DEFAULT_SEED,
            noise_sd: 3.0,
        }
    }
}

type TableLayout = (&'static str, &'static [(&'static str, ColumnKind)]);

use ColumnKind::{Categorical as C, Date as D, Numeric as N, Text as T};

const LAYOUT: &[TableLayout] = &[
    (
        "base_info",
        &[
            ("registered_capital", N),
            ("currency", C),
            ("employees", N),
            ("operating_state", C),
            ("industry", C),
            ("industry_small", C),
            ("company_type", C),
            ("province", C),
            ("city", C),
            ("area", C),
            ("listed", C),
            ("registration_authority", C),
            ("cancellation_reason", T),
            ("established", D),
            ("term_end", D),
        ],
    ),
    ("products", &[("product_type", C)]),
    (
        "land",
        &[
            ("land_use", C),
            ("admin_region", C),
            ("supply_area", N),
            ("transaction_price", N),
            ("total_area", N),
        ],
    ),
    (
        "tax",
        &[
            ("economic_division", C),
            ("tax_year", N),
            ("credit_rating", C),
        ],
    ),
    (
        "annual_report",
        &[
            ("report_year", N),
            ("has_website", C),
            ("has_investment", C),
            ("equity_change", C),
            ("external_guarantee", C),
            ("employees_public", C),
        ],
    ),
    (
        "competitors",
        &[
            ("product_tag", C),
            ("funding_round", C),
            ("address", C),
            ("operation_status", C),
        ],
    ),
    ("capital", &[("subscribed", N), ("paid_in", N)]),
    ("trademarks", &[("state", C), ("application_date", D)]),
    (
        "per_share",
        &[
            ("eps", N),
            ("net_assets_ps", N),
            ("provident_fund_ps", N),
            ("undistributed_ps", N),
            ("op_cashflow_ps", N),
        ],
    ),
    (
        "ratios",
        &[
            ("debt_ratio", N),
            ("current_liab_ratio", N),
            ("liquidity_ratio", N),
            ("quick_ratio", N),
            ("total_revenue", N),
            ("total_asset_turnover", N),
            ("receivable_days", N),
            ("inventory_days", N),
        ],
    ),
    (
        "balance",
        &[
            ("monetary_capital", N),
            ("fixed_assets", N),
            ("intangible_assets", N),
            ("total_assets", N),
            ("total_liabilities", N),
        ],
    ),
    (
        "certificates",
        &[("cert_label", C), ("cert_province", C), ("cert_name", C)],
    ),
    ("bonds", &[("coupon_rate", N), ("planned_issuance", N)]),
    ("patents", &[("patent_type", C), ("patent_state", C)]),
];

pub fn paper_shape_schema() -> SchemaSet {
    SchemaSet {
        key: KEY.to_string(),
        tables: LAYOUT
            .iter()
            .map(|(name, columns)| TableSchema {
                name: name.to_string(),
                file: format!("{name}.csv"),
                columns: columns
                    .iter()
                    .map(|(c, kind)| ColumnSpec {
                        name: c.to_string(),
                        kind: *kind,
                    })
                    .collect(),
            })
            .collect(),
    }
}

fn policy(table: &str, column: &str) -> ColumnPolicy {
    ColumnPolicy {
        table: table.to_string(),
        column: column.to_string(),
        ..ColumnPolicy::default()
    }
}

fn label(table: &str, column: &str) -> ColumnPolicy {
    ColumnPolicy {
        encode: vec![EncoderKind::Label],
        ..policy(table, column)
    }
}

fn one_hot(table: &str, column: &str) -> ColumnPolicy {
    ColumnPolicy {
        encode: vec![EncoderKind::OneHot],
        ..policy(table, column)
    }
}

fn sanitized(table: &str, column: &str) -> ColumnPolicy {
    ColumnPolicy {
        sanitize: true,
        ..policy(table, column)
    }
}

fn paper_shape_preprocess() -> PreprocessSettings {
    let mut columns = vec![
        ColumnPolicy {
            sanitize: true,
            unit: Some(CurrencyUnit::TenThousandYuan),
            ..policy("base_info", "registered_capital")
        },
        label("base_info", "currency"),
        ColumnPolicy {
            sanitize: true,
            extract_number: true,
            fill: Some(FillValue::MinusNinetyNine),
            ..policy("base_info", "employees")
        },
        label("base_info", "operating_state"),
        ColumnPolicy {
            encode: vec![EncoderKind::Label, EncoderKind::OneHot],
            ..policy("base_info", "industry")
        },
    ];
    for c in [
        "industry_small",
        "company_type",
        "province",
        "city",
        "area",
        "listed",
        "registration_authority",
    ] {
        columns.push(label("base_info", c));
    }
    columns.extend([
        ColumnPolicy {
            indicator: true,
            ..policy("base_info", "cancellation_reason")
        },
        ColumnPolicy {
            date: true,
            ..policy("base_info", "established")
        },
        ColumnPolicy {
            date: true,
            ..policy("base_info", "term_end")
        },
        sanitized("land", "supply_area"),
        ColumnPolicy {
            sanitize: true,
            unit: Some(CurrencyUnit::TenThousandYuan),
            ..policy("land", "transaction_price")
        },
        sanitized("land", "total_area"),
        one_hot("tax", "economic_division"),
        ColumnPolicy {
            credit_rating: true,
            ..policy("tax", "credit_rating")
        },
    ]);
    for c in [
        "has_website",
        "has_investment",
        "equity_change",
        "external_guarantee",
        "employees_public",
    ] {
        columns.push(label("annual_report", c));
    }
    for c in ["subscribed", "paid_in"] {
        columns.push(ColumnPolicy {
            extract_number: true,
            unit: Some(CurrencyUnit::TenThousandYuan),
            ..policy("capital", c)
        });
    }
    columns.push(one_hot("trademarks", "state"));
    for c in [
        "eps",
        "net_assets_ps",
        "provident_fund_ps",
        "undistributed_ps",
        "op_cashflow_ps",
    ] {
        columns.push(sanitized("per_share", c));
    }
    for c in [
        "debt_ratio",
        "current_liab_ratio",
        "liquidity_ratio",
        "quick_ratio",
        "total_revenue",
        "total_asset_turnover",
        "receivable_days",
        "inventory_days",
    ] {
        columns.push(sanitized("ratios", c));
    }
    for c in [
        "monetary_capital",
        "fixed_assets",
        "intangible_assets",
        "total_assets",
        "total_liabilities",
    ] {
        columns.push(sanitized("balance", c));
    }
    columns.push(sanitized("bonds", "coupon_rate"));
    columns.push(ColumnPolicy {
        sanitize: true,
        unit: Some(CurrencyUnit::HundredMillionYuan),
        ..policy("bonds", "planned_issuance")
    });
    columns.push(one_hot("patents", "patent_type"));
    columns.push(one_hot("patents", "patent_state"));
    PreprocessSettings {
        columns,
        ..PreprocessSettings::default()
    }
}

fn plan(table: &str, column: &str, stats: &[Stat]) -> AggregationPlan {
    AggregationPlan::new(table, column, stats)
}

/// One plan per row of the feature inventory; 436 columns on a corpus where
/// every category token occurs.
pub fn paper_shape_plans() -> Vec<AggregationPlan> {
    use Stat::*;
    let mut plans = Vec::new();
    for (table, _) in LAYOUT {
        plans.push(plan(table, ROWS, &[Count]));
    }
    for c in ["registered_capital", "employees"] {
        plans.push(plan("base_info", c, &[Mean]));
    }
    for c in [
        "currency",
        "operating_state",
        "industry",
        "industry_small",
        "company_type",
        "province",
        "city",
        "area",
        "listed",
        "registration_authority",
    ] {
        plans.push(plan("base_info", c, &[Mean]));
    }
    plans.push(plan("base_info", "industry=*", &[Sum]));
    plans.push(plan("base_info", "cancellation_reason", &[Mean]));
    plans.push(plan("base_info", "operating_term", &[Mean]));
    plans.push(plan("products", "product_type", &[Count, Nunique]));
    for c in ["land_use", "admin_region"] {
        plans.push(plan("land", c, &[Nunique]));
    }
    for c in ["supply_area", "transaction_price"] {
        plans.push(plan("land", c, &[Median, Mean, Max, Min, Std, Skew]));
    }
    plans.push(plan("land", "total_area", &[Mean]));
    plans.push(plan("tax", "economic_division=*", &[Sum]));
    plans.push(plan("tax", "tax_year", &[Count]));
    plans.push(plan("tax", "credit_rating", &[Mean]));
    plans.push(plan(
        "annual_report",
        "report_year",
        &[Count, Mean, Max, Std],
    ));
    for c in [
        "has_website",
        "has_investment",
        "equity_change",
        "external_guarantee",
        "employees_public",
    ] {
        plans.push(plan("annual_report", c, &[Sum]));
    }
    for c in [
        "product_tag",
        "funding_round",
        "address",
        "operation_status",
    ] {
        plans.push(plan("competitors", c, &[Count, Nunique]));
    }
    for c in ["subscribed", "paid_in"] {
        plans.push(plan("capital", c, &[LogMean]));
    }
    plans.push(plan("trademarks", "state=*", &[Sum]));
    plans.push(
        plan(
            "trademarks",
            "application_date",
            &[Mean, Max, Std, Skew, Kurt],
        )
        .with_transform(Transform::FirstDifference),
    );
    for t in [Transform::YearOf, Transform::DayOf] {
        plans.push(
            plan(
                "trademarks",
                "application_date",
                &[Nunique, Max, Min, Mean, Median],
            )
            .with_transform(t),
        );
    }
    for c in [
        "eps",
        "net_assets_ps",
        "provident_fund_ps",
        "undistributed_ps",
        "op_cashflow_ps",
    ] {
        plans.push(plan("per_share", c, &[Mean, Std]));
    }
    for c in [
        "debt_ratio",
        "current_liab_ratio",
        "liquidity_ratio",
        "quick_ratio",
    ] {
        plans.push(plan("ratios", c, &[Mean, Std]));
    }
    for c in [
        "total_revenue",
        "total_asset_turnover",
        "receivable_days",
        "inventory_days",
    ] {
        plans.push(plan("ratios", c, &[Mean]));
    }
    for c in [
        "monetary_capital",
        "fixed_assets",
        "intangible_assets",
        "total_assets",
        "total_liabilities",
    ] {
        plans.push(plan("balance", c, &[Mean]));
    }
    for c in ["cert_label", "cert_province", "cert_name"] {
        plans.push(plan("certificates", c, &[Nunique]));
    }
    for c in ["coupon_rate", "planned_issuance"] {
        plans.push(plan("bonds", c, &[Mean]));
    }
    plans.push(plan("patents", "patent_type=*", &[Sum]));
    plans.push(plan("patents", "patent_state=*", &[Sum]));
    plans
}

pub fn depthwise_booster() -> TrainConfig {
    TrainConfig {
        variant: GrowthVariant::Depthwise,
        n_rounds: 300,
        max_depth: 4,
        learning_rate: 0.05,
        colsample: 0.5,
        ..TrainConfig::default()
    }
}

pub fn leafwise_booster() -> TrainConfig {
    TrainConfig {
        variant: GrowthVariant::Leafwise,
        n_rounds: 300,
        max_depth: 6,
        max_leaves: 15,
        learning_rate: 0.05,
        min_child_hess: 5.0,
        goss: Some(GossConfig::default()),
        efb: Some(EfbConfig { max_conflict: 0 }),
        ..TrainConfig::default()
    }
}

pub fn selection_booster() -> TrainConfig {
    TrainConfig {
        variant: GrowthVariant::Depthwise,
        n_rounds: 100,
        max_depth: 3,
        ..TrainConfig::default()
    }
}

/// The shipped configuration reproducing the 436-feature inventory.
pub fn paper_shape_config() -> PipelineConfig {
    PipelineConfig {
        seed: DEFAULT_SEED,
        workers: 0,
        schema: paper_shape_schema(),
        preprocess: paper_shape_preprocess(),
        features: FeatureSettings {
            base_table: "base_info".into(),
            deduplicate: true,
            intervals: vec![IntervalSpec {
                table: "base_info".into(),
                from: "established".into(),
                to: "term_end".into(),
                name: "operating_term".into(),
            }],
            plans: paper_shape_plans(),
        },
        selection: SelectionSettings {
            criterion: Criterion::TopK(66),
            booster: selection_booster(),
        },
        models: ModelSettings {
            train: ModelChoice::Stacking,
            depthwise: depthwise_booster(),
            leafwise: leafwise_booster(),
        },
        cv: CvSettings { k: 5 },
        ridge: RidgeParams::default(),
        labels: LabelSettings::default(),
        output: OutputPaths::default(),
    }
}

struct Builder {
    name: &'static str,
    kinds: Vec<ColumnKind>,
    names: Vec<&'static str>,
    columns: Vec<Vec<Value>>,
}

impl Builder {
    fn new(layout: &TableLayout) -> Builder {
        let (name, cols) = *layout;
        Builder {
            name,
            kinds: std::iter::once(ColumnKind::Categorical)
                .chain(cols.iter().map(|c| c.1))
                .collect(),
            names: std::iter::once(KEY)
                .chain(cols.iter().map(|c| c.0))
                .collect(),
            columns: vec![Vec::new(); cols.len() + 1],
        }
    }

    fn push(&mut self, id: &str, row: Vec<Value>) {
        assert_eq!(
            row.len() + 1,
            self.columns.len(),
            "{}: row width",
            self.name
        );
        self.columns[0].push(Value::Categorical(id.to_string()));
        for (slot, v) in self.columns[1..].iter_mut().zip(row) {
            slot.push(v);
        }
    }

    fn finish(self) -> Result<Table> {
        let columns = self
            .names
            .iter()
            .zip(self.kinds)
            .zip(self.columns)
            .map(|((n, k), v)| Column::new(*n, k, v))
            .collect();
        Table::new(self.name, KEY, columns)
    }
}

/// Draw helpers over one generator.
struct Draw(SplitRng);

impl Draw {
    fn unit(&mut self) -> f64 {
        self.0.unit()
    }

    fn normal(&mut self) -> f64 {
        self.0.normal()
    }

    fn chance(&mut self, p: f64) -> bool {
        self.0.unit() < p
    }

    fn int(&mut self, lo: usize, hi: usize) -> usize {
        lo + self.0.below((hi - lo + 1) as u64) as usize
    }

    fn token(&mut self, prefix: &str, n: usize) -> Value {
        Value::Categorical(format!("{prefix}{:03}", self.0.below(n as u64)))
    }

    fn pick(&mut self, options: &[&str]) -> Value {
        Value::Categorical(options[self.0.below(options.len() as u64) as usize].to_string())
    }

    fn lognormal(&mut self, mu: f64, sigma: f64) -> f64 {
        (mu + sigma * self.normal()).exp()
    }

    /// Calendar day in [1990-01-01, 2018-12-31] as epoch seconds.
    fn date(&mut self) -> i64 {
        let (lo, hi) = (7305, 17896);
        (lo + self.0.below((hi - lo + 1) as u64) as i64) * 86_400
    }
}

/// Numeric value written with two decimals; occasionally an exception
/// token or an empty cell instead.
fn amount(x: f64, dirt: f64, d: &mut Draw) -> Value {
    if d.chance(dirt) {
        return if d.chance(0.5) {
            Value::Text("--".into())
        } else {
            Value::Missing
        };
    }
    Value::Numeric((x * 100.0).round() / 100.0)
}

/// Cycles deterministically through a vocabulary first, then draws at
/// random, so every token is guaranteed to occur.
struct Coverage {
    prefix: &'static str,
    size: usize,
    next: usize,
}

impl Coverage {
    fn new(prefix: &'static str, size: usize) -> Coverage {
        Coverage {
            prefix,
            size,
            next: 0,
        }
    }

    fn draw(&mut self, d: &mut Draw) -> Value {
        let i = if self.next < self.size {
            self.next += 1;
            self.next - 1
        } else {
            d.0.below(self.size as u64) as usize
        };
        Value::Categorical(format!("{}{:03}", self.prefix, i))
    }
}

fn date_text(stamp: i64, layout: usize) -> Value {
    let p = date_parts(stamp);
    Value::Text(match layout {
        0 => format!("{:04}-{:02}-{:02}", p.year, p.month, p.day),
        1 => format!("{:04}/{:02}/{:02}", p.year, p.month, p.day),
        _ => format!("{:04}年{:02}月{:02}日", p.year, p.month, p.day),
    })
}

pub fn company_ids(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("C{i:05}")).collect()
}

fn rng(spec: &SyntheticSpec, table: usize) -> Draw {
    Draw(SplitRng::new(spec.seed, Purpose::Synthetic, table as u32))
}

/// Raw corpus, as a loader would see it after reading the CSV files.
pub fn generate_corpus(spec: &SyntheticSpec) -> Result<MultiTableCorpus> {
    let ids = company_ids(spec.companies);
    let mut corpus = MultiTableCorpus::new(KEY);
    let mut builders: Vec<Builder> = LAYOUT.iter().map(Builder::new).collect();

    // base_info
    {
        let mut d = rng(spec, 0);
        let mut industry = Coverage::new("IND", N_INDUSTRY);
        let b = &mut builders[0];
        for id in &ids {
            let capital = d.lognormal(7.0, 1.3);
            let employees = d.lognormal(4.5, 1.0).round();
            let employees = if d.chance(0.03) {
                Value::Text("--".into())
            } else if d.chance(0.03) {
                Value::Missing
            } else {
                Value::Text(format!("{employees}人"))
            };
            let established = d.date();
            let term_years = d.int(10, 50) as i64;
            let term_end = established + term_years * 365 * 86_400 + d.int(0, 30) as i64 * 86_400;
            let layout = d.int(0, 2);
            let established = if d.chance(0.01) {
                Value::Text("unknown".into())
            } else {
                date_text(established, layout)
            };
            let row = vec![
                amount(capital, 0.02, &mut d),
                d.pick(&[
                    "CNY", "CNY", "CNY", "CNY", "CNY", "CNY", "CNY", "CNY", "USD", "HKD",
                ]),
                employees,
                d.pick(&["active", "operating", "cancelled", "moved"]),
                industry.draw(&mut d),
                d.token("S", 300),
                d.token("TYPE", 6),
                d.token("P", 31),
                d.token("CITY", 300),
                d.token("AREA", 1000),
                d.pick(&["yes", "no"]),
                d.token("RA", 200),
                if d.chance(0.1) {
                    d.pick(&["relocation", "merger", "revoked"])
                } else {
                    Value::Missing
                },
                established,
                date_text(term_end, layout),
            ];
            let duplicate = d.chance(0.01);
            b.push(id, row.clone());
            if duplicate {
                b.push(id, row);
            }
        }
    }
    // products
    {
        let mut d = rng(spec, 1);
        for id in &ids {
            for _ in 0..d.int(0, 6) {
                let v = if d.chance(0.05) {
                    Value::Missing
                } else {
                    d.token("PROD", 40)
                };
                builders[1].push(id, vec![v]);
            }
        }
    }
    // land
    {
        let mut d = rng(spec, 2);
        for id in &ids {
            if d.chance(0.2) {
                continue;
            }
            let level = d.normal();
            for _ in 0..d.int(1, 5) {
                let area = d.lognormal(9.0, 1.0);
                let price = d.lognormal(6.0 + 0.8 * level, 0.5);
                let row = vec![
                    d.token("USE", 8),
                    d.token("REG", 50),
                    amount(area, 0.02, &mut d),
                    if d.chance(0.02) {
                        Value::Text("\\xad".into())
                    } else {
                        amount(price, 0.0, &mut d)
                    },
                    amount(area * (1.0 + d.unit()), 0.02, &mut d),
                ];
                builders[2].push(id, row);
            }
        }
    }
    // tax
    {
        let mut d = rng(spec, 3);
        let mut division = Coverage::new("ED", N_ECON_DIVISION);
        let ratings = [
            "Advanced certification enterprise",
            "General certified enterprise",
            "General credit enterprise",
            "Unrated",
        ];
        for id in &ids {
            let rating = d.pick(&ratings);
            for _ in 0..d.int(1, 6) {
                let row = vec![
                    division.draw(&mut d),
                    Value::Numeric(d.int(2014, 2018) as f64),
                    if d.chance(0.8) {
                        rating.clone()
                    } else {
                        d.pick(&ratings)
                    },
                ];
                builders[3].push(id, row);
            }
        }
    }
    // annual reports
    {
        let mut d = rng(spec, 4);
        for id in &ids {
            let yn = |d: &mut Draw| {
                if d.chance(0.05) {
                    Value::Missing
                } else {
                    d.pick(&["yes", "no"])
                }
            };
            for year in 2013..=2017 {
                if d.chance(0.25) {
                    continue;
                }
                let row = vec![
                    Value::Numeric(year as f64),
                    yn(&mut d),
                    yn(&mut d),
                    yn(&mut d),
                    yn(&mut d),
                    yn(&mut d),
                ];
                builders[4].push(id, row);
            }
        }
    }
    // competitors
    {
        let mut d = rng(spec, 5);
        for id in &ids {
            for _ in 0..d.int(0, 5) {
                let row = vec![
                    d.token("TAG", 60),
                    d.pick(&["seed", "angel", "A", "B", "C", "IPO"]),
                    d.token("ADDR", 400),
                    d.pick(&["operating", "closed", "unknown"]),
                ];
                builders[5].push(id, row);
            }
        }
    }
    // capital contributions
    {
        let mut d = rng(spec, 6);
        for id in &ids {
            let level = d.normal();
            for _ in 0..d.int(1, 4) {
                let subscribed = d.lognormal(5.0 + level, 0.6);
                let paid = subscribed * (0.3 + 0.7 * d.unit());
                let text = |x: f64| Value::Text(format!("{:.2}万元", x));
                builders[6].push(id, vec![text(subscribed), text(paid)]);
            }
        }
    }
    // trademarks
    {
        let mut d = rng(spec, 7);
        let mut state = Coverage::new("TS", N_TRADEMARK_STATE);
        for id in &ids {
            for _ in 0..d.int(0, 10) {
                let row = vec![state.draw(&mut d), date_text(d.date(), d.int(0, 2))];
                builders[7].push(id, row);
            }
        }
    }
    // per-share figures
    {
        let mut d = rng(spec, 8);
        for id in &ids {
            let eps_level = 0.5 * d.normal();
            let eps_vol = 0.05 + 0.5 * d.unit();
            let nav = d.lognormal(1.5, 0.5);
            let fund = d.lognormal(0.0, 0.7);
            let undistributed = d.normal();
            let cash = d.normal();
            for _ in 0..d.int(2, 8) {
                let row = vec![
                    amount(eps_level + eps_vol * d.normal(), 0.02, &mut d),
                    amount(nav * (1.0 + 0.05 * d.normal()), 0.02, &mut d),
                    amount(fund * (1.0 + 0.1 * d.normal()), 0.02, &mut d),
                    amount(undistributed + 0.3 * d.normal(), 0.02, &mut d),
                    amount(cash + 0.5 * d.normal(), 0.02, &mut d),
                ];
                builders[8].push(id, row);
            }
        }
    }
    // ratios
    {
        let mut d = rng(spec, 9);
        for id in &ids {
            let debt = 30.0 + 40.0 * d.unit();
            let liab = 40.0 + 40.0 * d.unit();
            let liab_vol = 0.5 + 10.0 * d.unit();
            let liquidity = d.lognormal(0.4, 0.4);
            let revenue = d.lognormal(19.0, 1.5);
            let turnover = d.lognormal(-0.5, 0.5);
            let receivable = d.lognormal(4.0, 0.7);
            let inventory = d.lognormal(4.5, 0.7);
            for _ in 0..d.int(2, 8) {
                let row = vec![
                    amount(debt + 3.0 * d.normal(), 0.02, &mut d),
                    amount(liab + liab_vol * d.normal(), 0.02, &mut d),
                    amount(liquidity * (1.0 + 0.1 * d.normal()), 0.02, &mut d),
                    amount(liquidity * (0.6 + 0.1 * d.normal()), 0.02, &mut d),
                    amount(revenue * (1.0 + 0.2 * d.normal()), 0.02, &mut d),
                    amount(turnover * (1.0 + 0.1 * d.normal()), 0.02, &mut d),
                    amount(receivable * (1.0 + 0.2 * d.normal()), 0.02, &mut d),
                    amount(inventory * (1.0 + 0.2 * d.normal()), 0.02, &mut d),
                ];
                builders[9].push(id, row);
            }
        }
    }
    // balance sheet
    {
        let mut d = rng(spec, 10);
        for id in &ids {
            let assets = d.lognormal(20.0, 1.5);
            for _ in 0..d.int(1, 4) {
                let total = assets * (1.0 + 0.1 * d.normal()).abs();
                let row = vec![
                    amount(total * 0.2 * d.unit(), 0.02, &mut d),
                    amount(total * 0.4 * d.unit(), 0.02, &mut d),
                    amount(total * 0.1 * d.unit(), 0.02, &mut d),
                    amount(total, 0.02, &mut d),
                    amount(total * (0.2 + 0.6 * d.unit()), 0.02, &mut d),
                ];
                builders[10].push(id, row);
            }
        }
    }
    // certificates
    {
        let mut d = rng(spec, 11);
        for id in &ids {
            for _ in 0..d.int(0, 4) {
                let row = vec![d.token("LBL", 20), d.token("P", 31), d.token("CERT", 50)];
                builders[11].push(id, row);
            }
        }
    }
    // bonds
    {
        let mut d = rng(spec, 12);
        for id in &ids {
            if d.chance(0.8) {
                continue;
            }
            for _ in 0..d.int(1, 3) {
                let row = vec![
                    amount(3.0 + 3.0 * d.unit(), 0.02, &mut d),
                    amount(d.lognormal(1.0, 0.8), 0.02, &mut d),
                ];
                builders[12].push(id, row);
            }
        }
    }
    // patents
    {
        let mut d = rng(spec, 13);
        let mut kind = Coverage::new("PT", N_PATENT_TYPE);
        let mut state = Coverage::new("PS", N_PATENT_STATE);
        for id in &ids {
            for _ in 0..d.int(0, 8) {
                let row = vec![kind.draw(&mut d), state.draw(&mut d)];
                builders[13].push(id, row);
            }
        }
    }
    for b in builders {
        corpus.insert(b.finish()?)?;
    }
    Ok(corpus)
}

/// Maps present values to centered ranks in (-1, 1); ties share their mean
/// rank; missing maps to 0.
fn centered_ranks(values: &[Option<f64>]) -> Vec<f64> {
    let mut present: Vec<(f64, usize)> = values
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|x| (x, i)))
        .collect();
    present.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let n = present.len() as f64;
    let mut out = vec![0.0; values.len()];
    let mut start = 0;
    while start < present.len() {
        let mut end = start;
        while end + 1 < present.len() && present[end + 1].0 == present[start].0 {
            end += 1;
        }
        let rank = (start + end) as f64 / 2.0;
        for &(_, row) in &present[start..=end] {
            out[row] = 2.0 * (rank + 0.5) / n - 1.0;
        }
        start = end + 1;
    }
    out
}

/// Score per matrix row: a weighted sum of the planted columns' centered
/// ranks plus Gaussian noise.
pub fn planted_labels(matrix: &FeatureMatrix, spec: &SyntheticSpec) -> Result<Vec<f64>> {
    let mut score = vec![SCORE_CENTER; matrix.n_rows()];
    for (name, weight) in PLANTED {
        let f = matrix.feature_index(name).ok_or_else(|| {
            crate::error::Error::FeatureMismatch(format!("planted feature `{name}` not in matrix"))
        })?;
        for (s, u) in score.iter_mut().zip(centered_ranks(&matrix.column(f))) {
            *s += weight * u;
        }
    }
    let mut d = rng(spec, 100);
    for s in &mut score {
        *s += spec.noise_sd * d.normal();
    }
    Ok(score)
}

pub fn write_labels(path: &Path, ids: &[String], y: &[f64]) -> Result<()> {
    let mut text = String::from("id,score\n");
    for (id, v) in ids.iter().zip(y) {
        text.push_str(&format!("{id},{v}\n"));
    }
    write_text(path, &text)
}

#[derive(Debug, Clone)]
pub struct SyntheticOutput {
    pub directory: PathBuf,
    pub labels: PathBuf,
    pub n_companies: usize,
    pub n_features: usize,
}

/// Writes the corpus CSVs plus `labels.csv` into `directory`. Labels are
/// computed from the matrix the paper-shape pipeline builds out of the
/// files just written.
pub fn generate(spec: &SyntheticSpec, directory: &Path) -> Result<SyntheticOutput> {
    std::fs::create_dir_all(directory).map_err(|e| crate::error::Error::io(directory, e))?;
    let config = paper_shape_config();
    generate_corpus(spec)?.write_csv(directory, &config.schema)?;
    let matrix = pipeline::build_matrix(&config, directory)?;
    let y = planted_labels(&matrix, spec)?;
    let labels = directory.join(LABELS_FILE);
    write_labels(&labels, matrix.ids(), &y)?;
    Ok(SyntheticOutput {
        directory: directory.to_path_buf(),
        labels,
        n_companies: matrix.n_rows(),
        n_features: matrix.n_features(),
    })
}

/// Flat matrix with `informative` signal columns hidden among `noise`
/// columns at seeded positions. Returns the matrix, targets, and the names
/// of the informative columns.
pub fn selection_matrix(
    seed: u64,
    rows: usize,
    informative: usize,
    noise: usize,
) -> Result<(FeatureMatrix, Vec<f64>, Vec<String>)> {
    let width = informative + noise;
    let mut d = Draw(SplitRng::new(seed, Purpose::Synthetic, 1000));
    let mut positions: Vec<usize> = (0..width).collect();
    d.0.shuffle(&mut positions);
    let signal: Vec<usize> = positions[..informative].to_vec();
    let names: Vec<String> = (0..width).map(|i| format!("f{i:03}")).collect();
    let mut data = Vec::with_capacity(rows * width);
    let mut y = Vec::with_capacity(rows);
    for _ in 0..rows {
        let row: Vec<f64> = (0..width).map(|_| d.normal()).collect();
        let mut target = 0.0;
        for (j, &col) in signal.iter().enumerate() {
            let x = row[col];
            let w = 3.0 - 0.15 * j as f64;
            target += w * if j % 2 == 0 { x } else { x.abs() - 0.8 };
        }
        y.push(target + d.normal());
        data.extend(row);
    }
    let ids = (0..rows).map(|i| format!("r{i}")).collect();
    let informative_names = signal.iter().map(|&c| names[c].clone()).collect();
    Ok((
        FeatureMatrix::from_dense(ids, names, &data)?,
        y,
        informative_names,
    ))
}
