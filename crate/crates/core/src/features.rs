//! Recency, frequency, monetary and profile (RFMP) features.
//!
//! Trades are split three ways: third-party initiated (dividends, income
//! distributions, interest), systematic (scheduled, automated) and periodic
//! (ad hoc, client or advisor initiated). Monetary statistics are computed per
//! class on the trade amount, i.e. size × unit value.
//!
//! Column order of the numeric block is frozen (see [`NUMERIC_COLUMNS`]);
//! saved cluster models depend on it.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{ClientField, ClientRecord, TransactionRecord};
use crate::numeric::ExactSum;

/// The three behavioural trade classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TradeClass {
    ThirdParty,
    Systematic,
    Periodic,
}

impl TradeClass {
    pub const ALL: [TradeClass; 3] = [
        TradeClass::ThirdParty,
        TradeClass::Systematic,
        TradeClass::Periodic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TradeClass::ThirdParty => "third_party",
            TradeClass::Systematic => "systematic",
            TradeClass::Periodic => "periodic",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for TradeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Trade and transaction types found in the dealer records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TradeType {
    Dividend,
    IncomeDistribution,
    Interest,
    AutoWithdrawal,
    PreAuthorizedContribution,
    AssetAllocation,
    ReinvestDividend,
    Buy,
    Sell,
    Contribution,
    Exchange,
    Payment,
    EftWithdrawal,
    EftDeposit,
    Tfsa,
    SpousalContribution,
    Redeem,
    Withdrawal,
}

/// Whether money moves into or out of the client's holdings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Buy,
    Sell,
    Neutral,
}

impl TradeType {
    pub const ALL: [TradeType; 18] = [
        TradeType::Dividend,
        TradeType::IncomeDistribution,
        TradeType::Interest,
        TradeType::AutoWithdrawal,
        TradeType::PreAuthorizedContribution,
        TradeType::AssetAllocation,
        TradeType::ReinvestDividend,
        TradeType::Buy,
        TradeType::Sell,
        TradeType::Contribution,
        TradeType::Exchange,
        TradeType::Payment,
        TradeType::EftWithdrawal,
        TradeType::EftDeposit,
        TradeType::Tfsa,
        TradeType::SpousalContribution,
        TradeType::Redeem,
        TradeType::Withdrawal,
    ];

    pub fn label(self) -> &'static str {
        match self {
            TradeType::Dividend => "Dividend",
            TradeType::IncomeDistribution => "Income distribution",
            TradeType::Interest => "Interest",
            TradeType::AutoWithdrawal => "Auto withdrawal",
            TradeType::PreAuthorizedContribution => "Pre-authorized contribution",
            TradeType::AssetAllocation => "Asset allocation",
            TradeType::ReinvestDividend => "Reinvest dividend",
            TradeType::Buy => "Buy",
            TradeType::Sell => "Sell",
            TradeType::Contribution => "Contribution",
            TradeType::Exchange => "Exchange",
            TradeType::Payment => "Payment",
            TradeType::EftWithdrawal => "EFT withdrawal",
            TradeType::EftDeposit => "EFT deposit",
            TradeType::Tfsa => "TFSA",
            TradeType::SpousalContribution => "Spousal contribution",
            TradeType::Redeem => "Redeem",
            TradeType::Withdrawal => "Withdrawal",
        }
    }

    pub fn class(self) -> TradeClass {
        use TradeType::*;
        match self {
            Dividend | IncomeDistribution | Interest => TradeClass::ThirdParty,
            AutoWithdrawal | PreAuthorizedContribution | AssetAllocation | ReinvestDividend => {
                TradeClass::Systematic
            }
            Buy | Sell | Contribution | Exchange | Payment | EftWithdrawal | EftDeposit | Tfsa
            | SpousalContribution | Redeem | Withdrawal => TradeClass::Periodic,
        }
    }

    pub fn direction(self) -> Direction {
        use TradeType::*;
        match self {
            Buy
            | Contribution
            | PreAuthorizedContribution
            | EftDeposit
            | Tfsa
            | SpousalContribution
            | ReinvestDividend => Direction::Buy,
            Sell | Redeem | Withdrawal | EftWithdrawal | AutoWithdrawal | Payment => {
                Direction::Sell
            }
            Dividend | IncomeDistribution | Interest | Exchange | AssetAllocation => {
                Direction::Neutral
            }
        }
    }
}

fn normalize_type(s: &str) -> String {
    let lower = s.to_ascii_lowercase();
    let stripped = match lower.find('(') {
        Some(i) => lower[..i].to_string(),
        None => lower,
    };
    stripped
        .replace(['-', '_'], " ")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

impl FromStr for TradeType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = normalize_type(s);
        let found = TradeType::ALL
            .into_iter()
            .find(|t| normalize_type(t.label()) == norm);
        if let Some(t) = found {
            return Ok(t);
        }
        let alias = match norm.as_str() {
            "pac" | "pre authorised contribution" => Some(TradeType::PreAuthorizedContribution),
            "auto withdrawl" | "automatic withdrawal" => Some(TradeType::AutoWithdrawal),
            "eft" | "electronic funds transfer" => Some(TradeType::EftWithdrawal),
            "tfsa contribution" => Some(TradeType::Tfsa),
            "reinvested dividend" => Some(TradeType::ReinvestDividend),
            _ => None,
        };
        alias.ok_or_else(|| Error::UnknownTradeType(s.to_string()))
    }
}

impl fmt::Display for TradeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Monetary value of a trade in CAD.
pub fn trade_amount(t: &TransactionRecord) -> f64 {
    t.size * t.unit_value
}

/// Classify a raw trade type string.
pub fn classify_trade(trade_type: &str) -> Result<TradeClass> {
    TradeType::from_str(trade_type).map(TradeType::class)
}

/// Days between the most recent trade and the snapshot.
pub fn recency(txns: &[&TransactionRecord], snapshot: NaiveDate) -> Result<i64> {
    let last = txns
        .iter()
        .map(|t| t.order_date)
        .max()
        .ok_or_else(|| Error::invalid("recency of a client without transactions"))?;
    if last > snapshot {
        return Err(Error::invalid(format!(
            "transaction dated {last} after snapshot {snapshot}"
        )));
    }
    Ok((snapshot - last).num_days())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyStats {
    pub trade_count: usize,
    pub trades_per_day: f64,
    pub avg_days_between: f64,
}

/// Trade count, trades per day and mean days between trades, measured from
/// the first trade to the snapshot. The span is clamped to at least one day.
pub fn frequency_stats(txns: &[&TransactionRecord], snapshot: NaiveDate) -> Result<FrequencyStats> {
    let first = txns
        .iter()
        .map(|t| t.order_date)
        .min()
        .ok_or_else(|| Error::invalid("frequency of a client without transactions"))?;
    recency(txns, snapshot)?;
    let count = txns.len();
    let span = (snapshot - first).num_days().max(1) as f64;
    Ok(FrequencyStats {
        trade_count: count,
        trades_per_day: count as f64 / span,
        avg_days_between: span / count as f64,
    })
}

/// Summary of the trade amounts in one class. All zeros when empty.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassBlock {
    pub count: usize,
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
    pub total: f64,
}

impl ClassBlock {
    fn from_amounts(amounts: &[f64]) -> Self {
        if amounts.is_empty() {
            return Self::default();
        }
        let total = crate::numeric::exact_sum(amounts);
        let n = amounts.len() as f64;
        let mean = total / n;
        let ss = amounts.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>();
        Self {
            count: amounts.len(),
            mean,
            sd: (ss / n).sqrt(),
            min: amounts.iter().copied().fold(f64::INFINITY, f64::min),
            max: amounts.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            total,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Extremes {
    pub min: f64,
    pub max: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MonetaryStats {
    pub third_party: ClassBlock,
    pub systematic: ClassBlock,
    pub periodic: ClassBlock,
    pub buy: Extremes,
    pub sell: Extremes,
}

impl MonetaryStats {
    pub fn class(&self, c: TradeClass) -> &ClassBlock {
        match c {
            TradeClass::ThirdParty => &self.third_party,
            TradeClass::Systematic => &self.systematic,
            TradeClass::Periodic => &self.periodic,
        }
    }
}

/// Per-class amount statistics (population SD) plus buy/sell extrema and totals.
pub fn monetary_stats(txns: &[&TransactionRecord]) -> MonetaryStats {
    let mut by_class: [Vec<f64>; 3] = Default::default();
    let mut buys = Vec::new();
    let mut sells = Vec::new();
    for t in txns {
        let a = trade_amount(t);
        by_class[t.trade_type.class().index()].push(a);
        match t.trade_type.direction() {
            Direction::Buy => buys.push(a),
            Direction::Sell => sells.push(a),
            Direction::Neutral => {}
        }
    }
    let ext = |v: &[f64]| {
        let b = ClassBlock::from_amounts(v);
        Extremes {
            min: b.min,
            max: b.max,
            total: b.total,
        }
    };
    MonetaryStats {
        third_party: ClassBlock::from_amounts(&by_class[0]),
        systematic: ClassBlock::from_amounts(&by_class[1]),
        periodic: ClassBlock::from_amounts(&by_class[2]),
        buy: ext(&buys),
        sell: ext(&sells),
    }
}

/// Exact per-class money totals.
#[derive(Debug, Clone, Default)]
pub struct ClassTotals {
    acc: [ExactSum; 3],
}

impl ClassTotals {
    pub fn add(&mut self, class: TradeClass, amount: f64) {
        self.acc[class.index()].add(amount);
    }

    /// Fold an exact partial sum into one class.
    pub fn merge_class(&mut self, class: TradeClass, sum: &ExactSum) {
        self.acc[class.index()].merge(sum);
    }

    pub fn merge(&mut self, other: &ClassTotals) {
        for i in 0..3 {
            self.acc[i].merge(&other.acc[i]);
        }
    }

    pub fn get(&self, class: TradeClass) -> f64 {
        self.acc[class.index()].value()
    }

    /// Exact grand total across the three classes.
    pub fn grand_total(&self) -> f64 {
        let mut all = ExactSum::new();
        for a in &self.acc {
            all.merge(a);
        }
        all.value()
    }
}

/// Class totals over a set of transactions, accumulated per client and merged.
pub fn class_totals<'a>(txns: impl IntoIterator<Item = &'a TransactionRecord>) -> ClassTotals {
    let mut per_client: BTreeMap<&str, ClassTotals> = BTreeMap::new();
    for t in txns {
        per_client
            .entry(t.client_id.as_str())
            .or_default()
            .add(t.trade_type.class(), trade_amount(t));
    }
    let mut out = ClassTotals::default();
    for ct in per_client.values() {
        out.merge(ct);
    }
    out
}

/// Frozen order of the numeric feature block.
pub const NUMERIC_COLUMNS: [&str; 20] = [
    "age",
    "annual_income",
    "investment_knowledge",
    "num_accounts",
    "recency_days",
    "trade_count",
    "trades_per_day",
    "avg_days_between",
    "third_party_mean",
    "third_party_sd",
    "systematic_mean",
    "systematic_sd",
    "periodic_mean",
    "periodic_sd",
    "buy_min",
    "buy_max",
    "sell_min",
    "sell_max",
    "buy_total",
    "sell_total",
];

/// Frozen order of the categorical feature block.
pub const CATEGORICAL_COLUMNS: [&str; 5] = [
    "gender",
    "residency",
    "marital_status",
    "retired",
    "account_type",
];

fn column_field(name: &str) -> Option<ClientField> {
    Some(match name {
        "age" => ClientField::Age,
        "annual_income" => ClientField::AnnualIncome,
        "investment_knowledge" => ClientField::InvestmentKnowledge,
        "num_accounts" => ClientField::NumAccounts,
        "gender" => ClientField::Gender,
        "residency" => ClientField::Residency,
        "marital_status" => ClientField::MaritalStatus,
        "retired" => ClientField::Retired,
        _ => return None,
    })
}

/// How the account-type mix enters the feature set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccountMix {
    /// One categorical column holding the client's most common account type.
    #[default]
    Modal,
    /// One numeric column per account type holding the share of accounts.
    Proportions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureOptions {
    pub snapshot: NaiveDate,
    pub window_start: NaiveDate,
    pub standardize: bool,
    pub account_mix: AccountMix,
    /// Profile fields left out of the feature set (e.g. sparse columns).
    pub excluded: BTreeSet<ClientField>,
}

impl FeatureOptions {
    pub fn new(snapshot: NaiveDate, window_start: NaiveDate) -> Self {
        Self {
            snapshot,
            window_start,
            standardize: true,
            account_mix: AccountMix::Modal,
            excluded: BTreeSet::new(),
        }
    }
}

/// Affine map used to standardize one numeric column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnScaling {
    pub mean: f64,
    pub sd: f64,
}

impl ColumnScaling {
    pub fn apply(&self, x: f64) -> f64 {
        if self.sd > 0.0 {
            (x - self.mean) / self.sd
        } else {
            0.0
        }
    }

    pub fn invert(&self, z: f64) -> f64 {
        if self.sd > 0.0 {
            z * self.sd + self.mean
        } else {
            self.mean
        }
    }
}

/// Provenance of a feature matrix, written next to it as JSON.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MatrixMeta {
    pub snapshot: Option<NaiveDate>,
    pub window_start: Option<NaiveDate>,
    pub standardized: bool,
    pub scaling: Option<Vec<ColumnScaling>>,
    pub levels: Vec<Vec<String>>,
    pub numeric_columns: Vec<String>,
    pub categorical_columns: Vec<String>,
}

/// Borrowed view of one mixed-type row (a client or a centroid).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixedRef<'a> {
    pub numeric: &'a [f64],
    pub categorical: &'a [u32],
}

/// N clients × (p numeric + q categorical) attributes.
///
/// Categorical values are stored as codes into per-column level lists that
/// are sorted, so code order equals lexicographic order of the categories.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub client_ids: Vec<String>,
    pub numeric_names: Vec<String>,
    pub categorical_names: Vec<String>,
    numeric: Vec<f64>,
    categorical: Vec<u32>,
    pub levels: Vec<Vec<String>>,
    pub meta: MatrixMeta,
}

impl FeatureMatrix {
    /// Build from per-row values; levels are derived and sorted.
    pub fn from_rows(
        client_ids: Vec<String>,
        numeric_names: Vec<String>,
        categorical_names: Vec<String>,
        numeric_rows: Vec<Vec<f64>>,
        categorical_rows: Vec<Vec<String>>,
    ) -> Result<Self> {
        let n = client_ids.len();
        let q = categorical_names.len();
        if numeric_rows.len() != n || categorical_rows.len() != n {
            return Err(Error::LayoutMismatch(
                "row count differs from id count".into(),
            ));
        }
        let mut seen = HashSet::new();
        for id in &client_ids {
            if !seen.insert(id) {
                return Err(Error::DuplicateClient(id.clone()));
            }
        }
        let mut levels: Vec<BTreeSet<&str>> = vec![BTreeSet::new(); q];
        for row in &categorical_rows {
            if row.len() != q {
                return Err(Error::LayoutMismatch(format!(
                    "categorical row of width {} (expected {q})",
                    row.len()
                )));
            }
            for (j, v) in row.iter().enumerate() {
                levels[j].insert(v);
            }
        }
        let levels: Vec<Vec<String>> = levels
            .into_iter()
            .map(|s| s.into_iter().map(str::to_string).collect())
            .collect();
        Self::with_levels(
            client_ids,
            numeric_names,
            categorical_names,
            numeric_rows,
            categorical_rows,
            levels,
        )
    }

    fn with_levels(
        client_ids: Vec<String>,
        numeric_names: Vec<String>,
        categorical_names: Vec<String>,
        numeric_rows: Vec<Vec<f64>>,
        categorical_rows: Vec<Vec<String>>,
        levels: Vec<Vec<String>>,
    ) -> Result<Self> {
        let p = numeric_names.len();
        let mut numeric = Vec::with_capacity(client_ids.len() * p);
        for row in &numeric_rows {
            if row.len() != p {
                return Err(Error::LayoutMismatch(format!(
                    "numeric row of width {} (expected {p})",
                    row.len()
                )));
            }
            if let Some(v) = row.iter().find(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("non-finite feature value {v}")));
            }
            numeric.extend_from_slice(row);
        }
        let mut categorical = Vec::with_capacity(client_ids.len() * categorical_names.len());
        for row in &categorical_rows {
            for (j, v) in row.iter().enumerate() {
                let code = levels[j].binary_search(v).map_err(|_| {
                    Error::LayoutMismatch(format!(
                        "category `{v}` not among levels of `{}`",
                        categorical_names[j]
                    ))
                })?;
                categorical.push(code as u32);
            }
        }
        let meta = MatrixMeta {
            levels: levels.clone(),
            numeric_columns: numeric_names.clone(),
            categorical_columns: categorical_names.clone(),
            ..MatrixMeta::default()
        };
        Ok(Self {
            client_ids,
            numeric_names,
            categorical_names,
            numeric,
            categorical,
            levels,
            meta,
        })
    }

    /// Build directly from coded values (used by generators).
    pub fn from_coded(
        client_ids: Vec<String>,
        numeric_names: Vec<String>,
        categorical_names: Vec<String>,
        numeric: Vec<f64>,
        categorical: Vec<u32>,
        levels: Vec<Vec<String>>,
    ) -> Result<Self> {
        let n = client_ids.len();
        if numeric.len() != n * numeric_names.len()
            || categorical.len() != n * categorical_names.len()
        {
            return Err(Error::LayoutMismatch(
                "buffer sizes do not match n × width".into(),
            ));
        }
        if levels.len() != categorical_names.len() {
            return Err(Error::LayoutMismatch(
                "one level list per categorical column required".into(),
            ));
        }
        let q = categorical_names.len();
        for (i, &c) in categorical.iter().enumerate() {
            if c as usize >= levels[i % q.max(1)].len() {
                return Err(Error::LayoutMismatch(format!(
                    "category code {c} out of range"
                )));
            }
        }
        let meta = MatrixMeta {
            levels: levels.clone(),
            numeric_columns: numeric_names.clone(),
            categorical_columns: categorical_names.clone(),
            ..MatrixMeta::default()
        };
        Ok(Self {
            client_ids,
            numeric_names,
            categorical_names,
            numeric,
            categorical,
            levels,
            meta,
        })
    }

    pub fn n(&self) -> usize {
        self.client_ids.len()
    }

    pub fn p(&self) -> usize {
        self.numeric_names.len()
    }

    pub fn q(&self) -> usize {
        self.categorical_names.len()
    }

    pub fn row(&self, i: usize) -> MixedRef<'_> {
        let (p, q) = (self.p(), self.q());
        MixedRef {
            numeric: &self.numeric[i * p..(i + 1) * p],
            categorical: &self.categorical[i * q..(i + 1) * q],
        }
    }

    pub fn numeric_value(&self, i: usize, j: usize) -> f64 {
        self.numeric[i * self.p() + j]
    }

    pub fn numeric_column(&self, j: usize) -> Vec<f64> {
        (0..self.n()).map(|i| self.numeric_value(i, j)).collect()
    }

    pub fn category(&self, i: usize, j: usize) -> &str {
        &self.levels[j][self.categorical[i * self.q() + j] as usize]
    }

    /// Numeric value in original units, undoing standardization if applied.
    pub fn raw_numeric(&self, i: usize, j: usize) -> f64 {
        let v = self.numeric_value(i, j);
        match &self.meta.scaling {
            Some(s) => s[j].invert(v),
            None => v,
        }
    }

    /// Rows restricted to `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> FeatureMatrix {
        let (p, q) = (self.p(), self.q());
        let mut numeric = Vec::with_capacity(indices.len() * p);
        let mut categorical = Vec::with_capacity(indices.len() * q);
        let mut ids = Vec::with_capacity(indices.len());
        for &i in indices {
            numeric.extend_from_slice(&self.numeric[i * p..(i + 1) * p]);
            categorical.extend_from_slice(&self.categorical[i * q..(i + 1) * q]);
            ids.push(self.client_ids[i].clone());
        }
        FeatureMatrix {
            client_ids: ids,
            numeric_names: self.numeric_names.clone(),
            categorical_names: self.categorical_names.clone(),
            numeric,
            categorical,
            levels: self.levels.clone(),
            meta: self.meta.clone(),
        }
    }

    /// Z-score every numeric column with population SD; constant columns
    /// become 0. Records the transform in the metadata.
    pub fn standardize(&mut self) {
        if self.meta.standardized {
            return;
        }
        let p = self.p();
        let n = self.n();
        let mut scaling = Vec::with_capacity(p);
        for j in 0..p {
            let col = self.numeric_column(j);
            let mean = crate::numeric::mean(&col);
            let sd = crate::numeric::population_sd(&col);
            let s = ColumnScaling { mean, sd };
            for i in 0..n {
                let v = &mut self.numeric[i * p + j];
                *v = s.apply(*v);
            }
            scaling.push(s);
        }
        self.meta.standardized = true;
        self.meta.scaling = Some(scaling);
    }

    /// Write the matrix as delimited text; numeric columns are prefixed `num:`
    /// and categorical columns `cat:`. Floats use shortest round-trip form.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["client_id".to_string()];
        header.extend(self.numeric_names.iter().map(|c| format!("num:{c}")));
        header.extend(self.categorical_names.iter().map(|c| format!("cat:{c}")));
        wr.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec = Vec::with_capacity(header.len());
            rec.push(self.client_ids[i].clone());
            let row = self.row(i);
            rec.extend(row.numeric.iter().map(|v| format!("{v}")));
            rec.extend((0..self.q()).map(|j| self.category(i, j).to_string()));
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn write_meta<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, &self.meta)?;
        Ok(())
    }

    /// Read a matrix written by [`write_csv`](Self::write_csv) and its metadata.
    pub fn read<R: Read, M: Read>(csv_src: R, meta_src: M) -> Result<Self> {
        let meta: MatrixMeta = serde_json::from_reader(meta_src)?;
        let mut rd = csv::Reader::from_reader(csv_src);
        let header = rd.headers()?.clone();
        let mut numeric_names = Vec::new();
        let mut categorical_names = Vec::new();
        for (i, h) in header.iter().enumerate() {
            if i == 0 {
                if h != "client_id" {
                    return Err(Error::MalformedHeader(format!(
                        "first column must be client_id, found `{h}`"
                    )));
                }
            } else if let Some(c) = h.strip_prefix("num:") {
                if !categorical_names.is_empty() {
                    return Err(Error::MalformedHeader(
                        "numeric column after categorical block".into(),
                    ));
                }
                numeric_names.push(c.to_string());
            } else if let Some(c) = h.strip_prefix("cat:") {
                categorical_names.push(c.to_string());
            } else {
                return Err(Error::MalformedHeader(format!(
                    "column `{h}` lacks num:/cat: prefix"
                )));
            }
        }
        let p = numeric_names.len();
        let mut ids = Vec::new();
        let mut nrows = Vec::new();
        let mut crows = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            ids.push(rec[0].to_string());
            let nums = (1..=p)
                .map(|c| {
                    rec[c]
                        .parse::<f64>()
                        .map_err(|e| Error::invalid(format!("bad number `{}`: {e}", &rec[c])))
                })
                .collect::<Result<Vec<_>>>()?;
            nrows.push(nums);
            crows.push((p + 1..rec.len()).map(|c| rec[c].to_string()).collect());
        }
        let levels = if meta.levels.len() == categorical_names.len() {
            meta.levels.clone()
        } else {
            return Err(Error::LayoutMismatch(
                "metadata levels do not match categorical columns".into(),
            ));
        };
        let mut m = Self::with_levels(ids, numeric_names, categorical_names, nrows, crows, levels)?;
        m.meta = meta;
        Ok(m)
    }

    pub fn save(&self, csv_path: &Path, meta_path: &Path) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(csv_path)?))?;
        self.write_meta(std::io::BufWriter::new(std::fs::File::create(meta_path)?))?;
        Ok(())
    }

    pub fn load(csv_path: &Path, meta_path: &Path) -> Result<Self> {
        Self::read(
            std::io::BufReader::new(std::fs::File::open(csv_path)?),
            std::io::BufReader::new(std::fs::File::open(meta_path)?),
        )
    }
}

fn modal_account_type(txns: &[&TransactionRecord]) -> String {
    let mut accounts: BTreeMap<&str, &str> = BTreeMap::new();
    for t in txns {
        if let Some(ty) = &t.account_type {
            accounts.entry(t.account_id.as_str()).or_insert(ty.as_str());
        }
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for ty in accounts.values() {
        *counts.entry(ty).or_default() += 1;
    }
    let mut best: Option<(&str, usize)> = None;
    for (ty, c) in counts {
        if best.map_or(true, |(_, bc)| c > bc) {
            best = Some((ty, c));
        }
    }
    best.map_or_else(|| "none".to_string(), |(t, _)| t.to_string())
}

fn account_shares(txns: &[&TransactionRecord], types: &[String]) -> Vec<f64> {
    let mut accounts: BTreeMap<&str, &str> = BTreeMap::new();
    for t in txns {
        if let Some(ty) = &t.account_type {
            accounts.entry(t.account_id.as_str()).or_insert(ty.as_str());
        }
    }
    let total = accounts.len();
    types
        .iter()
        .map(|ty| {
            if total == 0 {
                0.0
            } else {
                accounts.values().filter(|v| **v == ty.as_str()).count() as f64 / total as f64
            }
        })
        .collect()
}

fn missing(field: &str, id: &str) -> Error {
    Error::invalid(format!(
        "client `{id}` lacks `{field}`; run imputation first"
    ))
}

/// Assemble the RFMP feature matrix, one row per client in ascending
/// client-id order. Clients without transactions get recency equal to the
/// observation window length and zero trade statistics.
pub fn build_matrix(
    clients: &[ClientRecord],
    txns: &[TransactionRecord],
    opts: &FeatureOptions,
) -> Result<FeatureMatrix> {
    if opts.window_start > opts.snapshot {
        return Err(Error::invalid("window start after snapshot"));
    }
    let mut by_client: BTreeMap<&str, Vec<&TransactionRecord>> = BTreeMap::new();
    let mut order: Vec<&ClientRecord> = clients.iter().collect();
    order.sort_by(|a, b| a.client_id.cmp(&b.client_id));
    for w in order.windows(2) {
        if w[0].client_id == w[1].client_id {
            return Err(Error::DuplicateClient(w[0].client_id.clone()));
        }
    }
    for c in &order {
        by_client.insert(c.client_id.as_str(), Vec::new());
    }
    for t in txns {
        match by_client.get_mut(t.client_id.as_str()) {
            Some(v) => v.push(t),
            None => return Err(Error::UnknownClient(t.client_id.clone())),
        }
    }
    let window_days = (opts.snapshot - opts.window_start).num_days() as f64;

    let keep = |name: &str| column_field(name).map_or(true, |f| !opts.excluded.contains(&f));
    let mut numeric_names: Vec<String> = NUMERIC_COLUMNS
        .iter()
        .filter(|c| keep(c))
        .map(|c| c.to_string())
        .collect();
    let mut categorical_names: Vec<String> = CATEGORICAL_COLUMNS
        .iter()
        .filter(|c| keep(c))
        .filter(|c| opts.account_mix == AccountMix::Modal || **c != "account_type")
        .map(|c| c.to_string())
        .collect();
    let account_types: Vec<String> = if opts.account_mix == AccountMix::Proportions {
        let set: BTreeSet<&str> = txns
            .iter()
            .filter_map(|t| t.account_type.as_deref())
            .collect();
        set.into_iter().map(str::to_string).collect()
    } else {
        Vec::new()
    };
    numeric_names.extend(account_types.iter().map(|t| format!("account_share:{t}")));
    categorical_names.shrink_to_fit();

    let mut ids = Vec::with_capacity(order.len());
    let mut nrows = Vec::with_capacity(order.len());
    let mut crows = Vec::with_capacity(order.len());
    for c in order {
        let id = c.client_id.as_str();
        let ts = &by_client[id];
        let (rec_days, freq) = if ts.is_empty() {
            (
                window_days,
                FrequencyStats {
                    trade_count: 0,
                    trades_per_day: 0.0,
                    avg_days_between: 0.0,
                },
            )
        } else {
            (
                recency(ts, opts.snapshot)? as f64,
                frequency_stats(ts, opts.snapshot)?,
            )
        };
        let m = monetary_stats(ts);
        let mut all: BTreeMap<&str, f64> = BTreeMap::new();
        all.insert("recency_days", rec_days);
        all.insert("trade_count", freq.trade_count as f64);
        all.insert("trades_per_day", freq.trades_per_day);
        all.insert("avg_days_between", freq.avg_days_between);
        all.insert("third_party_mean", m.third_party.mean);
        all.insert("third_party_sd", m.third_party.sd);
        all.insert("systematic_mean", m.systematic.mean);
        all.insert("systematic_sd", m.systematic.sd);
        all.insert("periodic_mean", m.periodic.mean);
        all.insert("periodic_sd", m.periodic.sd);
        all.insert("buy_min", m.buy.min);
        all.insert("buy_max", m.buy.max);
        all.insert("sell_min", m.sell.min);
        all.insert("sell_max", m.sell.max);
        all.insert("buy_total", m.buy.total);
        all.insert("sell_total", m.sell.total);

        let mut row = Vec::with_capacity(numeric_names.len());
        for name in NUMERIC_COLUMNS.iter().filter(|c| keep(c)) {
            let v = match *name {
                "age" => c.age.ok_or_else(|| missing("age", id))? as f64,
                "annual_income" => c
                    .annual_income
                    .ok_or_else(|| missing("annual_income", id))?,
                "investment_knowledge" => c
                    .investment_knowledge
                    .ok_or_else(|| missing("investment_knowledge", id))?
                    as f64,
                "num_accounts" => c.num_accounts.ok_or_else(|| missing("num_accounts", id))? as f64,
                other => all[other],
            };
            row.push(v);
        }
        row.extend(account_shares(ts, &account_types));

        let mut cats = Vec::with_capacity(categorical_names.len());
        for name in &categorical_names {
            let v = match name.as_str() {
                "gender" => c.gender.clone().ok_or_else(|| missing("gender", id))?,
                "residency" => c
                    .residency
                    .clone()
                    .ok_or_else(|| missing("residency", id))?,
                "marital_status" => c
                    .marital_status
                    .clone()
                    .ok_or_else(|| missing("marital_status", id))?,
                "retired" => match c.retired.ok_or_else(|| missing("retired", id))? {
                    true => "yes".to_string(),
                    false => "no".to_string(),
                },
                "account_type" => modal_account_type(ts),
                other => unreachable!("unknown categorical column {other}"),
            };
            cats.push(v);
        }
        ids.push(id.to_string());
        nrows.push(row);
        crows.push(cats);
    }

    let mut m = FeatureMatrix::from_rows(ids, numeric_names, categorical_names, nrows, crows)?;
    m.meta.snapshot = Some(opts.snapshot);
    m.meta.window_start = Some(opts.window_start);
    if opts.standardize {
        m.standardize();
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    fn txn(
        client: &str,
        ty: TradeType,
        size: f64,
        unit: f64,
        date: NaiveDate,
    ) -> TransactionRecord {
        TransactionRecord {
            account_id: format!("{client}-A"),
            client_id: client.into(),
            account_type: Some("RSP".into()),
            trade_type: ty,
            size,
            unit_value: unit,
            order_date: date,
            status: "filled".into(),
        }
    }

    #[test]
    fn amount_is_size_times_unit_value() {
        let s = d(2019, 8, 12);
        assert_eq!(
            trade_amount(&txn("a", TradeType::Buy, 10.0, 25.5, s)),
            10.0 * 25.5
        );
        assert_eq!(
            trade_amount(&txn("a", TradeType::Buy, 10.0, 25.5, s)),
            255.0
        );
        assert_eq!(trade_amount(&txn("a", TradeType::Buy, 0.0, 25.5, s)), 0.0);
        assert_eq!(
            trade_amount(&txn("a", TradeType::Buy, 1.0, 17.25, s)),
            17.25
        );
    }

    #[test]
    fn classification_follows_the_taxonomy() {
        assert_eq!(classify_trade("Dividend").unwrap(), TradeClass::ThirdParty);
        assert_eq!(
            classify_trade("Reinvest Dividend").unwrap(),
            TradeClass::Systematic
        );
        assert_eq!(classify_trade("Redeem").unwrap(), TradeClass::Periodic);
        assert_eq!(
            classify_trade("Buy (securities)").unwrap(),
            TradeClass::Periodic
        );
        assert_eq!(
            classify_trade("pre_authorized-contribution").unwrap(),
            TradeClass::Systematic
        );
        match classify_trade("Lottery") {
            Err(Error::UnknownTradeType(v)) => assert_eq!(v, "Lottery"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn classification_is_total_and_roundtrips() {
        let mut counts = [0; 3];
        for t in TradeType::ALL {
            assert_eq!(TradeType::from_str(t.label()).unwrap(), t);
            assert_eq!(classify_trade(t.label()).unwrap(), t.class());
            counts[t.class().index()] += 1;
        }
        assert_eq!(counts, [3, 4, 11]);
    }

    #[test]
    fn recency_and_frequency() {
        let snap = d(2019, 8, 12);
        let a = txn("a", TradeType::Buy, 1.0, 1.0, snap);
        assert_eq!(recency(&[&a], snap).unwrap(), 0);
        let b = txn("a", TradeType::Buy, 1.0, 1.0, snap - chrono::Days::new(57));
        assert_eq!(recency(&[&b], snap).unwrap(), 57);
        let c = txn("a", TradeType::Buy, 1.0, 1.0, snap - chrono::Days::new(90));
        assert_eq!(recency(&[&c, &b], snap).unwrap(), 57);
        assert!(recency(&[], snap).is_err());

        let f = frequency_stats(&[&a], snap).unwrap();
        assert_eq!((f.trade_count, f.trades_per_day), (1, 1.0));

        let ten: Vec<TransactionRecord> = (0..10)
            .map(|i| {
                txn(
                    "a",
                    TradeType::Buy,
                    1.0,
                    1.0,
                    snap - chrono::Days::new(100 - 10 * i),
                )
            })
            .collect();
        let refs: Vec<&TransactionRecord> = ten.iter().collect();
        let f = frequency_stats(&refs, snap).unwrap();
        assert_eq!(f.avg_days_between, 10.0);
        assert_eq!(f.trades_per_day, 0.1);
    }

    #[test]
    fn monetary_blocks() {
        let s = d(2019, 1, 1);
        let t1 = txn("a", TradeType::Buy, 1.0, 100.0, s);
        let t2 = txn("a", TradeType::Sell, 2.0, 100.0, s);
        let m = monetary_stats(&[&t1, &t2]);
        assert_eq!(
            m.periodic,
            ClassBlock {
                count: 2,
                mean: 150.0,
                sd: 50.0,
                min: 100.0,
                max: 200.0,
                total: 300.0
            }
        );
        assert_eq!(m.third_party, ClassBlock::default());
        assert_eq!(
            m.buy,
            Extremes {
                min: 100.0,
                max: 100.0,
                total: 100.0
            }
        );
        assert_eq!(m.sell.total, 200.0);
        let single = monetary_stats(&[&t1]);
        assert_eq!((single.periodic.mean, single.periodic.sd), (100.0, 0.0));
    }

    fn client(id: &str) -> ClientRecord {
        let mut c = ClientRecord::empty(id);
        c.age = Some(40);
        c.gender = Some("F".into());
        c.residency = Some("ON".into());
        c.annual_income = Some(50_000.0);
        c.investment_knowledge = Some(2);
        c.num_accounts = Some(2);
        c.marital_status = Some("M".into());
        c.retired = Some(false);
        c
    }

    #[test]
    fn build_matrix_raw_and_standardized() {
        let snap = d(2019, 8, 12);
        let start = d(2018, 8, 13);
        let mut a = client("b");
        a.age = Some(1 + 17);
        let mut b = client("a");
        b.age = Some(3 + 17);
        let txns = vec![txn("a", TradeType::Dividend, 1.0, 10.0, d(2019, 6, 1))];
        let mut opts = FeatureOptions::new(snap, start);
        opts.standardize = false;
        let raw = build_matrix(&[a.clone(), b.clone()], &txns, &opts).unwrap();
        assert_eq!(raw.client_ids, vec!["a", "b"]);
        assert_eq!((raw.p(), raw.q()), (20, 5));
        // no-transaction client
        assert_eq!(raw.numeric_value(1, 4), 364.0);
        assert_eq!(raw.numeric_value(1, 5), 0.0);
        assert_eq!(raw.category(1, 4), "none");

        opts.standardize = true;
        let z = build_matrix(&[a, b], &txns, &opts).unwrap();
        assert_eq!(z.numeric_value(0, 0), 1.0);
        assert_eq!(z.numeric_value(1, 0), -1.0);
        // constant column stays at 0
        assert_eq!(z.numeric_value(0, 1), 0.0);
        for i in 0..2 {
            for j in 0..z.p() {
                let r = z.raw_numeric(i, j);
                let e = raw.numeric_value(i, j);
                assert!((r - e).abs() <= 1e-9 * e.abs().max(1.0));
            }
        }
    }

    #[test]
    fn build_matrix_rejects_duplicates_and_orphans() {
        let opts = FeatureOptions::new(d(2019, 8, 12), d(2018, 8, 13));
        assert!(matches!(
            build_matrix(&[client("a"), client("a")], &[], &opts),
            Err(Error::DuplicateClient(_))
        ));
        let orphan = txn("zz", TradeType::Buy, 1.0, 1.0, d(2019, 1, 1));
        assert!(matches!(
            build_matrix(&[client("a")], &[orphan], &opts),
            Err(Error::UnknownClient(_))
        ));
    }

    #[test]
    fn excluded_fields_and_proportions() {
        let mut opts = FeatureOptions::new(d(2019, 8, 12), d(2018, 8, 13));
        opts.excluded.insert(ClientField::MaritalStatus);
        opts.account_mix = AccountMix::Proportions;
        let mut t2 = txn("a", TradeType::Buy, 1.0, 1.0, d(2019, 1, 1));
        t2.account_id = "a-B".into();
        t2.account_type = Some("TFSA".into());
        let txns = vec![txn("a", TradeType::Buy, 1.0, 1.0, d(2019, 1, 1)), t2];
        let m = build_matrix(&[client("a")], &txns, &opts).unwrap();
        assert_eq!(m.categorical_names, vec!["gender", "residency", "retired"]);
        assert_eq!(
            &m.numeric_names[20..],
            &[
                "account_share:RSP".to_string(),
                "account_share:TFSA".to_string()
            ]
        );
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let snap = d(2019, 8, 12);
        let mut clients = vec![client("a"), client("b"), client("c")];
        clients[1].annual_income = Some(71234.56);
        clients[2].gender = Some("M".into());
        let txns = vec![
            txn("a", TradeType::Buy, 3.3, 17.1, d(2019, 2, 1)),
            txn("b", TradeType::Interest, 0.7, 1.3, d(2019, 3, 1)),
        ];
        let m = build_matrix(&clients, &txns, &FeatureOptions::new(snap, d(2018, 8, 13))).unwrap();
        let mut csv_buf = Vec::new();
        let mut meta_buf = Vec::new();
        m.write_csv(&mut csv_buf).unwrap();
        m.write_meta(&mut meta_buf).unwrap();
        let back = FeatureMatrix::read(csv_buf.as_slice(), meta_buf.as_slice()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn class_totals_partition_money() {
        let s = d(2019, 1, 1);
        let txns = vec![
            txn("a", TradeType::Buy, 0.1, 3.0, s),
            txn("a", TradeType::Dividend, 0.7, 0.3, s),
            txn("b", TradeType::AutoWithdrawal, 1e10, 1.1, s),
            txn("b", TradeType::Buy, 1.0, 1e-3, s),
        ];
        let totals = class_totals(&txns);
        let all: f64 =
            crate::numeric::exact_sum(&txns.iter().map(trade_amount).collect::<Vec<_>>());
        assert_eq!(totals.grand_total(), all);
    }
}
