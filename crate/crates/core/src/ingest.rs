//! Reading, cleaning and imputing the raw client (KYC) and transaction tables.
//!
//! The flow for client data is
//! [`read_table`] → [`drop_sparse_columns`] → [`clients_from_table`] →
//! [`drop_incomplete_clients`] → [`impute`]. Rows that cannot be parsed are
//! never dropped silently: each one produces a [`ParseIssue`].

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::TradeType;

pub const MIN_AGE: u32 = 18;
pub const MAX_AGE: u32 = 98;
pub const DEFAULT_SPARSE_THRESHOLD: f64 = 0.10;

/// One cell of a delimited table.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Missing,
    Number(f64),
    Text(String),
}

impl Cell {
    /// Classify a raw field. Empty strings, `*` and `unknown` (any case) are
    /// missing markers.
    pub fn parse(raw: &str) -> Cell {
        let t = raw.trim();
        if is_missing_marker(t) {
            Cell::Missing
        } else if let Ok(v) = t.parse::<f64>() {
            if v.is_finite() {
                Cell::Number(v)
            } else {
                Cell::Text(t.to_string())
            }
        } else {
            Cell::Text(t.to_string())
        }
    }

    pub fn is_missing(&self) -> bool {
        matches!(self, Cell::Missing)
    }

    pub fn as_text(&self) -> Option<String> {
        match self {
            Cell::Missing => None,
            Cell::Number(v) => Some(format!("{v}")),
            Cell::Text(s) => Some(s.clone()),
        }
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            Cell::Number(v) => Some(*v),
            _ => None,
        }
    }
}

pub fn is_missing_marker(s: &str) -> bool {
    let t = s.trim();
    t.is_empty() || t == "*" || t.eq_ignore_ascii_case("unknown")
}

/// A delimited table after cell classification.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub column_names: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    /// 1-based data row number of each retained row in the source file.
    pub row_numbers: Vec<usize>,
}

impl RawTable {
    pub fn new(column_names: Vec<String>, rows: Vec<Vec<Cell>>) -> Result<Self> {
        for (i, r) in rows.iter().enumerate() {
            if r.len() != column_names.len() {
                return Err(Error::invalid(format!(
                    "row {} has {} cells, expected {}",
                    i + 1,
                    r.len(),
                    column_names.len()
                )));
            }
        }
        let row_numbers = (1..=rows.len()).collect();
        Ok(Self {
            column_names,
            rows,
            row_numbers,
        })
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.column_names.iter().position(|c| c == name)
    }

    pub fn missing_fraction(&self, col: usize) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        let missing = self.rows.iter().filter(|r| r[col].is_missing()).count();
        missing as f64 / self.rows.len() as f64
    }
}

/// A row (or cell) that could not be turned into a record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParseIssue {
    pub row: usize,
    pub column: Option<String>,
    pub reason: String,
}

impl ParseIssue {
    fn new(row: usize, column: Option<&str>, reason: impl Into<String>) -> Self {
        Self {
            row,
            column: column.map(str::to_string),
            reason: reason.into(),
        }
    }
}

/// Write issues as JSON lines (one `{row, column, reason}` object per line).
pub fn write_issues<W: Write>(issues: &[ParseIssue], mut w: W) -> Result<()> {
    for issue in issues {
        serde_json::to_writer(&mut w, issue)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Parse delimited text with a header row. Rows with the wrong number of
/// fields become issues; a missing, empty or duplicated header is fatal.
pub fn read_table<R: Read>(source: R, delimiter: u8) -> Result<(RawTable, Vec<ParseIssue>)> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .flexible(true)
        .from_reader(source);
    let header = reader
        .headers()
        .map_err(|e| Error::MalformedHeader(e.to_string()))?
        .clone();
    let column_names: Vec<String> = header.iter().map(|h| h.trim().to_string()).collect();
    if column_names.is_empty() || column_names.iter().all(|c| c.is_empty()) {
        return Err(Error::MalformedHeader("empty header row".into()));
    }
    if let Some(c) = column_names.iter().find(|c| c.is_empty()) {
        return Err(Error::MalformedHeader(format!(
            "blank column name in header ({c:?})"
        )));
    }
    let unique: BTreeSet<&String> = column_names.iter().collect();
    if unique.len() != column_names.len() {
        return Err(Error::MalformedHeader("duplicate column names".into()));
    }

    let mut rows = Vec::new();
    let mut row_numbers = Vec::new();
    let mut issues = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row_no = i + 1;
        match rec {
            Ok(rec) if rec.len() == column_names.len() => {
                rows.push(rec.iter().map(Cell::parse).collect());
                row_numbers.push(row_no);
            }
            Ok(rec) => issues.push(ParseIssue::new(
                row_no,
                None,
                format!(
                    "expected {} fields, found {}",
                    column_names.len(),
                    rec.len()
                ),
            )),
            Err(e) => issues.push(ParseIssue::new(
                row_no,
                None,
                format!("unreadable row: {e}"),
            )),
        }
    }
    Ok((
        RawTable {
            column_names,
            rows,
            row_numbers,
        },
        issues,
    ))
}

/// Remove every column whose missing fraction exceeds `threshold`.
/// A column exactly at the threshold is kept.
pub fn drop_sparse_columns(table: &RawTable, threshold: f64) -> Result<(RawTable, Vec<String>)> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::invalid(format!(
            "sparse threshold {threshold} not in (0, 1]"
        )));
    }
    let mut keep = Vec::new();
    let mut dropped = Vec::new();
    for (c, name) in table.column_names.iter().enumerate() {
        if table.missing_fraction(c) > threshold {
            dropped.push(name.clone());
        } else {
            keep.push(c);
        }
    }
    let pruned = RawTable {
        column_names: keep
            .iter()
            .map(|&c| table.column_names[c].clone())
            .collect(),
        rows: table
            .rows
            .iter()
            .map(|r| keep.iter().map(|&c| r[c].clone()).collect())
            .collect(),
        row_numbers: table.row_numbers.clone(),
    };
    Ok((pruned, dropped))
}

/// Client attributes that can be missing, imputed, or required.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClientField {
    Age,
    Gender,
    Residency,
    AnnualIncome,
    InvestmentKnowledge,
    NumAccounts,
    MaritalStatus,
    Retired,
    RiskTolerance,
    JobCategory,
    InvestmentObjective,
}

impl ClientField {
    pub const ALL: [ClientField; 11] = [
        ClientField::Age,
        ClientField::Gender,
        ClientField::Residency,
        ClientField::AnnualIncome,
        ClientField::InvestmentKnowledge,
        ClientField::NumAccounts,
        ClientField::MaritalStatus,
        ClientField::Retired,
        ClientField::RiskTolerance,
        ClientField::JobCategory,
        ClientField::InvestmentObjective,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ClientField::Age => "age",
            ClientField::Gender => "gender",
            ClientField::Residency => "residency",
            ClientField::AnnualIncome => "annual_income",
            ClientField::InvestmentKnowledge => "investment_knowledge",
            ClientField::NumAccounts => "num_accounts",
            ClientField::MaritalStatus => "marital_status",
            ClientField::Retired => "retired",
            ClientField::RiskTolerance => "risk_tolerance",
            ClientField::JobCategory => "job_category",
            ClientField::InvestmentObjective => "investment_objective",
        }
    }
}

impl fmt::Display for ClientField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClientField {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ClientField::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown client field `{s}`")))
    }
}

/// Column names of the client table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClientSchema {
    pub client_id: String,
    pub age: String,
    pub gender: String,
    pub residency: String,
    pub annual_income: String,
    pub investment_knowledge: String,
    pub num_accounts: String,
    pub marital_status: String,
    pub retired: String,
    pub risk_tolerance: String,
    pub job_category: String,
    pub investment_objective: String,
}

impl Default for ClientSchema {
    fn default() -> Self {
        Self {
            client_id: "client_id".into(),
            age: "age".into(),
            gender: "gender".into(),
            residency: "residency".into(),
            annual_income: "annual_income".into(),
            investment_knowledge: "investment_knowledge".into(),
            num_accounts: "num_accounts".into(),
            marital_status: "marital_status".into(),
            retired: "retired".into(),
            risk_tolerance: "risk_tolerance".into(),
            job_category: "job_category".into(),
            investment_objective: "investment_objective".into(),
        }
    }
}

impl ClientSchema {
    pub fn column(&self, field: ClientField) -> &str {
        match field {
            ClientField::Age => &self.age,
            ClientField::Gender => &self.gender,
            ClientField::Residency => &self.residency,
            ClientField::AnnualIncome => &self.annual_income,
            ClientField::InvestmentKnowledge => &self.investment_knowledge,
            ClientField::NumAccounts => &self.num_accounts,
            ClientField::MaritalStatus => &self.marital_status,
            ClientField::Retired => &self.retired,
            ClientField::RiskTolerance => &self.risk_tolerance,
            ClientField::JobCategory => &self.job_category,
            ClientField::InvestmentObjective => &self.investment_objective,
        }
    }

    /// Map column names back to fields; unknown names are ignored.
    pub fn fields_for_columns<'a>(
        &self,
        columns: impl IntoIterator<Item = &'a String>,
    ) -> BTreeSet<ClientField> {
        let mut out = BTreeSet::new();
        for c in columns {
            if let Some(f) = ClientField::ALL.into_iter().find(|&f| self.column(f) == c) {
                out.insert(f);
            }
        }
        out
    }
}

/// KYC attributes for one client. `None` marks a missing value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientRecord {
    pub client_id: String,
    pub age: Option<u32>,
    pub gender: Option<String>,
    pub residency: Option<String>,
    pub annual_income: Option<f64>,
    pub investment_knowledge: Option<u8>,
    pub num_accounts: Option<u32>,
    pub marital_status: Option<String>,
    pub retired: Option<bool>,
    pub risk_tolerance: Option<f64>,
    pub job_category: Option<String>,
    pub investment_objective: Option<String>,
}

impl ClientRecord {
    pub fn empty(client_id: impl Into<String>) -> Self {
        Self {
            client_id: client_id.into(),
            age: None,
            gender: None,
            residency: None,
            annual_income: None,
            investment_knowledge: None,
            num_accounts: None,
            marital_status: None,
            retired: None,
            risk_tolerance: None,
            job_category: None,
            investment_objective: None,
        }
    }

    pub fn has(&self, field: ClientField) -> bool {
        match field {
            ClientField::Age => self.age.is_some(),
            ClientField::Gender => self.gender.is_some(),
            ClientField::Residency => self.residency.is_some(),
            ClientField::AnnualIncome => self.annual_income.is_some(),
            ClientField::InvestmentKnowledge => self.investment_knowledge.is_some(),
            ClientField::NumAccounts => self.num_accounts.is_some(),
            ClientField::MaritalStatus => self.marital_status.is_some(),
            ClientField::Retired => self.retired.is_some(),
            ClientField::RiskTolerance => self.risk_tolerance.is_some(),
            ClientField::JobCategory => self.job_category.is_some(),
            ClientField::InvestmentObjective => self.investment_objective.is_some(),
        }
    }

    /// Check the value-range invariants of every present field.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.client_id.is_empty() {
            return Err("empty client id".into());
        }
        if let Some(a) = self.age {
            if !(MIN_AGE..=MAX_AGE).contains(&a) {
                return Err(format!("age {a} outside [{MIN_AGE}, {MAX_AGE}]"));
            }
        }
        if let Some(k) = self.investment_knowledge {
            if !(1..=4).contains(&k) {
                return Err(format!("investment knowledge {k} outside 1..=4"));
            }
        }
        if let Some(n) = self.num_accounts {
            if n < 1 {
                return Err("number of accounts must be at least 1".into());
            }
        }
        if let Some(rt) = self.risk_tolerance {
            if !(1.0..=5.0).contains(&rt) {
                return Err(format!("risk tolerance {rt} outside [1, 5]"));
            }
        }
        if let Some(inc) = self.annual_income {
            if !inc.is_finite() || inc < 0.0 {
                return Err(format!(
                    "annual income {inc} is not a finite non-negative amount"
                ));
            }
        }
        Ok(())
    }
}

fn parse_knowledge(cell: &Cell) -> std::result::Result<Option<u8>, String> {
    match cell {
        Cell::Missing => Ok(None),
        Cell::Number(v) => {
            if v.fract() == 0.0 && (1.0..=4.0).contains(v) {
                Ok(Some(*v as u8))
            } else {
                Err(format!("investment knowledge {v} not in 1..=4"))
            }
        }
        Cell::Text(t) => match t.to_ascii_lowercase().as_str() {
            "poor" => Ok(Some(1)),
            "fair" => Ok(Some(2)),
            "good" => Ok(Some(3)),
            "sophisticated" => Ok(Some(4)),
            _ => Err(format!("unrecognised investment knowledge `{t}`")),
        },
    }
}

fn parse_bool(cell: &Cell) -> std::result::Result<Option<bool>, String> {
    match cell {
        Cell::Missing => Ok(None),
        Cell::Number(v) if *v == 1.0 => Ok(Some(true)),
        Cell::Number(v) if *v == 0.0 => Ok(Some(false)),
        Cell::Text(t) => match t.to_ascii_lowercase().as_str() {
            "yes" | "y" | "true" | "t" => Ok(Some(true)),
            "no" | "n" | "false" | "f" => Ok(Some(false)),
            _ => Err(format!("unrecognised indicator `{t}`")),
        },
        Cell::Number(v) => Err(format!("unrecognised indicator `{v}`")),
    }
}

fn parse_count(cell: &Cell, what: &str) -> std::result::Result<Option<u32>, String> {
    match cell {
        Cell::Missing => Ok(None),
        Cell::Number(v) if v.fract() == 0.0 && *v >= 0.0 && *v <= u32::MAX as f64 => {
            Ok(Some(*v as u32))
        }
        other => Err(format!("{what} must be a whole number, got {other:?}")),
    }
}

fn parse_real(cell: &Cell, what: &str) -> std::result::Result<Option<f64>, String> {
    match cell {
        Cell::Missing => Ok(None),
        Cell::Number(v) => Ok(Some(*v)),
        Cell::Text(t) => Err(format!("{what} is not numeric: `{t}`")),
    }
}

/// Convert a (possibly column-pruned) table into client records. Mapped
/// columns absent from the table leave the field missing on every record.
/// Invalid rows become issues and are not returned.
pub fn clients_from_table(
    table: &RawTable,
    schema: &ClientSchema,
) -> Result<(Vec<ClientRecord>, Vec<ParseIssue>)> {
    let id_col = table.column_index(&schema.client_id).ok_or_else(|| {
        Error::MalformedHeader(format!("missing id column `{}`", schema.client_id))
    })?;
    let col = |f: ClientField| table.column_index(schema.column(f));
    let cols: HashMap<ClientField, usize> = ClientField::ALL
        .into_iter()
        .filter_map(|f| col(f).map(|c| (f, c)))
        .collect();

    let mut out = Vec::with_capacity(table.rows.len());
    let mut issues = Vec::new();
    for (row, &row_no) in table.rows.iter().zip(&table.row_numbers) {
        let id = match row[id_col].as_text() {
            Some(id) => id,
            None => {
                issues.push(ParseIssue::new(
                    row_no,
                    Some(&schema.client_id),
                    "missing client id",
                ));
                continue;
            }
        };
        let mut rec = ClientRecord::empty(id);
        let mut failure: Option<(ClientField, String)> = None;
        for (&field, &c) in &cols {
            let cell = &row[c];
            let res: std::result::Result<(), String> = (|| {
                match field {
                    ClientField::Age => {
                        rec.age = parse_count(cell, "age")?;
                        if let Some(a) = rec.age {
                            if a < MIN_AGE {
                                return Err(format!("age {a} below legal minimum {MIN_AGE}"));
                            }
                            if a > MAX_AGE {
                                return Err(format!("age {a} above maximum {MAX_AGE}"));
                            }
                        }
                    }
                    ClientField::Gender => rec.gender = cell.as_text(),
                    ClientField::Residency => rec.residency = cell.as_text(),
                    ClientField::AnnualIncome => {
                        rec.annual_income = parse_real(cell, "annual income")?;
                        if let Some(v) = rec.annual_income {
                            if v < 0.0 {
                                return Err(format!("negative annual income {v}"));
                            }
                        }
                    }
                    ClientField::InvestmentKnowledge => {
                        rec.investment_knowledge = parse_knowledge(cell)?
                    }
                    ClientField::NumAccounts => {
                        rec.num_accounts = parse_count(cell, "number of accounts")?;
                        if rec.num_accounts == Some(0) {
                            return Err("number of accounts must be at least 1".into());
                        }
                    }
                    ClientField::MaritalStatus => rec.marital_status = cell.as_text(),
                    ClientField::Retired => rec.retired = parse_bool(cell)?,
                    ClientField::RiskTolerance => {
                        rec.risk_tolerance = parse_real(cell, "risk tolerance")?;
                        if let Some(v) = rec.risk_tolerance {
                            if !(1.0..=5.0).contains(&v) {
                                return Err(format!("risk tolerance {v} outside [1, 5]"));
                            }
                        }
                    }
                    ClientField::JobCategory => rec.job_category = cell.as_text(),
                    ClientField::InvestmentObjective => rec.investment_objective = cell.as_text(),
                }
                Ok(())
            })();
            if let Err(reason) = res {
                failure = Some((field, reason));
                break;
            }
        }
        match failure {
            Some((field, reason)) => {
                issues.push(ParseIssue::new(row_no, Some(schema.column(field)), reason))
            }
            None => out.push(rec),
        }
    }
    Ok((out, issues))
}

/// Parse a client table from delimited text.
pub fn parse_clients<R: Read>(
    source: R,
    schema: &ClientSchema,
    delimiter: u8,
) -> Result<(Vec<ClientRecord>, Vec<ParseIssue>)> {
    let (table, mut issues) = read_table(source, delimiter)?;
    let (records, more) = clients_from_table(&table, schema)?;
    issues.extend(more);
    issues.sort_by_key(|i| i.row);
    Ok((records, issues))
}

/// Fields whose absence removes a client outright rather than being imputed.
pub fn default_required_fields() -> Vec<ClientField> {
    vec![
        ClientField::InvestmentObjective,
        ClientField::InvestmentKnowledge,
        ClientField::Gender,
    ]
}

/// Keep only records that carry every required field. Returns the number removed.
pub fn drop_incomplete_clients(
    records: Vec<ClientRecord>,
    required: &[ClientField],
) -> (Vec<ClientRecord>, usize) {
    let before = records.len();
    let kept: Vec<ClientRecord> = records
        .into_iter()
        .filter(|r| required.iter().all(|&f| r.has(f)))
        .collect();
    let removed = before - kept.len();
    (kept, removed)
}

/// Which fields to fill. Excluded fields are left untouched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputePolicy {
    pub exclude: BTreeSet<ClientField>,
}

impl Default for ImputePolicy {
    /// Risk tolerance is an analysis-only attribute and is never imputed.
    fn default() -> Self {
        Self {
            exclude: [ClientField::RiskTolerance].into_iter().collect(),
        }
    }
}

fn mode_of<T: Ord + Clone>(values: impl Iterator<Item = T>) -> Option<T> {
    let mut counts: BTreeMap<T, usize> = BTreeMap::new();
    for v in values {
        *counts.entry(v).or_default() += 1;
    }
    // BTreeMap iterates in ascending order; strict `>` keeps the smallest on ties
    let mut best: Option<(T, usize)> = None;
    for (v, c) in counts {
        if best.as_ref().map_or(true, |(_, bc)| c > *bc) {
            best = Some((v, c));
        }
    }
    best.map(|(v, _)| v)
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

/// Fill gaps: means for numeric fields (annual income by job category, with
/// a global fallback), modes for categorical and ordinal fields. Statistics
/// are computed from the observed values of the records passed in.
pub fn impute(mut records: Vec<ClientRecord>, policy: &ImputePolicy) -> Result<Vec<ClientRecord>> {
    if records.is_empty() {
        return Ok(records);
    }
    let active = |f: ClientField| !policy.exclude.contains(&f);
    let needs = |recs: &[ClientRecord], f: ClientField| active(f) && recs.iter().any(|r| !r.has(f));

    macro_rules! fill_mode {
        ($field:expr, $attr:ident) => {
            if needs(&records, $field) {
                let m = mode_of(records.iter().filter_map(|r| r.$attr.clone()))
                    .ok_or_else(|| Error::EmptyColumn($field.name().into()))?;
                for r in records.iter_mut().filter(|r| r.$attr.is_none()) {
                    r.$attr = Some(m.clone());
                }
            }
        };
    }

    if needs(&records, ClientField::Age) {
        let m = mean_of(records.iter().filter_map(|r| r.age.map(f64::from)))
            .ok_or_else(|| Error::EmptyColumn("age".into()))?;
        let a = m.round() as u32;
        for r in records.iter_mut().filter(|r| r.age.is_none()) {
            r.age = Some(a);
        }
    }
    if needs(&records, ClientField::NumAccounts) {
        let m = mean_of(records.iter().filter_map(|r| r.num_accounts.map(f64::from)))
            .ok_or_else(|| Error::EmptyColumn("num_accounts".into()))?;
        let a = (m.round() as u32).max(1);
        for r in records.iter_mut().filter(|r| r.num_accounts.is_none()) {
            r.num_accounts = Some(a);
        }
    }
    if needs(&records, ClientField::AnnualIncome) {
        let global = mean_of(records.iter().filter_map(|r| r.annual_income))
            .ok_or_else(|| Error::EmptyColumn("annual_income".into()))?;
        let mut by_job: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for r in &records {
            if let (Some(job), Some(inc)) = (&r.job_category, r.annual_income) {
                let e = by_job.entry(job.clone()).or_insert((0.0, 0));
                e.0 += inc;
                e.1 += 1;
            }
        }
        for r in records.iter_mut().filter(|r| r.annual_income.is_none()) {
            let fill = r
                .job_category
                .as_ref()
                .and_then(|j| by_job.get(j))
                .map(|(s, n)| s / *n as f64)
                .unwrap_or(global);
            r.annual_income = Some(fill);
        }
    }
    if needs(&records, ClientField::RiskTolerance) {
        let m = mean_of(records.iter().filter_map(|r| r.risk_tolerance))
            .ok_or_else(|| Error::EmptyColumn("risk_tolerance".into()))?;
        for r in records.iter_mut().filter(|r| r.risk_tolerance.is_none()) {
            r.risk_tolerance = Some(m);
        }
    }
    fill_mode!(ClientField::InvestmentKnowledge, investment_knowledge);
    fill_mode!(ClientField::Gender, gender);
    fill_mode!(ClientField::Residency, residency);
    fill_mode!(ClientField::MaritalStatus, marital_status);
    fill_mode!(ClientField::Retired, retired);
    fill_mode!(ClientField::JobCategory, job_category);
    fill_mode!(ClientField::InvestmentObjective, investment_objective);
    Ok(records)
}

/// Column names of the transaction table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransactionSchema {
    pub account_id: String,
    pub client_id: String,
    pub account_type: String,
    pub trade_type: String,
    pub size: String,
    pub unit_value: String,
    pub order_date: String,
    pub status: String,
}

impl Default for TransactionSchema {
    fn default() -> Self {
        Self {
            account_id: "account_id".into(),
            client_id: "client_id".into(),
            account_type: "account_type".into(),
            trade_type: "trade_type".into(),
            size: "size".into(),
            unit_value: "unit_value".into(),
            order_date: "order_date".into(),
            status: "status".into(),
        }
    }
}

/// One trade or transaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransactionRecord {
    pub account_id: String,
    pub client_id: String,
    pub account_type: Option<String>,
    pub trade_type: TradeType,
    pub size: f64,
    pub unit_value: f64,
    pub order_date: NaiveDate,
    pub status: String,
}

impl TransactionRecord {
    pub fn is_filled(&self) -> bool {
        self.status.eq_ignore_ascii_case("filled")
    }
}

/// Observation window; transactions dated outside it are rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateWindow {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateWindow {
    pub fn contains(&self, d: NaiveDate) -> bool {
        d >= self.start && d <= self.end
    }

    pub fn days(&self) -> i64 {
        (self.end - self.start).num_days()
    }
}

pub fn parse_date(s: &str) -> Option<NaiveDate> {
    let t = s.trim();
    NaiveDate::parse_from_str(t, "%Y-%m-%d")
        .or_else(|_| NaiveDate::parse_from_str(t, "%Y/%m/%d"))
        .ok()
}

/// Convert a transaction table into records; rows with unknown trade types,
/// non-finite amounts, bad dates or dates outside `window` become issues.
pub fn transactions_from_table(
    table: &RawTable,
    schema: &TransactionSchema,
    window: Option<DateWindow>,
) -> Result<(Vec<TransactionRecord>, Vec<ParseIssue>)> {
    let need = |name: &str| {
        table
            .column_index(name)
            .ok_or_else(|| Error::MalformedHeader(format!("missing column `{name}`")))
    };
    let c_acct = need(&schema.account_id)?;
    let c_client = need(&schema.client_id)?;
    let c_type = need(&schema.trade_type)?;
    let c_size = need(&schema.size)?;
    let c_unit = need(&schema.unit_value)?;
    let c_date = need(&schema.order_date)?;
    let c_status = need(&schema.status)?;
    let c_acct_type = table.column_index(&schema.account_type);

    let mut out = Vec::with_capacity(table.rows.len());
    let mut issues = Vec::new();
    for (row, &row_no) in table.rows.iter().zip(&table.row_numbers) {
        let res: std::result::Result<TransactionRecord, (String, String)> = (|| {
            let text = |c: usize, name: &str| {
                row[c]
                    .as_text()
                    .ok_or_else(|| (name.to_string(), "missing value".to_string()))
            };
            let account_id = text(c_acct, &schema.account_id)?;
            let client_id = text(c_client, &schema.client_id)?;
            let raw_type = text(c_type, &schema.trade_type)?;
            let trade_type = TradeType::from_str(&raw_type).map_err(|_| {
                (
                    schema.trade_type.clone(),
                    format!("unknown trade type `{raw_type}`"),
                )
            })?;
            let num = |c: usize, name: &str| {
                row[c].as_number().ok_or_else(|| {
                    (
                        name.to_string(),
                        format!("not a finite number: {:?}", row[c]),
                    )
                })
            };
            let size = num(c_size, &schema.size)?;
            let unit_value = num(c_unit, &schema.unit_value)?;
            let date_text = text(c_date, &schema.order_date)?;
            let order_date = parse_date(&date_text).ok_or_else(|| {
                (
                    schema.order_date.clone(),
                    format!("unparseable date `{date_text}`"),
                )
            })?;
            if let Some(w) = window {
                if !w.contains(order_date) {
                    return Err((
                        schema.order_date.clone(),
                        format!("date {order_date} outside observation window"),
                    ));
                }
            }
            let status = text(c_status, &schema.status)?;
            Ok(TransactionRecord {
                account_id,
                client_id,
                account_type: c_acct_type.and_then(|c| row[c].as_text()),
                trade_type,
                size,
                unit_value,
                order_date,
                status,
            })
        })();
        match res {
            Ok(t) => out.push(t),
            Err((col, reason)) => issues.push(ParseIssue::new(row_no, Some(&col), reason)),
        }
    }
    Ok((out, issues))
}

pub fn parse_transactions<R: Read>(
    source: R,
    schema: &TransactionSchema,
    delimiter: u8,
    window: Option<DateWindow>,
) -> Result<(Vec<TransactionRecord>, Vec<ParseIssue>)> {
    let (table, mut issues) = read_table(source, delimiter)?;
    let (records, more) = transactions_from_table(&table, schema, window)?;
    issues.extend(more);
    issues.sort_by_key(|i| i.row);
    Ok((records, issues))
}

/// Keep only filled orders; returns the number of non-filled rows removed.
pub fn retain_filled(txns: Vec<TransactionRecord>) -> (Vec<TransactionRecord>, usize) {
    let before = txns.len();
    let kept: Vec<_> = txns
        .into_iter()
        .filter(TransactionRecord::is_filled)
        .collect();
    let removed = before - kept.len();
    (kept, removed)
}

/// Options for the full client cleaning pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CleaningOptions {
    pub sparse_threshold: f64,
    pub required_fields: Vec<ClientField>,
    /// Fields retained on the records for analysis but never used for
    /// clustering or imputation.
    pub held_out: Vec<ClientField>,
}

impl Default for CleaningOptions {
    fn default() -> Self {
        Self {
            sparse_threshold: DEFAULT_SPARSE_THRESHOLD,
            required_fields: default_required_fields(),
            held_out: vec![ClientField::RiskTolerance],
        }
    }
}

/// Result of cleaning the client table.
#[derive(Debug, Clone)]
pub struct CleanClients {
    pub records: Vec<ClientRecord>,
    /// Columns removed for sparseness.
    pub dropped_columns: Vec<String>,
    /// Fields that must not enter the clustering feature set.
    pub excluded_fields: BTreeSet<ClientField>,
    pub removed_incomplete: usize,
    pub issues: Vec<ParseIssue>,
    pub rows_in: usize,
}

/// Sparse-column detection, parsing, incomplete-client removal and
/// imputation in one pass.
///
/// Sparse columns are removed from clustering but their values stay on the
/// records, so held-out attributes such as risk tolerance remain available
/// for the per-cluster analysis.
pub fn clean_clients(
    table: &RawTable,
    schema: &ClientSchema,
    opts: &CleaningOptions,
) -> Result<CleanClients> {
    let (_, dropped) = drop_sparse_columns(table, opts.sparse_threshold)?;
    let mut excluded = schema.fields_for_columns(&dropped);
    excluded.extend(opts.held_out.iter().copied());
    let (records, issues) = clients_from_table(table, schema)?;
    let required: Vec<ClientField> = opts
        .required_fields
        .iter()
        .copied()
        .filter(|f| !excluded.contains(f))
        .collect();
    let (records, removed) = drop_incomplete_clients(records, &required);
    let records = impute(
        records,
        &ImputePolicy {
            exclude: excluded.clone(),
        },
    )?;
    Ok(CleanClients {
        records,
        dropped_columns: dropped,
        excluded_fields: excluded,
        removed_incomplete: removed,
        issues,
        rows_in: table.rows.len(),
    })
}
