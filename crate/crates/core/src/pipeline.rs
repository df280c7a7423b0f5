//! End-to-end run: configuration, stage orchestration and the run manifest.
//!
//! Stages run in a fixed order and exchange data only through the files
//! they write into the output directory, so any suffix of the pipeline can
//! be re-run on saved artifacts. Every stochastic stage draws its seed from
//! the configuration; a run with the same configuration reproduces every
//! output byte for byte.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cluster::{
    fit, read_model, write_centroid_table, write_model, ClusterModel, DistanceMode, FitOptions,
};
use crate::embed::{tsne, TsneOptions};
use crate::error::{Error, Result};
use crate::features::{
    build_matrix, class_totals, AccountMix, FeatureMatrix, FeatureOptions, TradeClass,
};
use crate::ingest::{
    clean_clients, parse_clients, parse_transactions, read_table, retain_filled, write_issues,
    CleaningOptions, ClientField, ClientRecord, ClientSchema, DateWindow, TransactionRecord,
    TransactionSchema, DEFAULT_SPARSE_THRESHOLD,
};
use crate::model_select::{sweep_k, ValidityReport, DEFAULT_MATERIALIZE_CUTOFF};
use crate::numeric::derive_seed_str;
use crate::report::{average_linkage_order, stratified_sample, write_heatmap, write_scatter_svg};
use crate::stats::{
    bin_masses, dunn_test, histogram_density, kl_pair_table, kruskal_wallis,
    monthly_cluster_series, one_way_anova, rt_bin_edges, tukey_hsd, Adjustment, AnovaTable,
    TestReport, DEFAULT_KL_EPSILON,
};
use crate::synth::{
    generate_population, write_clients_csv, write_transactions_csv, PopulationSpec,
};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Synth,
    Ingest,
    Features,
    Sweep,
    Cluster,
    Embed,
    Stats,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Synth,
        Stage::Ingest,
        Stage::Features,
        Stage::Sweep,
        Stage::Cluster,
        Stage::Embed,
        Stage::Stats,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Ingest => "ingest",
            Stage::Features => "features",
            Stage::Sweep => "sweep",
            Stage::Cluster => "cluster",
            Stage::Embed => "embed",
            Stage::Stats => "stats",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }
}

/// Explicit per-stage seeds. Unset entries derive from the master seed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageSeeds {
    pub synth: Option<u64>,
    pub sweep: Option<u64>,
    pub cluster: Option<u64>,
    pub embed: Option<u64>,
    pub sample: Option<u64>,
    pub bootstrap: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub stages: Vec<Stage>,
    pub seed: u64,
    /// Client and transaction tables; when unset the synth stage output is used.
    pub clients: Option<PathBuf>,
    pub transactions: Option<PathBuf>,
    pub delimiter: char,
    pub synth_clients: usize,
    pub window_start: NaiveDate,
    pub snapshot: NaiveDate,
    pub sparse_threshold: f64,
    pub standardize: bool,
    pub account_mix: AccountMix,
    pub distance: DistanceMode,
    /// Fixed number of clusters; when unset the sweep's choice is used.
    pub k: Option<usize>,
    pub k_min: usize,
    pub k_max: usize,
    pub restarts: usize,
    pub sweep_restarts: usize,
    pub max_iter: usize,
    pub perplexity: f64,
    pub tsne_iterations: usize,
    pub learning_rate: f64,
    /// Larger populations are embedded on a stratified sample of this size.
    pub embed_max_points: usize,
    pub bootstrap_resamples: usize,
    pub bootstrap_level: f64,
    pub adjustment: Adjustment,
    pub rt_bin_edges: Vec<f64>,
    pub kl_epsilon: f64,
    pub heatmap_sample: usize,
    pub seeds: StageSeeds,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("out"),
            stages: Stage::ALL.to_vec(),
            seed: 20190812,
            clients: None,
            transactions: None,
            delimiter: ',',
            synth_clients: 5_000,
            window_start: NaiveDate::from_ymd_opt(2018, 8, 13).expect("valid date"),
            snapshot: NaiveDate::from_ymd_opt(2019, 8, 12).expect("valid date"),
            sparse_threshold: DEFAULT_SPARSE_THRESHOLD,
            standardize: true,
            account_mix: AccountMix::Modal,
            distance: DistanceMode::L1,
            k: None,
            k_min: 2,
            k_max: 8,
            restarts: 50,
            sweep_restarts: 10,
            max_iter: 300,
            perplexity: 30.0,
            tsne_iterations: 1000,
            learning_rate: 200.0,
            embed_max_points: 2_000,
            bootstrap_resamples: 1_000,
            bootstrap_level: 0.95,
            adjustment: Adjustment::Holm,
            rt_bin_edges: rt_bin_edges(),
            kl_epsilon: DEFAULT_KL_EPSILON,
            heatmap_sample: 53,
            seeds: StageSeeds::default(),
        }
    }
}

fn config_err(e: impl fmt::Display) -> Error {
    Error::Config(e.to_string())
}

/// Parse an override value as a TOML literal, falling back to a bare string.
fn override_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => match t.remove("v") {
            // dates are carried as strings in the config
            Some(toml::Value::Datetime(d)) => toml::Value::String(d.to_string()),
            Some(v) => v,
            None => toml::Value::String(raw.to_string()),
        },
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Set a dotted key (e.g. `seeds.embed`) in a TOML table.
pub fn apply_override(table: &mut toml::Table, key: &str, raw: &str) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(config_err(format!("malformed key `{key}`")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| config_err(format!("`{p}` is not a table in key `{key}`")))?;
    }
    let mut value = override_value(raw);
    if let (Some(toml::Value::Array(_)), toml::Value::String(s)) =
        (cur.get(parts[parts.len() - 1]), &value)
    {
        // comma-separated list shorthand: `--set stages=cluster,stats`
        value = toml::Value::Array(s.split(',').map(|x| override_value(x.trim())).collect());
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(config_err)
    }

    /// Load an optional config file, then apply `key=value` overrides and an
    /// optional master seed.
    pub fn load(
        path: Option<&Path>,
        overrides: &[(String, String)],
        seed: Option<u64>,
    ) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| config_err(format!("{}: {e}", p.display())))?,
            None => RunConfig::default().to_toml()?,
        };
        let mut table: toml::Table = toml::from_str(&text).map_err(config_err)?;
        for (k, v) in overrides {
            apply_override(&mut table, k, v)?;
        }
        if let Some(s) = seed {
            table.insert("seed".into(), toml::Value::Integer(s as i64));
        }
        let cfg: RunConfig = toml::Value::Table(table).try_into().map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.window_start >= self.snapshot {
            return fail("window_start must precede snapshot".into());
        }
        if self.k_min < 2 || self.k_min > self.k_max {
            return fail(format!(
                "need 2 <= k_min <= k_max, got {}..{}",
                self.k_min, self.k_max
            ));
        }
        if self.k.is_some_and(|k| k < 2) {
            return fail("k must be at least 2".into());
        }
        if self.restarts == 0 || self.sweep_restarts == 0 || self.max_iter == 0 {
            return fail("restarts and max_iter must be positive".into());
        }
        if !(self.perplexity > 0.0) || !(self.learning_rate > 0.0) || self.tsne_iterations == 0 {
            return fail("t-SNE parameters must be positive".into());
        }
        if self.embed_max_points < 4 {
            return fail("embed_max_points must be at least 4".into());
        }
        if self.bootstrap_resamples == 0
            || !(self.bootstrap_level > 0.0 && self.bootstrap_level < 1.0)
        {
            return fail("bootstrap needs resamples > 0 and level in (0, 1)".into());
        }
        if self.rt_bin_edges.len() < 2 || self.rt_bin_edges.windows(2).any(|w| !(w[1] > w[0])) {
            return fail("rt_bin_edges must be strictly increasing".into());
        }
        if !(self.kl_epsilon > 0.0) || !(0.0..=1.0).contains(&self.sparse_threshold) {
            return fail("kl_epsilon must be positive and sparse_threshold in [0, 1]".into());
        }
        if !self.delimiter.is_ascii() {
            return fail("delimiter must be a single ASCII character".into());
        }
        if self.stages.is_empty() {
            return fail("no stages selected".into());
        }
        if let (Some(a), Some(b)) = (&self.clients, &self.transactions) {
            if a == b {
                return fail("client and transaction inputs must be distinct files".into());
            }
        }
        for input in self.clients.iter().chain(&self.transactions) {
            if input.parent().is_some_and(|p| p == self.output_dir) {
                return fail(format!(
                    "input {} lies inside the output directory",
                    input.display()
                ));
            }
        }
        Ok(())
    }

    /// Seed of a stochastic stage: the explicit value or one derived from
    /// the master seed and the stage name.
    pub fn stage_seed(&self, name: &str) -> u64 {
        let explicit = match name {
            "synth" => self.seeds.synth,
            "sweep" => self.seeds.sweep,
            "cluster" => self.seeds.cluster,
            "embed" => self.seeds.embed,
            "sample" => self.seeds.sample,
            "bootstrap" => self.seeds.bootstrap,
            _ => None,
        };
        explicit.unwrap_or_else(|| derive_seed_str(self.seed, name))
    }

    pub fn resolved_seeds(&self) -> BTreeMap<String, u64> {
        ["synth", "sweep", "cluster", "embed", "sample", "bootstrap"]
            .into_iter()
            .map(|s| (s.to_string(), self.stage_seed(s)))
            .collect()
    }

    /// SHA-256 of the canonical configuration, excluding the output
    /// directory so the same analysis hashes identically wherever it lands.
    pub fn hash(&self) -> Result<String> {
        let canonical = RunConfig {
            output_dir: PathBuf::new(),
            ..self.clone()
        };
        Ok(hex::encode(Sha256::digest(canonical.to_toml()?.as_bytes())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Completed,
    Failed,
    /// Requested but not run because an earlier stage failed.
    Skipped,
    NotRequested,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    /// Relative to the output directory.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub status: StageStatus,
    pub error: Option<String>,
    pub outputs: Vec<OutputRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub manifest_version: u32,
    pub tool: String,
    pub tool_version: String,
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    pub stages: Vec<StageRecord>,
}

impl RunManifest {
    pub fn succeeded(&self) -> bool {
        self.stages
            .iter()
            .all(|s| matches!(s.status, StageStatus::Completed | StageStatus::NotRequested))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let f = File::open(dir.join(MANIFEST_FILE))?;
        Ok(serde_json::from_reader(BufReader::new(f))?)
    }

    /// Recompute every recorded checksum; returns the paths that differ or
    /// are missing.
    pub fn verify(&self, dir: &Path) -> Result<Vec<String>> {
        let mut bad = Vec::new();
        for o in self.stages.iter().flat_map(|s| &s.outputs) {
            match file_sha256(&dir.join(&o.path)) {
                Ok((hash, bytes)) if hash == o.sha256 && bytes == o.bytes => {}
                _ => bad.push(o.path.clone()),
            }
        }
        Ok(bad)
    }
}

pub fn file_sha256(path: &Path) -> Result<(String, u64)> {
    let mut f = File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut total = 0u64;
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
        total += n as u64;
    }
    Ok((hex::encode(h.finalize()), total))
}

/// Summary written by the ingest stage and read by the features stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub client_rows: usize,
    pub clients_kept: usize,
    pub removed_incomplete: usize,
    pub client_issues: usize,
    pub dropped_columns: Vec<String>,
    pub excluded_fields: BTreeSet<ClientField>,
    pub transaction_rows_parsed: usize,
    pub transaction_issues: usize,
    pub unfilled_removed: usize,
    pub orphan_removed: usize,
    pub transactions_kept: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub chosen_k: usize,
    pub db_k: usize,
    pub reports: Vec<ValidityReport>,
}

/// Per-class totals as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TotalsFile {
    pub third_party: f64,
    pub systematic: f64,
    pub periodic: f64,
    pub grand_total: f64,
}

impl TotalsFile {
    fn from_totals(t: &crate::features::ClassTotals) -> Self {
        Self {
            third_party: t.get(TradeClass::ThirdParty),
            systematic: t.get(TradeClass::Systematic),
            periodic: t.get(TradeClass::Periodic),
            grand_total: t.grand_total(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StatsSummary {
    pub k: usize,
    pub group_sizes: Vec<usize>,
    pub anova: AnovaTable,
    pub tukey: TestReport,
    pub kruskal_wallis: TestReport,
    pub h_uncorrected: f64,
    pub dunn: TestReport,
    pub kl_pairs: Vec<Vec<f64>>,
    pub totals_features: TotalsFile,
    pub totals_series: TotalsFile,
    pub totals_reconciled: bool,
}

// file names
const SYNTH_CLIENTS: &str = "synth_clients.csv";
const SYNTH_TXNS: &str = "synth_transactions.csv";
const CLIENTS_CLEAN: &str = "clients_clean.csv";
const TXNS_CLEAN: &str = "transactions_clean.csv";
const INGEST_SUMMARY: &str = "ingest_summary.json";
const FEATURES_CSV: &str = "features.csv";
const FEATURES_META: &str = "features_meta.json";
const CLASS_TOTALS: &str = "class_totals.json";
const SWEEP_SUMMARY: &str = "sweep_summary.json";
const MODEL: &str = "model.txt";

struct Run<'a> {
    cfg: &'a RunConfig,
    dir: PathBuf,
    clients: Option<Vec<ClientRecord>>,
    txns: Option<Vec<TransactionRecord>>,
    summary: Option<IngestSummary>,
    matrix: Option<FeatureMatrix>,
    chosen_k: Option<usize>,
    model: Option<ClusterModel>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let f = File::open(path).map_err(|e| Error::Format {
        path: path.into(),
        reason: e.to_string(),
    })?;
    Ok(serde_json::from_reader(BufReader::new(f))?)
}

impl<'a> Run<'a> {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn open(&self, name: &str) -> Result<BufReader<File>> {
        let p = self.path(name);
        File::open(&p)
            .map(BufReader::new)
            .map_err(|e| Error::Format {
                path: p,
                reason: format!("missing upstream artifact: {e}"),
            })
    }

    fn write(
        &self,
        name: &str,
        body: impl FnOnce(&mut BufWriter<File>) -> Result<()>,
    ) -> Result<String> {
        let mut w = BufWriter::new(File::create(self.path(name))?);
        body(&mut w)?;
        w.flush()?;
        Ok(name.to_string())
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<String> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            w.write_all(b"\n")?;
            Ok(())
        })
    }

    fn delimiter(&self) -> u8 {
        self.cfg.delimiter as u8
    }

    fn ensure_clients(&mut self) -> Result<()> {
        if self.clients.is_none() {
            let (recs, _) =
                parse_clients(self.open(CLIENTS_CLEAN)?, &ClientSchema::default(), b',')?;
            self.clients = Some(recs);
        }
        Ok(())
    }

    fn ensure_txns(&mut self) -> Result<()> {
        if self.txns.is_none() {
            let (recs, _) = parse_transactions(
                self.open(TXNS_CLEAN)?,
                &TransactionSchema::default(),
                b',',
                None,
            )?;
            self.txns = Some(recs);
        }
        Ok(())
    }

    fn ensure_summary(&mut self) -> Result<()> {
        if self.summary.is_none() {
            self.summary = Some(read_json(&self.path(INGEST_SUMMARY))?);
        }
        Ok(())
    }

    fn ensure_matrix(&mut self) -> Result<()> {
        if self.matrix.is_none() {
            self.matrix = Some(FeatureMatrix::load(
                &self.path(FEATURES_CSV),
                &self.path(FEATURES_META),
            )?);
        }
        Ok(())
    }

    fn ensure_model(&mut self) -> Result<()> {
        self.ensure_matrix()?;
        if self.model.is_none() {
            let m = self.matrix.as_ref().expect("loaded");
            let (model, ids) = read_model(self.open(MODEL)?, &m.levels)?;
            if ids != m.client_ids {
                return Err(Error::LayoutMismatch(
                    "model labels do not match the feature matrix".into(),
                ));
            }
            self.model = Some(model);
        }
        Ok(())
    }

    fn synth(&mut self) -> Result<Vec<String>> {
        let spec = PopulationSpec {
            n_clients: self.cfg.synth_clients,
            ..PopulationSpec::default()
        };
        let pop = generate_population(&spec, self.cfg.stage_seed("synth"))?;
        log::info!(
            "synth: {} clients, {} transactions",
            pop.clients.len(),
            pop.transactions.len()
        );
        Ok(vec![
            self.write(SYNTH_CLIENTS, |w| write_clients_csv(&pop.clients, w))?,
            self.write(SYNTH_TXNS, |w| write_transactions_csv(&pop.transactions, w))?,
        ])
    }

    fn ingest(&mut self) -> Result<Vec<String>> {
        let cfg = self.cfg;
        let (cpath, tpath, delim) = match (&cfg.clients, &cfg.transactions) {
            (Some(c), Some(t)) => (c.clone(), t.clone(), self.delimiter()),
            (None, None) => (self.path(SYNTH_CLIENTS), self.path(SYNTH_TXNS), b','),
            _ => {
                return Err(Error::Config(
                    "set both clients and transactions, or neither".into(),
                ))
            }
        };
        let open = |p: &Path| {
            File::open(p)
                .map(BufReader::new)
                .map_err(|e| Error::Format {
                    path: p.into(),
                    reason: e.to_string(),
                })
        };
        let (table, mut client_issues) = read_table(open(&cpath)?, delim)?;
        let opts = CleaningOptions {
            sparse_threshold: cfg.sparse_threshold,
            ..CleaningOptions::default()
        };
        let clean = clean_clients(&table, &ClientSchema::default(), &opts)?;
        client_issues.extend(clean.issues.iter().cloned());
        client_issues.sort_by_key(|i| i.row);

        let window = DateWindow {
            start: cfg.window_start,
            end: cfg.snapshot,
        };
        let (txns, txn_issues) = parse_transactions(
            open(&tpath)?,
            &TransactionSchema::default(),
            delim,
            Some(window),
        )?;
        let parsed = txns.len();
        let (txns, unfilled) = retain_filled(txns);
        let kept_ids: BTreeSet<&str> = clean.records.iter().map(|c| c.client_id.as_str()).collect();
        let before = txns.len();
        let txns: Vec<TransactionRecord> = txns
            .into_iter()
            .filter(|t| kept_ids.contains(t.client_id.as_str()))
            .collect();
        let summary = IngestSummary {
            client_rows: clean.rows_in,
            clients_kept: clean.records.len(),
            removed_incomplete: clean.removed_incomplete,
            client_issues: client_issues.len(),
            dropped_columns: clean.dropped_columns.clone(),
            excluded_fields: clean.excluded_fields.clone(),
            transaction_rows_parsed: parsed,
            transaction_issues: txn_issues.len(),
            unfilled_removed: unfilled,
            orphan_removed: before - txns.len(),
            transactions_kept: txns.len(),
        };
        log::info!(
            "ingest: kept {} clients and {} transactions",
            summary.clients_kept,
            summary.transactions_kept
        );
        let files = vec![
            self.write(CLIENTS_CLEAN, |w| write_clients_csv(&clean.records, w))?,
            self.write(TXNS_CLEAN, |w| write_transactions_csv(&txns, w))?,
            self.write("client_issues.csv", |w| write_issues(&client_issues, w))?,
            self.write("transaction_issues.csv", |w| write_issues(&txn_issues, w))?,
            self.write_json(INGEST_SUMMARY, &summary)?,
        ];
        self.clients = Some(clean.records);
        self.txns = Some(txns);
        self.summary = Some(summary);
        Ok(files)
    }

    fn features(&mut self) -> Result<Vec<String>> {
        self.ensure_clients()?;
        self.ensure_txns()?;
        self.ensure_summary()?;
        let cfg = self.cfg;
        let opts = FeatureOptions {
            standardize: cfg.standardize,
            account_mix: cfg.account_mix,
            excluded: self
                .summary
                .as_ref()
                .expect("loaded")
                .excluded_fields
                .clone(),
            ..FeatureOptions::new(cfg.snapshot, cfg.window_start)
        };
        let txns = self.txns.as_ref().expect("loaded");
        let m = build_matrix(self.clients.as_ref().expect("loaded"), txns, &opts)?;
        let totals = TotalsFile::from_totals(&class_totals(txns));
        log::info!(
            "features: {} clients × {} numeric + {} categorical",
            m.n(),
            m.p(),
            m.q()
        );
        let files = vec![
            self.write(FEATURES_CSV, |w| m.write_csv(w))?,
            self.write(FEATURES_META, |w| m.write_meta(w))?,
            self.write_json(CLASS_TOTALS, &totals)?,
        ];
        self.matrix = Some(m);
        Ok(files)
    }

    fn fit_options(&self, restarts: usize, seed: u64) -> FitOptions {
        FitOptions {
            restarts,
            seed,
            mode: self.cfg.distance,
            max_iter: self.cfg.max_iter,
        }
    }

    fn sweep(&mut self) -> Result<Vec<String>> {
        self.ensure_matrix()?;
        let m = self.matrix.as_ref().expect("loaded");
        let k_max = self.cfg.k_max.min(m.n());
        let opts = self.fit_options(self.cfg.sweep_restarts, self.cfg.stage_seed("sweep"));
        let res = sweep_k(m, self.cfg.k_min, k_max, &opts, DEFAULT_MATERIALIZE_CUTOFF)?;
        log::info!(
            "sweep: silhouette picks k = {}, Davies-Bouldin picks k = {}",
            res.chosen_k,
            res.db_k
        );
        let summary = SweepSummary {
            chosen_k: res.chosen_k,
            db_k: res.db_k,
            reports: res.reports.clone(),
        };
        let files = vec![
            self.write("validity.csv", |w| res.write_csv(w))?,
            self.write_json(SWEEP_SUMMARY, &summary)?,
        ];
        self.chosen_k = Some(res.chosen_k);
        Ok(files)
    }

    fn cluster(&mut self) -> Result<Vec<String>> {
        self.ensure_matrix()?;
        let k = match (self.cfg.k, self.chosen_k) {
            (Some(k), _) | (None, Some(k)) => k,
            (None, None) => {
                let s: SweepSummary = read_json(&self.path(SWEEP_SUMMARY))
                    .map_err(|_| Error::invalid("no k configured and no sweep result available"))?;
                s.chosen_k
            }
        };
        let seed = self.cfg.stage_seed("cluster");
        let m = self.matrix.as_ref().expect("loaded");
        let model = fit(m, k, &self.fit_options(self.cfg.restarts, seed))?;
        log::info!(
            "cluster: k = {k}, cost {:.4}, sizes {:?}",
            model.cost,
            model.sizes()
        );
        let files = vec![
            self.write(MODEL, |w| write_model(&model, m, seed, w))?,
            self.write("centroids.csv", |w| write_centroid_table(&model, m, w))?,
        ];
        self.model = Some(model);
        Ok(files)
    }

    fn embed(&mut self) -> Result<Vec<String>> {
        self.ensure_model()?;
        let (m, model) = (
            self.matrix.as_ref().expect("loaded"),
            self.model.as_ref().expect("loaded"),
        );
        let rows: Vec<usize> = if m.n() > self.cfg.embed_max_points {
            stratified_sample(
                &model.labels,
                model.k,
                self.cfg.embed_max_points,
                self.cfg.stage_seed("sample"),
            )?
        } else {
            (0..m.n()).collect()
        };
        let sub = m.subset(&rows);
        let labels: Vec<usize> = rows.iter().map(|&i| model.labels[i]).collect();
        let opts = TsneOptions {
            perplexity: self.cfg.perplexity,
            iterations: self.cfg.tsne_iterations,
            learning_rate: self.cfg.learning_rate,
            seed: self.cfg.stage_seed("embed"),
            ..TsneOptions::default()
        };
        let map = tsne(&sub, self.cfg.distance, &opts)?;
        log::info!("embed: {} points, final KL {:.4}", sub.n(), map.final_kl);
        Ok(vec![
            self.write("embedding.csv", |w| {
                map.write_csv(&sub.client_ids, Some(&labels), w)
            })?,
            self.write("embedding.svg", |w| {
                write_scatter_svg(&map.coords, &labels, w)
            })?,
            self.write("embedding_trace.csv", |w| {
                let mut cw = csv::Writer::from_writer(w);
                cw.write_record(["iteration", "kl"])?;
                for (it, kl) in &map.kl_trace {
                    cw.write_record([it.to_string(), format!("{kl}")])?;
                }
                cw.flush()?;
                Ok(())
            })?,
        ])
    }

    fn stats(&mut self) -> Result<Vec<String>> {
        self.ensure_clients()?;
        self.ensure_txns()?;
        self.ensure_model()?;
        let cfg = self.cfg;
        let (m, model) = (
            self.matrix.as_ref().expect("loaded"),
            self.model.as_ref().expect("loaded"),
        );
        let k = model.k;
        let label_of: HashMap<String, usize> = m
            .client_ids
            .iter()
            .cloned()
            .zip(model.labels.iter().copied())
            .collect();
        let mut groups: Vec<Vec<f64>> = vec![Vec::new(); k];
        for c in self.clients.as_ref().expect("loaded") {
            if let (Some(rt), Some(&l)) = (c.risk_tolerance, label_of.get(&c.client_id)) {
                groups[l].push(rt);
            }
        }
        let anova = one_way_anova(&groups)?;
        let tukey = tukey_hsd(&groups, Some(0.95))?;
        let (kw, h_uncorrected) = kruskal_wallis(&groups)?;
        let dunn = dunn_test(&groups, cfg.adjustment)?;
        let edges = &cfg.rt_bin_edges;
        let densities: Vec<Vec<f64>> = groups
            .iter()
            .map(|g| histogram_density(g, edges))
            .collect::<Result<_>>()?;
        let masses: Vec<Vec<f64>> = densities
            .iter()
            .map(|d| bin_masses(d, edges))
            .collect::<Result<_>>()?;
        let kl = kl_pair_table(&masses, cfg.kl_epsilon)?;

        let txns = self.txns.as_ref().expect("loaded");
        let series = monthly_cluster_series(
            txns,
            &label_of,
            k,
            cfg.bootstrap_resamples,
            cfg.bootstrap_level,
            cfg.stage_seed("bootstrap"),
        )?;
        let totals_features: TotalsFile = read_json(&self.path(CLASS_TOTALS))?;
        let totals_series = TotalsFile::from_totals(&series.totals);
        let reconciled = totals_features == totals_series;
        if !reconciled {
            return Err(Error::invalid(format!(
                "class totals do not reconcile: features {totals_features:?} vs series {totals_series:?}"
            )));
        }
        let summary = StatsSummary {
            k,
            group_sizes: groups.iter().map(Vec::len).collect(),
            anova: anova.clone(),
            tukey: tukey.clone(),
            kruskal_wallis: kw.clone(),
            h_uncorrected,
            dunn: dunn.clone(),
            kl_pairs: kl.clone(),
            totals_features,
            totals_series,
            totals_reconciled: reconciled,
        };
        log::info!(
            "stats: ANOVA F = {:.4}, Kruskal-Wallis H = {:.4}",
            anova.f,
            kw.statistic
        );
        Ok(vec![
            self.write("anova.csv", |w| {
                let mut cw = csv::Writer::from_writer(w);
                cw.write_record(["term", "df", "sum_sq", "mean_sq", "f", "p_value"])?;
                let a = &anova;
                cw.write_record([
                    "cluster".to_string(),
                    format!("{}", a.df_between),
                    format!("{}", a.ss_between),
                    format!("{}", a.ms_between),
                    format!("{}", a.f),
                    format!("{}", a.p_value),
                ])?;
                cw.write_record([
                    "residuals".to_string(),
                    format!("{}", a.df_within),
                    format!("{}", a.ss_within),
                    format!("{}", a.ms_within),
                    String::new(),
                    String::new(),
                ])?;
                cw.flush()?;
                Ok(())
            })?,
            self.write("tukey.csv", |w| tukey.write_pairs(w))?,
            self.write("kruskal_wallis.csv", |w| {
                let mut cw = csv::Writer::from_writer(w);
                cw.write_record(["statistic", "df", "p_value", "statistic_uncorrected"])?;
                cw.write_record([
                    format!("{}", kw.statistic),
                    format!("{}", kw.df[0]),
                    format!("{}", kw.p_value),
                    format!("{h_uncorrected}"),
                ])?;
                cw.flush()?;
                Ok(())
            })?,
            self.write("dunn.csv", |w| dunn.write_pairs(w))?,
            self.write("kl_pairs.csv", |w| {
                let mut cw = csv::Writer::from_writer(w);
                let mut header = vec!["cluster".to_string()];
                header.extend((1..=k).map(|l| l.to_string()));
                cw.write_record(&header)?;
                for (i, row) in kl.iter().enumerate() {
                    let mut rec = vec![(i + 1).to_string()];
                    rec.extend(row.iter().map(|v| format!("{v}")));
                    cw.write_record(&rec)?;
                }
                cw.flush()?;
                Ok(())
            })?,
            self.write("rt_histograms.csv", |w| {
                let mut cw = csv::Writer::from_writer(w);
                cw.write_record(["cluster", "bin_lower", "bin_upper", "density", "mass"])?;
                for (l, (d, ms)) in densities.iter().zip(&masses).enumerate() {
                    for (b, e) in edges.windows(2).enumerate() {
                        cw.write_record([
                            (l + 1).to_string(),
                            format!("{}", e[0]),
                            format!("{}", e[1]),
                            format!("{}", d[b]),
                            format!("{}", ms[b]),
                        ])?;
                    }
                }
                cw.flush()?;
                Ok(())
            })?,
            self.write("monthly_series.csv", |w| series.write_csv(w))?,
            self.write_json("stats.json", &summary)?,
        ])
    }

    fn report(&mut self) -> Result<Vec<String>> {
        self.ensure_model()?;
        let (m, model) = (
            self.matrix.as_ref().expect("loaded"),
            self.model.as_ref().expect("loaded"),
        );
        let n = self.cfg.heatmap_sample.min(m.n());
        let sample = stratified_sample(&model.labels, model.k, n, self.cfg.stage_seed("sample"))?;
        let order = average_linkage_order(&m.subset(&sample), self.cfg.distance);
        let rows: Vec<usize> = order.iter().map(|&o| sample[o]).collect();
        Ok(vec![self.write("heatmap.csv", |w| {
            write_heatmap(m, &rows, &model.labels, w)
        })?])
    }

    fn run_stage(&mut self, stage: Stage) -> Result<Vec<String>> {
        match stage {
            Stage::Synth => self.synth(),
            Stage::Ingest => self.ingest(),
            Stage::Features => self.features(),
            Stage::Sweep => self.sweep(),
            Stage::Cluster => self.cluster(),
            Stage::Embed => self.embed(),
            Stage::Stats => self.stats(),
            Stage::Report => self.report(),
        }
    }
}

/// Execute the configured stages and write `manifest.json`.
///
/// Configuration problems are returned as errors. A failing stage is
/// recorded in the manifest, later requested stages are marked skipped, and
/// the manifest is still written.
pub fn run(cfg: &RunConfig) -> Result<RunManifest> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let requested: BTreeSet<Stage> = cfg.stages.iter().copied().collect();
    let mut state = Run {
        cfg,
        dir: cfg.output_dir.clone(),
        clients: None,
        txns: None,
        summary: None,
        matrix: None,
        chosen_k: None,
        model: None,
    };
    let mut records = Vec::new();
    let mut failed = false;
    for stage in Stage::ALL {
        let record = if !requested.contains(&stage) {
            StageRecord {
                stage,
                status: StageStatus::NotRequested,
                error: None,
                outputs: Vec::new(),
            }
        } else if failed {
            StageRecord {
                stage,
                status: StageStatus::Skipped,
                error: None,
                outputs: Vec::new(),
            }
        } else {
            log::info!("stage {stage} starting");
            match state.run_stage(stage) {
                Ok(files) => {
                    let mut outputs = Vec::new();
                    for f in files {
                        let (sha256, bytes) = file_sha256(&state.path(&f))?;
                        outputs.push(OutputRecord {
                            path: f,
                            bytes,
                            sha256,
                        });
                    }
                    StageRecord {
                        stage,
                        status: StageStatus::Completed,
                        error: None,
                        outputs,
                    }
                }
                Err(e) => {
                    log::error!("stage {stage} failed: {e}");
                    failed = true;
                    StageRecord {
                        stage,
                        status: StageStatus::Failed,
                        error: Some(e.to_string()),
                        outputs: Vec::new(),
                    }
                }
            }
        };
        records.push(record);
    }
    let manifest = RunManifest {
        manifest_version: MANIFEST_VERSION,
        tool: env!("CARGO_PKG_NAME").to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: cfg.hash()?,
        seeds: cfg.resolved_seeds(),
        stages: records,
    };
    let mut w = BufWriter::new(File::create(cfg.output_dir.join(MANIFEST_FILE))?);
    serde_json::to_writer_pretty(&mut w, &manifest)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(manifest)
}
