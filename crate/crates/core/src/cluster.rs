//! k-prototypes clustering for mixed numeric and categorical data.
//!
//! The distance between a point and a prototype adds the numeric gaps
//! (absolute by default, squared optionally) to the number of mismatched
//! categorical attributes. Prototypes take the within-cluster mean for
//! numeric attributes and the within-cluster mode for categorical ones.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use log::warn;
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, MixedRef};
use crate::numeric::{derive_seed, rng_from_seed};

pub const DEFAULT_MAX_ITER: usize = 300;
pub const DEFAULT_RESTARTS: usize = 50;

/// How numeric gaps enter the mixed distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMode {
    /// Sum of absolute differences.
    #[default]
    L1,
    /// Sum of squared differences.
    SquaredEuclidean,
}

impl DistanceMode {
    pub fn name(self) -> &'static str {
        match self {
            DistanceMode::L1 => "l1",
            DistanceMode::SquaredEuclidean => "squared_euclidean",
        }
    }
}

impl fmt::Display for DistanceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DistanceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "l1" | "abs" | "literal" => Ok(DistanceMode::L1),
            "squared_euclidean" | "squared" | "sqeuclidean" => Ok(DistanceMode::SquaredEuclidean),
            other => Err(Error::invalid(format!("unknown distance mode `{other}`"))),
        }
    }
}

/// A cluster prototype with the same layout as a feature row.
#[derive(Debug, Clone, PartialEq)]
pub struct Centroid {
    pub numeric: Vec<f64>,
    pub categorical: Vec<u32>,
}

impl Centroid {
    pub fn from_row(row: MixedRef<'_>) -> Self {
        Self {
            numeric: row.numeric.to_vec(),
            categorical: row.categorical.to_vec(),
        }
    }

    pub fn as_ref(&self) -> MixedRef<'_> {
        MixedRef {
            numeric: &self.numeric,
            categorical: &self.categorical,
        }
    }
}

/// Mixed distance; layouts are assumed to match.
#[inline]
pub fn distance_unchecked(x: MixedRef<'_>, c: MixedRef<'_>, mode: DistanceMode) -> f64 {
    let num: f64 = match mode {
        DistanceMode::L1 => x
            .numeric
            .iter()
            .zip(c.numeric)
            .map(|(a, b)| (a - b).abs())
            .sum(),
        DistanceMode::SquaredEuclidean => x
            .numeric
            .iter()
            .zip(c.numeric)
            .map(|(a, b)| (a - b) * (a - b))
            .sum(),
    };
    let mismatches = x
        .categorical
        .iter()
        .zip(c.categorical)
        .filter(|(a, b)| a != b)
        .count();
    num + mismatches as f64
}

/// Mixed distance between a point and a prototype.
pub fn mixed_distance(x: MixedRef<'_>, c: MixedRef<'_>, mode: DistanceMode) -> Result<f64> {
    if x.numeric.len() != c.numeric.len() || x.categorical.len() != c.categorical.len() {
        return Err(Error::LayoutMismatch(format!(
            "({}, {}) vs ({}, {})",
            x.numeric.len(),
            x.categorical.len(),
            c.numeric.len(),
            c.categorical.len()
        )));
    }
    Ok(distance_unchecked(x, c, mode))
}

fn check_layout(matrix: &FeatureMatrix, centroids: &[Centroid]) -> Result<()> {
    for c in centroids {
        if c.numeric.len() != matrix.p() || c.categorical.len() != matrix.q() {
            return Err(Error::LayoutMismatch(
                "centroid layout differs from matrix".into(),
            ));
        }
    }
    Ok(())
}

fn nearest(x: MixedRef<'_>, centroids: &[Centroid], mode: DistanceMode) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (l, c) in centroids.iter().enumerate() {
        let d = distance_unchecked(x, c.as_ref(), mode);
        if d < best.1 {
            best = (l, d);
        }
    }
    best
}

/// Nearest-prototype labels (0-based); ties go to the lowest index.
pub fn assign(
    matrix: &FeatureMatrix,
    centroids: &[Centroid],
    mode: DistanceMode,
) -> Result<Vec<usize>> {
    if centroids.is_empty() {
        return Err(Error::invalid("k must be at least 1"));
    }
    check_layout(matrix, centroids)?;
    Ok((0..matrix.n())
        .map(|i| nearest(matrix.row(i), centroids, mode).0)
        .collect())
}

/// Total cost J: sum of each point's distance to its own prototype.
pub fn total_cost(
    matrix: &FeatureMatrix,
    labels: &[usize],
    centroids: &[Centroid],
    mode: DistanceMode,
) -> Result<f64> {
    check_labels(matrix, labels, centroids.len())?;
    check_layout(matrix, centroids)?;
    Ok(cost_unchecked(matrix, labels, centroids, mode))
}

fn cost_unchecked(
    matrix: &FeatureMatrix,
    labels: &[usize],
    centroids: &[Centroid],
    mode: DistanceMode,
) -> f64 {
    labels
        .iter()
        .enumerate()
        .map(|(i, &l)| distance_unchecked(matrix.row(i), centroids[l].as_ref(), mode))
        .sum()
}

fn check_labels(matrix: &FeatureMatrix, labels: &[usize], k: usize) -> Result<()> {
    if labels.len() != matrix.n() {
        return Err(Error::LayoutMismatch(format!(
            "{} labels for {} points",
            labels.len(),
            matrix.n()
        )));
    }
    if let Some(l) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::invalid(format!(
            "label {l} out of range for k = {k}"
        )));
    }
    Ok(())
}

/// Recompute prototypes: numeric mean and categorical mode (ties to the
/// lexicographically smallest category) per cluster.
///
/// A cluster left without members is reseeded with the point lying farthest
/// from its own updated prototype. Returns the prototypes and the number of
/// reseeded clusters.
pub fn update_centroids(
    matrix: &FeatureMatrix,
    labels: &[usize],
    k: usize,
    mode: DistanceMode,
) -> Result<(Vec<Centroid>, usize)> {
    check_labels(matrix, labels, k)?;
    let (p, q) = (matrix.p(), matrix.q());
    let mut sums = vec![0.0; k * p];
    let mut sizes = vec![0usize; k];
    let mut counts: Vec<Vec<Vec<usize>>> = (0..k)
        .map(|_| (0..q).map(|j| vec![0; matrix.levels[j].len()]).collect())
        .collect();
    for (i, &l) in labels.iter().enumerate() {
        let row = matrix.row(i);
        sizes[l] += 1;
        for (s, v) in sums[l * p..(l + 1) * p].iter_mut().zip(row.numeric) {
            *s += v;
        }
        for (j, &c) in row.categorical.iter().enumerate() {
            counts[l][j][c as usize] += 1;
        }
    }
    let mut centroids: Vec<Option<Centroid>> = (0..k)
        .map(|l| {
            if sizes[l] == 0 {
                return None;
            }
            let n = sizes[l] as f64;
            let numeric = sums[l * p..(l + 1) * p].iter().map(|s| s / n).collect();
            // levels are sorted, so the first maximal code is the smallest category
            let categorical = counts[l]
                .iter()
                .map(|cnt| {
                    let mut best = 0;
                    for (code, &c) in cnt.iter().enumerate() {
                        if c > cnt[best] {
                            best = code;
                        }
                    }
                    best as u32
                })
                .collect();
            Some(Centroid {
                numeric,
                categorical,
            })
        })
        .collect();

    let empty: Vec<usize> = (0..k).filter(|&l| sizes[l] == 0).collect();
    if !empty.is_empty() {
        let mut far: Vec<(f64, usize)> = labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| sizes[l] > 1)
            .map(|(i, &l)| {
                let c = centroids[l].as_ref().expect("non-empty cluster");
                (distance_unchecked(matrix.row(i), c.as_ref(), mode), i)
            })
            .collect();
        // farthest first, lowest index among equals
        far.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut donors = far.into_iter().map(|(_, i)| i);
        for l in empty {
            let i = donors.next().ok_or_else(|| {
                Error::Degenerate("not enough points to reseed empty clusters".into())
            })?;
            centroids[l] = Some(Centroid::from_row(matrix.row(i)));
        }
    }
    let reseeded = sizes.iter().filter(|&&s| s == 0).count();
    Ok((
        centroids.into_iter().map(|c| c.expect("filled")).collect(),
        reseeded,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub restarts: usize,
    pub seed: u64,
    pub mode: DistanceMode,
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            restarts: DEFAULT_RESTARTS,
            seed: 0,
            mode: DistanceMode::L1,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

/// Result of a k-prototypes fit (the best restart).
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Vec<Centroid>,
    /// 0-based cluster index per point.
    pub labels: Vec<usize>,
    pub cost: f64,
    pub iterations: usize,
    pub restart_index: usize,
    pub restart_seed: u64,
    pub cost_trace: Vec<f64>,
    pub converged: bool,
    pub mode: DistanceMode,
    pub reseeds: usize,
}

impl ClusterModel {
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &l in &self.labels {
            s[l] += 1;
        }
        s
    }
}

/// One restart from the given initial prototypes.
pub fn run_from(
    matrix: &FeatureMatrix,
    init: Vec<Centroid>,
    mode: DistanceMode,
    max_iter: usize,
) -> Result<ClusterModel> {
    let k = init.len();
    let mut centroids = init;
    let mut labels = assign(matrix, &centroids, mode)?;
    let mut trace = vec![cost_unchecked(matrix, &labels, &centroids, mode)];
    let mut converged = false;
    let mut iterations = 0;
    let mut reseeds = 0;
    while iterations < max_iter {
        iterations += 1;
        let (next, r) = update_centroids(matrix, &labels, k, mode)?;
        reseeds += r;
        centroids = next;
        let next_labels = assign(matrix, &centroids, mode)?;
        trace.push(cost_unchecked(matrix, &next_labels, &centroids, mode));
        let same = next_labels == labels;
        labels = next_labels;
        if same {
            converged = true;
            break;
        }
    }
    let cost = *trace.last().expect("trace is non-empty");
    Ok(ClusterModel {
        k,
        centroids,
        labels,
        cost,
        iterations,
        restart_index: 0,
        restart_seed: 0,
        cost_trace: trace,
        converged,
        mode,
        reseeds,
    })
}

/// Seed used by restart `r` of a fit with master seed `seed`.
pub fn restart_seed(seed: u64, r: usize) -> u64 {
    derive_seed(seed, r as u64)
}

/// Indices of the k distinct clients that initialize restart `r`.
pub fn initial_indices(n: usize, k: usize, seed: u64, r: usize) -> Vec<usize> {
    let mut rng = rng_from_seed(restart_seed(seed, r));
    sample(&mut rng, n, k).into_vec()
}

/// Multi-restart k-prototypes. Each restart starts from k distinct clients
/// drawn uniformly; the restart with the lowest final cost wins, ties to the
/// lowest restart index.
pub fn fit(matrix: &FeatureMatrix, k: usize, opts: &FitOptions) -> Result<ClusterModel> {
    let n = matrix.n();
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if k > n {
        return Err(Error::invalid(format!(
            "k = {k} exceeds the number of points {n}"
        )));
    }
    if opts.restarts == 0 {
        return Err(Error::invalid("restarts must be at least 1"));
    }
    let runs: Vec<Result<ClusterModel>> = (0..opts.restarts)
        .into_par_iter()
        .map(|r| {
            let init = initial_indices(n, k, opts.seed, r)
                .into_iter()
                .map(|i| Centroid::from_row(matrix.row(i)))
                .collect();
            let mut m = run_from(matrix, init, opts.mode, opts.max_iter)?;
            m.restart_index = r;
            m.restart_seed = restart_seed(opts.seed, r);
            Ok(m)
        })
        .collect();
    let mut best: Option<ClusterModel> = None;
    for run in runs {
        let run = run?;
        if best.as_ref().is_none_or(|b| run.cost < b.cost) {
            best = Some(run);
        }
    }
    let best = best.expect("at least one restart");
    if !best.converged {
        warn!(
            "k-prototypes did not converge within {} iterations (k = {k})",
            opts.max_iter
        );
    }
    Ok(best)
}

const MODEL_MAGIC: &str = "kproto-model 1";

/// Write a model as versioned text: a key=value header, the prototype table
/// (categories by name) and one label per client (1-based).
pub fn write_model<W: Write>(
    model: &ClusterModel,
    matrix: &FeatureMatrix,
    seed: u64,
    mut w: W,
) -> Result<()> {
    if model.labels.len() != matrix.n() {
        return Err(Error::LayoutMismatch(
            "model labels do not match matrix rows".into(),
        ));
    }
    writeln!(w, "{MODEL_MAGIC}")?;
    writeln!(w, "k={}", model.k)?;
    writeln!(w, "p={}", matrix.p())?;
    writeln!(w, "q={}", matrix.q())?;
    writeln!(w, "distance={}", model.mode)?;
    writeln!(w, "seed={seed}")?;
    writeln!(w, "restart_index={}", model.restart_index)?;
    writeln!(w, "restart_seed={}", model.restart_seed)?;
    writeln!(w, "cost={}", model.cost)?;
    writeln!(w, "iterations={}", model.iterations)?;
    writeln!(w, "converged={}", model.converged)?;
    let trace: Vec<String> = model.cost_trace.iter().map(|c| c.to_string()).collect();
    writeln!(w, "cost_trace={}", trace.join(" "))?;
    writeln!(w, "[centroids]")?;
    {
        let mut cw = csv::WriterBuilder::new().from_writer(&mut w);
        let mut header = vec!["cluster".to_string()];
        header.extend(matrix.numeric_names.iter().map(|c| format!("num:{c}")));
        header.extend(matrix.categorical_names.iter().map(|c| format!("cat:{c}")));
        cw.write_record(&header)?;
        for (l, c) in model.centroids.iter().enumerate() {
            let mut rec = vec![(l + 1).to_string()];
            rec.extend(c.numeric.iter().map(|v| v.to_string()));
            rec.extend(
                c.categorical
                    .iter()
                    .enumerate()
                    .map(|(j, &code)| matrix.levels[j][code as usize].clone()),
            );
            cw.write_record(&rec)?;
        }
        cw.flush()?;
    }
    writeln!(w, "[labels]")?;
    writeln!(w, "client_id,cluster")?;
    for (id, l) in matrix.client_ids.iter().zip(&model.labels) {
        writeln!(w, "{id},{}", l + 1)?;
    }
    Ok(())
}

fn format_err(reason: impl Into<String>) -> Error {
    Error::Format {
        path: "model".into(),
        reason: reason.into(),
    }
}

/// Read a model written by [`write_model`]; categories are resolved against
/// `levels`. Returns the model and the client ids in label order.
pub fn read_model<R: BufRead>(r: R, levels: &[Vec<String>]) -> Result<(ClusterModel, Vec<String>)> {
    let mut lines = r.lines();
    let first = lines.next().transpose()?.unwrap_or_default();
    if first.trim() != MODEL_MAGIC {
        return Err(format_err(format!(
            "expected `{MODEL_MAGIC}`, found `{first}`"
        )));
    }
    let mut header = std::collections::BTreeMap::new();
    let mut section = String::new();
    for line in lines.by_ref() {
        let line = line?;
        if line.starts_with('[') {
            section = line;
            break;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format_err(format!("bad header line `{line}`")))?;
        header.insert(key.to_string(), value.to_string());
    }
    if section != "[centroids]" {
        return Err(format_err("missing [centroids] section"));
    }
    let get = |key: &str| {
        header
            .get(key)
            .ok_or_else(|| format_err(format!("missing `{key}`")))
    };
    let parse_usize = |key: &str| {
        get(key)?
            .parse::<usize>()
            .map_err(|e| format_err(format!("{key}: {e}")))
    };
    let k = parse_usize("k")?;
    let p = parse_usize("p")?;
    let q = parse_usize("q")?;
    if levels.len() != q {
        return Err(Error::LayoutMismatch(format!(
            "model has q = {q}, levels given for {}",
            levels.len()
        )));
    }
    let mode: DistanceMode = get("distance")?.parse()?;
    let cost: f64 = get("cost")?.parse().map_err(|_| format_err("bad cost"))?;
    let trace = get("cost_trace")?
        .split_whitespace()
        .map(|s| s.parse::<f64>().map_err(|_| format_err("bad cost trace")))
        .collect::<Result<Vec<_>>>()?;

    let mut centroids = Vec::with_capacity(k);
    let _table_header = lines.next().transpose()?;
    for _ in 0..k {
        let line = lines
            .next()
            .transpose()?
            .ok_or_else(|| format_err("truncated centroid table"))?;
        let mut rd = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_reader(line.as_bytes());
        let rec = rd
            .records()
            .next()
            .ok_or_else(|| format_err("empty centroid row"))??;
        if rec.len() != 1 + p + q {
            return Err(format_err("centroid row has wrong width"));
        }
        let numeric = (1..=p)
            .map(|c| {
                rec[c]
                    .parse::<f64>()
                    .map_err(|_| format_err("bad centroid value"))
            })
            .collect::<Result<Vec<_>>>()?;
        let categorical = (0..q)
            .map(|j| {
                let v = &rec[1 + p + j];
                levels[j]
                    .binary_search_by(|l| l.as_str().cmp(v))
                    .map(|c| c as u32)
                    .map_err(|_| format_err(format!("unknown category `{v}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        centroids.push(Centroid {
            numeric,
            categorical,
        });
    }
    let marker = lines.next().transpose()?.unwrap_or_default();
    if marker != "[labels]" {
        return Err(format_err("missing [labels] section"));
    }
    let _ = lines.next();
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    for line in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let (id, l) = line
            .rsplit_once(',')
            .ok_or_else(|| format_err("bad label line"))?;
        let l: usize = l.parse().map_err(|_| format_err("bad label"))?;
        if l == 0 || l > k {
            return Err(format_err(format!("label {l} out of range")));
        }
        ids.push(id.to_string());
        labels.push(l - 1);
    }
    let model = ClusterModel {
        k,
        centroids,
        labels,
        cost,
        iterations: parse_usize("iterations")?,
        restart_index: parse_usize("restart_index")?,
        restart_seed: get("restart_seed")?
            .parse()
            .map_err(|_| format_err("bad restart_seed"))?,
        cost_trace: trace,
        converged: get("converged")? == "true",
        mode,
        reseeds: 0,
    };
    Ok((model, ids))
}

/// Per-cluster prototype table in original units, with cluster sizes.
pub fn write_centroid_table<W: Write>(
    model: &ClusterModel,
    matrix: &FeatureMatrix,
    w: W,
) -> Result<()> {
    let mut cw = csv::Writer::from_writer(w);
    let mut header = vec!["cluster".to_string(), "size".to_string()];
    header.extend(matrix.numeric_names.iter().cloned());
    header.extend(matrix.categorical_names.iter().cloned());
    cw.write_record(&header)?;
    let sizes = model.sizes();
    for (l, c) in model.centroids.iter().enumerate() {
        let mut rec = vec![(l + 1).to_string(), sizes[l].to_string()];
        for (j, &z) in c.numeric.iter().enumerate() {
            let raw = match &matrix.meta.scaling {
                Some(s) => s[j].invert(z),
                None => z,
            };
            rec.push(format!("{raw:.4}"));
        }
        rec.extend(
            c.categorical
                .iter()
                .enumerate()
                .map(|(j, &code)| matrix.levels[j][code as usize].clone()),
        );
        cw.write_record(&rec)?;
    }
    cw.flush()?;
    Ok(())
}
