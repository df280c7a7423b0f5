//! Percentile bootstrap intervals and monthly per-cluster trade series.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use chrono::{Datelike, NaiveDate};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{trade_amount, ClassTotals, TradeClass};
use crate::ingest::TransactionRecord;
use crate::numeric::{derive_seed_str, quantile_sorted, rng_from_seed, ExactSum};

/// Mean computed relative to the first value, so constant samples return
/// that constant exactly.
fn shifted_mean(xs: impl Iterator<Item = f64>, x0: f64, n: usize) -> f64 {
    x0 + xs.map(|x| x - x0).sum::<f64>() / n as f64
}

/// Percentile bootstrap interval for the mean from `b` resamples.
pub fn bootstrap_ci(samples: &[f64], b: usize, level: f64, seed: u64) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::invalid("bootstrap needs at least one sample"));
    }
    if b == 0 {
        return Err(Error::invalid("bootstrap needs at least one resample"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!(
            "confidence level {level} outside (0, 1)"
        )));
    }
    let n = samples.len();
    let x0 = samples[0];
    let mut rng = rng_from_seed(seed);
    let mut means: Vec<f64> = (0..b)
        .map(|_| shifted_mean((0..n).map(|_| samples[rng.random_range(0..n)]), x0, n))
        .collect();
    means.sort_by(f64::total_cmp);
    let alpha = 1.0 - level;
    let lo = quantile_sorted(&means, alpha / 2.0);
    let hi = quantile_sorted(&means, 1.0 - alpha / 2.0);
    Ok((lo.min(hi), hi.max(lo)))
}

/// One (cluster, month, class) cell. Empty cells carry no mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    /// 0-based cluster index.
    pub cluster: usize,
    /// `YYYY-MM`.
    pub month: String,
    pub class: TradeClass,
    pub count: usize,
    pub total: f64,
    pub mean: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct MonthlySeries {
    pub rows: Vec<SeriesRow>,
    /// Exact per-class totals over every cell.
    pub totals: ClassTotals,
}

impl MonthlySeries {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut cw = csv::Writer::from_writer(w);
        cw.write_record([
            "cluster", "month", "class", "count", "total", "mean", "lower", "upper",
        ])?;
        let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x}"));
        for r in &self.rows {
            cw.write_record([
                (r.cluster + 1).to_string(),
                r.month.clone(),
                r.class.to_string(),
                r.count.to_string(),
                format!("{}", r.total),
                opt(r.mean),
                opt(r.lower),
                opt(r.upper),
            ])?;
        }
        cw.flush()?;
        Ok(())
    }
}

fn month_key(d: NaiveDate) -> (i32, u32) {
    (d.year(), d.month())
}

/// Per-cluster, per-month, per-class mean trade amount with bootstrap
/// bands. Every month between the first and last trade gets a row for
/// every cluster and class.
pub fn monthly_cluster_series(
    txns: &[TransactionRecord],
    labels: &HashMap<String, usize>,
    k: usize,
    resamples: usize,
    level: f64,
    seed: u64,
) -> Result<MonthlySeries> {
    let mut cells: BTreeMap<(usize, (i32, u32), TradeClass), Vec<f64>> = BTreeMap::new();
    let mut first: Option<(i32, u32)> = None;
    let mut last: Option<(i32, u32)> = None;
    for t in txns {
        let cluster = *labels
            .get(&t.client_id)
            .ok_or_else(|| Error::UnknownClient(t.client_id.clone()))?;
        if cluster >= k {
            return Err(Error::invalid(format!(
                "cluster {cluster} out of range for k = {k}"
            )));
        }
        let m = month_key(t.order_date);
        first = Some(first.map_or(m, |f| f.min(m)));
        last = Some(last.map_or(m, |l| l.max(m)));
        cells
            .entry((cluster, m, t.trade_type.class()))
            .or_default()
            .push(trade_amount(t));
    }
    let mut months = Vec::new();
    if let (Some(mut m), Some(end)) = (first, last) {
        while m <= end {
            months.push(m);
            m = if m.1 == 12 {
                (m.0 + 1, 1)
            } else {
                (m.0, m.1 + 1)
            };
        }
    }
    let mut rows = Vec::new();
    let mut totals = ClassTotals::default();
    for cluster in 0..k {
        for &m in &months {
            for class in TradeClass::ALL {
                let month = format!("{:04}-{:02}", m.0, m.1);
                let amounts = cells
                    .get(&(cluster, m, class))
                    .map(Vec::as_slice)
                    .unwrap_or(&[]);
                let sum: ExactSum = amounts.iter().copied().collect();
                totals.merge_class(class, &sum);
                let row = if amounts.is_empty() {
                    SeriesRow {
                        cluster,
                        month,
                        class,
                        count: 0,
                        total: 0.0,
                        mean: None,
                        lower: None,
                        upper: None,
                    }
                } else {
                    let n = amounts.len();
                    let mean = shifted_mean(amounts.iter().copied(), amounts[0], n);
                    let cell_seed = derive_seed_str(seed, &format!("{cluster}/{month}/{class}"));
                    let (lo, hi) = bootstrap_ci(amounts, resamples, level, cell_seed)?;
                    SeriesRow {
                        cluster,
                        month,
                        class,
                        count: n,
                        total: sum.value(),
                        mean: Some(mean),
                        lower: Some(lo),
                        upper: Some(hi),
                    }
                };
                rows.push(row);
            }
        }
    }
    Ok(MonthlySeries { rows, totals })
}
