//! Comparison of per-cluster score distributions.
//!
//! Parametric (one-way ANOVA, Tukey-Kramer), rank-based (Kruskal-Wallis,
//! Dunn) and density-based (symmetric KL on histograms) comparisons, plus
//! percentile bootstrap intervals and monthly per-cluster trade series.
//! All special functions are implemented here.

pub mod anova;
pub mod bootstrap;
pub mod density;
pub mod dist;
pub mod rank;
pub mod special;

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use anova::{one_way_anova, tukey_hsd, AnovaTable};
pub use bootstrap::{bootstrap_ci, monthly_cluster_series, MonthlySeries, SeriesRow};
pub use density::{
    bin_masses, histogram_density, kl_pair_table, rt_bin_edges, symmetric_kl, DEFAULT_KL_EPSILON,
};
pub use rank::{dunn_test, kruskal_wallis, midranks};

/// One pairwise comparison row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRow {
    /// Row label such as `2-1`, 1-based.
    pub label: String,
    pub first: usize,
    pub second: usize,
    /// Mean difference (Tukey) or mean-rank difference (Dunn).
    pub estimate: f64,
    pub statistic: f64,
    pub p_value: f64,
    pub adjusted_p: f64,
    /// Simultaneous interval for the difference, when available.
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

/// Result of an omnibus test, optionally with pairwise rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub test: String,
    pub statistic: f64,
    pub df: Vec<f64>,
    pub p_value: f64,
    pub pairwise: Vec<PairRow>,
}

impl TestReport {
    pub fn write_pairs<W: Write>(&self, w: W) -> Result<()> {
        let mut cw = csv::Writer::from_writer(w);
        cw.write_record([
            "pair",
            "estimate",
            "statistic",
            "lower",
            "upper",
            "p_value",
            "adjusted_p",
        ])?;
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x}"));
        for r in &self.pairwise {
            cw.write_record([
                r.label.clone(),
                format!("{}", r.estimate),
                format!("{}", r.statistic),
                opt(r.lower),
                opt(r.upper),
                format!("{}", r.p_value),
                format!("{}", r.adjusted_p),
            ])?;
        }
        cw.flush()?;
        Ok(())
    }
}

/// Multiple-comparison adjustment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Adjustment {
    #[default]
    Holm,
    Bonferroni,
    None,
}

impl fmt::Display for Adjustment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Adjustment::Holm => "holm",
            Adjustment::Bonferroni => "bonferroni",
            Adjustment::None => "none",
        })
    }
}

impl FromStr for Adjustment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "holm" => Ok(Adjustment::Holm),
            "bonferroni" => Ok(Adjustment::Bonferroni),
            "none" => Ok(Adjustment::None),
            other => Err(Error::invalid(format!("unknown adjustment `{other}`"))),
        }
    }
}

/// Adjust a family of p-values.
pub fn adjust_p(p: &[f64], method: Adjustment) -> Vec<f64> {
    let m = p.len() as f64;
    match method {
        Adjustment::None => p.to_vec(),
        Adjustment::Bonferroni => p.iter().map(|v| (v * m).min(1.0)).collect(),
        Adjustment::Holm => {
            let mut order: Vec<usize> = (0..p.len()).collect();
            order.sort_by(|&a, &b| p[a].total_cmp(&p[b]).then(a.cmp(&b)));
            let mut out = vec![0.0; p.len()];
            let mut running: f64 = 0.0;
            for (rank, &i) in order.iter().enumerate() {
                let v = ((m - rank as f64) * p[i]).min(1.0);
                running = running.max(v);
                out[i] = running;
            }
            out
        }
    }
}

pub(crate) fn check_groups(groups: &[Vec<f64>], min_size: usize) -> Result<()> {
    if groups.len() < 2 {
        return Err(Error::invalid("at least two groups are required"));
    }
    for (i, g) in groups.iter().enumerate() {
        if g.len() < min_size {
            return Err(Error::invalid(format!(
                "group {} has {} observations (need {min_size})",
                i + 1,
                g.len()
            )));
        }
        if let Some(v) = g.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite score {v} in group {}",
                i + 1
            )));
        }
    }
    Ok(())
}
