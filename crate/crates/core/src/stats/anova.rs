//! One-way ANOVA and Tukey-Kramer pairwise comparisons.

use serde::{Deserialize, Serialize};

use super::dist::{f_sf, qtukey, t_two_sided_p, tukey_sf};
use super::{check_groups, PairRow, TestReport};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaTable {
    pub df_between: f64,
    pub df_within: f64,
    pub ss_between: f64,
    pub ss_within: f64,
    pub ss_total: f64,
    pub ms_between: f64,
    pub ms_within: f64,
    pub f: f64,
    pub p_value: f64,
}

impl AnovaTable {
    pub fn report(&self) -> TestReport {
        TestReport {
            test: "anova".into(),
            statistic: self.f,
            df: vec![self.df_between, self.df_within],
            p_value: self.p_value,
            pairwise: Vec::new(),
        }
    }
}

fn group_mean(g: &[f64]) -> f64 {
    g.iter().sum::<f64>() / g.len() as f64
}

/// Classic one-way ANOVA F test.
pub fn one_way_anova(groups: &[Vec<f64>]) -> Result<AnovaTable> {
    check_groups(groups, 2)?;
    let n: usize = groups.iter().map(Vec::len).sum();
    let k = groups.len();
    let grand = groups.iter().flatten().sum::<f64>() / n as f64;
    let mut ss_between = 0.0;
    let mut ss_within = 0.0;
    for g in groups {
        let m = group_mean(g);
        ss_between += g.len() as f64 * (m - grand) * (m - grand);
        ss_within += g.iter().map(|x| (x - m) * (x - m)).sum::<f64>();
    }
    let ss_total = groups
        .iter()
        .flatten()
        .map(|x| (x - grand) * (x - grand))
        .sum();
    let df_between = (k - 1) as f64;
    let df_within = (n - k) as f64;
    let ms_between = ss_between / df_between;
    let ms_within = ss_within / df_within;
    let (f, p_value) = if ms_within > 0.0 {
        let f = ms_between / ms_within;
        (f, f_sf(f, df_between, df_within))
    } else if ss_between > 0.0 {
        (f64::INFINITY, 0.0)
    } else {
        (0.0, 1.0)
    };
    Ok(AnovaTable {
        df_between,
        df_within,
        ss_between,
        ss_within,
        ss_total,
        ms_between,
        ms_within,
        f,
        p_value,
    })
}

/// Tukey-Kramer honest significant differences. Rows are ordered
/// `2-1, 3-1, …, 3-2, …` with estimate mean(second label) − mean(first).
/// `p_value` is the unadjusted pooled-variance t test; `adjusted_p` comes
/// from the studentized range. When `level` is given, simultaneous
/// intervals at that confidence are attached.
pub fn tukey_hsd(groups: &[Vec<f64>], level: Option<f64>) -> Result<TestReport> {
    let table = one_way_anova(groups)?;
    let k = groups.len();
    let df = table.df_within;
    let msw = table.ms_within;
    let means: Vec<f64> = groups.iter().map(|g| group_mean(g)).collect();
    let crit = level.map(|l| qtukey(l, k, df));
    let mut rows = Vec::new();
    for i in 0..k {
        for j in i + 1..k {
            let diff = means[j] - means[i];
            let inv = 1.0 / groups[i].len() as f64 + 1.0 / groups[j].len() as f64;
            let se = (0.5 * msw * inv).sqrt();
            let (q, p_raw, p_adj) = if se > 0.0 {
                let q = diff.abs() / se;
                let t = diff / (msw * inv).sqrt();
                let raw = t_two_sided_p(t, df);
                (q, raw, tukey_sf(q, k, df).max(raw))
            } else if diff != 0.0 {
                (f64::INFINITY, 0.0, 0.0)
            } else {
                (0.0, 1.0, 1.0)
            };
            rows.push(PairRow {
                label: format!("{}-{}", j + 1, i + 1),
                first: j,
                second: i,
                estimate: diff,
                statistic: q,
                p_value: p_raw,
                adjusted_p: p_adj,
                lower: crit.map(|c| diff - c * se),
                upper: crit.map(|c| diff + c * se),
            });
        }
    }
    Ok(TestReport {
        test: "tukey_hsd".into(),
        statistic: table.f,
        df: vec![k as f64, df],
        p_value: table.p_value,
        pairwise: rows,
    })
}
