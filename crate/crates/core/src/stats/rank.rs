//! Rank-based comparisons: Kruskal-Wallis and Dunn's test.

use super::dist::{chi2_sf, norm_sf};
use super::{adjust_p, check_groups, Adjustment, PairRow, TestReport};
use crate::error::{Error, Result};

/// Midranks (1-based) of `values`; tied values share the average rank.
/// Also returns Σ(t³ − t) over tie groups.
pub fn midranks(values: &[f64]) -> (Vec<f64>, f64) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + 1 + j) as f64 / 2.0;
        for &o in &order[i..j] {
            ranks[o] = avg;
        }
        let t = (j - i) as f64;
        ties += t * t * t - t;
        i = j;
    }
    (ranks, ties)
}

struct Ranked {
    n: f64,
    sizes: Vec<f64>,
    mean_ranks: Vec<f64>,
    ties: f64,
}

fn rank_groups(groups: &[Vec<f64>]) -> Ranked {
    let pooled: Vec<f64> = groups.iter().flatten().copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let mut at = 0;
    let mut mean_ranks = Vec::with_capacity(groups.len());
    for g in groups {
        let s: f64 = ranks[at..at + g.len()].iter().sum();
        mean_ranks.push(s / g.len() as f64);
        at += g.len();
    }
    Ranked {
        n: pooled.len() as f64,
        sizes: groups.iter().map(|g| g.len() as f64).collect(),
        mean_ranks,
        ties,
    }
}

/// Kruskal-Wallis H with tie correction; p from χ²(k − 1).
/// The uncorrected H is returned as the second element.
pub fn kruskal_wallis(groups: &[Vec<f64>]) -> Result<(TestReport, f64)> {
    check_groups(groups, 1)?;
    let r = rank_groups(groups);
    if r.n < 3.0 {
        return Err(Error::invalid("at least three observations are required"));
    }
    let n = r.n;
    let sum: f64 = r
        .sizes
        .iter()
        .zip(&r.mean_ranks)
        .map(|(s, m)| s * m * m)
        .sum();
    let h_raw = 12.0 / (n * (n + 1.0)) * sum - 3.0 * (n + 1.0);
    let h_raw = h_raw.max(0.0);
    let correction = 1.0 - r.ties / (n * n * n - n);
    let df = (groups.len() - 1) as f64;
    let (h, p) = if correction <= 0.0 {
        (0.0, 1.0)
    } else {
        let h = h_raw / correction;
        (h, chi2_sf(h, df))
    };
    Ok((
        TestReport {
            test: "kruskal_wallis".into(),
            statistic: h,
            df: vec![df],
            p_value: p,
            pairwise: Vec::new(),
        },
        h_raw,
    ))
}

/// Dunn's pairwise test on mean ranks with the tie-corrected standard
/// error. Rows are ordered `1-2, 1-3, …, 2-3, …` with estimate
/// mean rank(first) − mean rank(second).
pub fn dunn_test(groups: &[Vec<f64>], adjustment: Adjustment) -> Result<TestReport> {
    let (kw, _) = kruskal_wallis(groups)?;
    let r = rank_groups(groups);
    let n = r.n;
    let var = n * (n + 1.0) / 12.0 - r.ties / (12.0 * (n - 1.0));
    let k = groups.len();
    let mut rows = Vec::new();
    for i in 0..k {
        for j in i + 1..k {
            let diff = r.mean_ranks[i] - r.mean_ranks[j];
            let se = (var * (1.0 / r.sizes[i] + 1.0 / r.sizes[j])).sqrt();
            let z = if se > 0.0 { diff / se } else { 0.0 };
            let p = if se > 0.0 {
                (2.0 * norm_sf(z.abs())).min(1.0)
            } else {
                1.0
            };
            rows.push(PairRow {
                label: format!("{}-{}", i + 1, j + 1),
                first: i,
                second: j,
                estimate: diff,
                statistic: z,
                p_value: p,
                adjusted_p: p,
                lower: None,
                upper: None,
            });
        }
    }
    let raw: Vec<f64> = rows.iter().map(|r| r.p_value).collect();
    for (row, adj) in rows.iter_mut().zip(adjust_p(&raw, adjustment)) {
        row.adjusted_p = adj.max(row.p_value);
    }
    Ok(TestReport {
        test: format!("dunn_{adjustment}"),
        statistic: kw.statistic,
        df: kw.df,
        p_value: kw.p_value,
        pairwise: rows,
    })
}
