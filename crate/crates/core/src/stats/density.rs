//! Histogram densities and the symmetric Kullback-Leibler divergence.

use crate::error::{Error, Result};

pub const DEFAULT_KL_EPSILON: f64 = 1e-10;

/// Nine half-point bins centred on 1, 1.5, …, 5 (edges 0.75 … 5.25).
pub fn rt_bin_edges() -> Vec<f64> {
    (0..10).map(|i| 0.75 + 0.5 * i as f64).collect()
}

fn check_edges(edges: &[f64]) -> Result<()> {
    if edges.len() < 2 {
        return Err(Error::invalid("need at least two bin edges"));
    }
    if edges.windows(2).any(|w| !(w[1] > w[0])) || edges.iter().any(|e| !e.is_finite()) {
        return Err(Error::invalid(
            "bin edges must be finite and strictly increasing",
        ));
    }
    Ok(())
}

/// Histogram density: bin counts scaled so that Σ density·width = 1.
/// Bins are half-open `[e_i, e_{i+1})` except the last, which is closed.
pub fn histogram_density(scores: &[f64], edges: &[f64]) -> Result<Vec<f64>> {
    check_edges(edges)?;
    if scores.is_empty() {
        return Err(Error::invalid("cannot estimate a density from no scores"));
    }
    let lo = edges[0];
    let hi = edges[edges.len() - 1];
    let bins = edges.len() - 1;
    let mut counts = vec![0usize; bins];
    for &s in scores {
        if !(s >= lo && s <= hi) {
            return Err(Error::OutOfRange { value: s, lo, hi });
        }
        // last edge ≤ s falls in that bin; s == hi goes to the last bin
        let b = edges
            .partition_point(|&e| e <= s)
            .saturating_sub(1)
            .min(bins - 1);
        counts[b] += 1;
    }
    let n = scores.len() as f64;
    Ok(counts
        .iter()
        .zip(edges.windows(2))
        .map(|(&c, w)| c as f64 / (n * (w[1] - w[0])))
        .collect())
}

/// Probability mass per bin from a density.
pub fn bin_masses(density: &[f64], edges: &[f64]) -> Result<Vec<f64>> {
    check_edges(edges)?;
    if density.len() + 1 != edges.len() {
        return Err(Error::LayoutMismatch(
            "density and edges disagree on bin count".into(),
        ));
    }
    Ok(density
        .iter()
        .zip(edges.windows(2))
        .map(|(d, w)| d * (w[1] - w[0]))
        .collect())
}

fn smooth(p: &[f64], eps: f64) -> Vec<f64> {
    let floored: Vec<f64> = p.iter().map(|&v| v.max(eps)).collect();
    let total: f64 = floored.iter().sum();
    floored.into_iter().map(|v| v / total).collect()
}

/// ½[KL(p‖q) + KL(q‖p)] over bins, after flooring every bin at `epsilon`
/// and renormalizing. Inputs are per-bin masses on a shared binning.
pub fn symmetric_kl(p: &[f64], q: &[f64], epsilon: f64) -> Result<f64> {
    if p.len() != q.len() || p.is_empty() {
        return Err(Error::LayoutMismatch(format!(
            "{} bins vs {} bins",
            p.len(),
            q.len()
        )));
    }
    if p.iter().chain(q).any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::invalid("bin masses must be finite and non-negative"));
    }
    if !(epsilon > 0.0) {
        return Err(Error::invalid("epsilon must be positive"));
    }
    let ps = smooth(p, epsilon);
    let qs = smooth(q, epsilon);
    let mut sum = 0.0;
    for (a, b) in ps.iter().zip(&qs) {
        // (a − b)·ln(a/b) combines both directed terms and is ≥ 0 per bin
        sum += (a - b) * (a / b).ln();
    }
    Ok(0.5 * sum)
}

/// k × k matrix of pairwise symmetric divergences between groups.
pub fn kl_pair_table(masses: &[Vec<f64>], epsilon: f64) -> Result<Vec<Vec<f64>>> {
    let k = masses.len();
    let mut out = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in i + 1..k {
            let v = symmetric_kl(&masses[i], &masses[j], epsilon)?;
            out[i][j] = v;
            out[j][i] = v;
        }
    }
    Ok(out)
}
