//! Report helpers: stratified client samples, attribute scaling for the
//! heat map, average-linkage row ordering and a static scatter rendering.

use std::io::Write;

use rand::seq::SliceRandom;

use crate::cluster::{distance_unchecked, DistanceMode};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::numeric::rng_from_seed;

/// Per-stratum counts proportional to `sizes`, rounded by largest
/// remainder. Ties in the remainder go to the lower stratum index.
pub fn proportional_counts(sizes: &[usize], total_n: usize) -> Result<Vec<usize>> {
    let n: usize = sizes.iter().sum();
    if total_n > n {
        return Err(Error::invalid(format!(
            "sample of {total_n} requested from {n} items"
        )));
    }
    if n == 0 {
        return Ok(vec![0; sizes.len()]);
    }
    // exact integer arithmetic: quota_l = sizes_l · total_n / n
    let mut counts: Vec<usize> = sizes.iter().map(|&s| s * total_n / n).collect();
    let mut rema: Vec<(usize, usize)> = sizes
        .iter()
        .enumerate()
        .map(|(l, &s)| (s * total_n % n, l))
        .collect();
    rema.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let short = total_n - counts.iter().sum::<usize>();
    for &(_, l) in rema.iter().take(short) {
        counts[l] += 1;
    }
    Ok(counts)
}

/// Stratified sample without replacement. Returns row indices grouped by
/// cluster, ascending within each cluster.
pub fn stratified_sample(
    labels: &[usize],
    k: usize,
    total_n: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    let mut strata: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        if l >= k {
            return Err(Error::invalid(format!(
                "label {l} out of range for k = {k}"
            )));
        }
        strata[l].push(i);
    }
    let sizes: Vec<usize> = strata.iter().map(Vec::len).collect();
    let counts = proportional_counts(&sizes, total_n)?;
    let mut rng = rng_from_seed(seed);
    let mut out = Vec::with_capacity(total_n);
    for (mut members, c) in strata.into_iter().zip(counts) {
        let (chosen, _) = members.partial_shuffle(&mut rng, c);
        let mut chosen = chosen.to_vec();
        chosen.sort_unstable();
        out.extend(chosen);
    }
    Ok(out)
}

/// Min-max scaling of one column; a constant column maps to zeros.
pub fn scale_unit_interval(column: &[f64]) -> Vec<f64> {
    let lo = column.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = column.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if !(range > 0.0) {
        return vec![0.0; column.len()];
    }
    column
        .iter()
        .map(|&x| ((x - lo) / range).clamp(0.0, 1.0))
        .collect()
}

/// Leaf order of an average-linkage (UPGMA) dendrogram over the rows of
/// `matrix`. The closest pair merges first, ties broken by lowest indices;
/// the earlier-formed cluster is placed on the left.
pub fn average_linkage_order(matrix: &FeatureMatrix, mode: DistanceMode) -> Vec<usize> {
    let n = matrix.n();
    if n == 0 {
        return Vec::new();
    }
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = distance_unchecked(matrix.row(i), matrix.row(j), mode);
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    // slot i holds a live cluster: (leaves, size)
    let mut clusters: Vec<Option<(Vec<usize>, usize)>> =
        (0..n).map(|i| Some((vec![i], 1))).collect();
    for _ in 1..n {
        let mut best = (f64::INFINITY, 0, 0);
        for i in 0..n {
            if clusters[i].is_none() {
                continue;
            }
            for j in i + 1..n {
                if clusters[j].is_some() && d[i * n + j] < best.0 {
                    best = (d[i * n + j], i, j);
                }
            }
        }
        let (_, a, b) = best;
        let (mut la, sa) = clusters[a].take().expect("live cluster");
        let (lb, sb) = clusters[b].take().expect("live cluster");
        for m in 0..n {
            if m != a && m != b && clusters[m].is_some() {
                let v = (sa as f64 * d[a * n + m] + sb as f64 * d[b * n + m]) / (sa + sb) as f64;
                d[a * n + m] = v;
                d[m * n + a] = v;
            }
        }
        la.extend(lb);
        clusters[a] = Some((la, sa + sb));
    }
    clusters
        .into_iter()
        .flatten()
        .next()
        .map(|(l, _)| l)
        .unwrap_or_default()
}

/// Heat-map table: the given rows (in order) with every numeric attribute
/// scaled to [0, 1] over those rows, in original units before scaling.
pub fn write_heatmap<W: Write>(
    matrix: &FeatureMatrix,
    rows: &[usize],
    labels: &[usize],
    w: W,
) -> Result<()> {
    if labels.len() != matrix.n() {
        return Err(Error::LayoutMismatch(
            "labels do not match matrix rows".into(),
        ));
    }
    let scaled: Vec<Vec<f64>> = (0..matrix.p())
        .map(|j| {
            scale_unit_interval(
                &rows
                    .iter()
                    .map(|&i| matrix.raw_numeric(i, j))
                    .collect::<Vec<_>>(),
            )
        })
        .collect();
    let mut cw = csv::Writer::from_writer(w);
    let mut header = vec!["client_id".to_string(), "cluster".to_string()];
    header.extend(matrix.numeric_names.iter().cloned());
    cw.write_record(&header)?;
    for (r, &i) in rows.iter().enumerate() {
        let mut rec = vec![matrix.client_ids[i].clone(), (labels[i] + 1).to_string()];
        rec.extend(scaled.iter().map(|col| format!("{:.6}", col[r])));
        cw.write_record(&rec)?;
    }
    cw.flush()?;
    Ok(())
}

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

/// Static scatter plot of 2-D coordinates coloured by cluster.
pub fn write_scatter_svg<W: Write>(coords: &[[f64; 2]], labels: &[usize], mut w: W) -> Result<()> {
    if coords.len() != labels.len() {
        return Err(Error::LayoutMismatch(
            "labels do not match coordinates".into(),
        ));
    }
    let (size, pad) = (600.0, 20.0);
    let xs: Vec<f64> = scale_unit_interval(&coords.iter().map(|c| c[0]).collect::<Vec<_>>());
    let ys: Vec<f64> = scale_unit_interval(&coords.iter().map(|c| c[1]).collect::<Vec<_>>());
    writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{s}" height="{s}" viewBox="0 0 {s} {s}">"#,
        s = size + 2.0 * pad
    )?;
    writeln!(w, r#"<rect width="100%" height="100%" fill="white"/>"#)?;
    for i in 0..coords.len() {
        let cx = pad + xs[i] * size;
        let cy = pad + (1.0 - ys[i]) * size;
        let colour = PALETTE[labels[i] % PALETTE.len()];
        writeln!(
            w,
            r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="2" fill="{colour}" fill-opacity="0.7"/>"#
        )?;
    }
    writeln!(w, "</svg>")?;
    Ok(())
}
