//! Cluster validity indices and the sweep over k.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{distance_unchecked, fit, Centroid, ClusterModel, DistanceMode, FitOptions};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::numeric::derive_seed;

/// Point counts up to which pairwise distances are materialized.
pub const DEFAULT_MATERIALIZE_CUTOFF: usize = 20_000;

/// Point-to-point distances, stored (condensed upper triangle) or computed
/// on demand.
pub enum PairDistances<'a> {
    Stored {
        n: usize,
        condensed: Vec<f64>,
    },
    Streamed {
        matrix: &'a FeatureMatrix,
        mode: DistanceMode,
    },
}

impl<'a> PairDistances<'a> {
    pub fn new(matrix: &'a FeatureMatrix, mode: DistanceMode, cutoff: usize) -> Self {
        let n = matrix.n();
        if n > cutoff {
            return PairDistances::Streamed { matrix, mode };
        }
        let condensed: Vec<f64> = (0..n)
            .into_par_iter()
            .flat_map_iter(|i| {
                let xi = matrix.row(i);
                (i + 1..n).map(move |j| distance_unchecked(xi, matrix.row(j), mode))
            })
            .collect();
        PairDistances::Stored { n, condensed }
    }

    pub fn n(&self) -> usize {
        match self {
            PairDistances::Stored { n, .. } => *n,
            PairDistances::Streamed { matrix, .. } => matrix.n(),
        }
    }

    /// Visit d(i, j) for every j > i.
    fn for_row_above(&self, i: usize, mut f: impl FnMut(usize, f64)) {
        match self {
            PairDistances::Stored { n, condensed } => {
                let start = i * (2 * n - i - 1) / 2;
                for (off, &d) in condensed[start..start + (n - i - 1)].iter().enumerate() {
                    f(i + 1 + off, d);
                }
            }
            PairDistances::Streamed { matrix, mode } => {
                let xi = matrix.row(i);
                for j in i + 1..matrix.n() {
                    f(j, distance_unchecked(xi, matrix.row(j), *mode));
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Silhouette {
    pub per_point: Vec<f64>,
    pub mean: f64,
}

/// Silhouette coefficients from precomputed distances. Members of
/// singleton clusters get 0, as do points with a = b = 0.
pub fn silhouette_from(dist: &PairDistances<'_>, labels: &[usize], k: usize) -> Result<Silhouette> {
    let n = dist.n();
    if labels.len() != n {
        return Err(Error::LayoutMismatch(format!(
            "{} labels for {n} points",
            labels.len()
        )));
    }
    if k < 2 {
        return Err(Error::invalid("silhouette needs k >= 2"));
    }
    if let Some(l) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::invalid(format!(
            "label {l} out of range for k = {k}"
        )));
    }
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(Error::invalid(
            "silhouette needs at least two non-empty clusters",
        ));
    }
    // sums[i * k + l] = Σ_{j in cluster l} d(i, j)
    let mut sums = vec![0.0; n * k];
    for i in 0..n {
        let li = labels[i];
        dist.for_row_above(i, |j, d| {
            sums[i * k + labels[j]] += d;
            sums[j * k + li] += d;
        });
    }
    let per_point: Vec<f64> = (0..n)
        .map(|i| {
            let li = labels[i];
            if sizes[li] <= 1 {
                return 0.0;
            }
            let a = sums[i * k + li] / (sizes[li] - 1) as f64;
            let b = (0..k)
                .filter(|&l| l != li && sizes[l] > 0)
                .map(|l| sums[i * k + l] / sizes[l] as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m > 0.0 {
                (b - a) / m
            } else {
                0.0
            }
        })
        .collect();
    let mean = per_point.iter().sum::<f64>() / n as f64;
    Ok(Silhouette { per_point, mean })
}

/// Silhouette coefficients using the mixed distance between points.
pub fn silhouette(
    matrix: &FeatureMatrix,
    labels: &[usize],
    k: usize,
    mode: DistanceMode,
) -> Result<Silhouette> {
    silhouette_from(
        &PairDistances::new(matrix, mode, DEFAULT_MATERIALIZE_CUTOFF),
        labels,
        k,
    )
}

/// Davies-Bouldin score using point-to-prototype spreads.
pub fn davies_bouldin(
    matrix: &FeatureMatrix,
    labels: &[usize],
    centroids: &[Centroid],
    mode: DistanceMode,
) -> Result<f64> {
    let k = centroids.len();
    if k < 2 {
        return Err(Error::invalid("Davies-Bouldin needs k >= 2"));
    }
    if labels.len() != matrix.n() {
        return Err(Error::LayoutMismatch(
            "labels do not match matrix rows".into(),
        ));
    }
    let mut spread = vec![0.0; k];
    let mut sizes = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        if l >= k {
            return Err(Error::invalid(format!(
                "label {l} out of range for k = {k}"
            )));
        }
        spread[l] += distance_unchecked(matrix.row(i), centroids[l].as_ref(), mode);
        sizes[l] += 1;
    }
    if let Some(l) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::Degenerate(format!("cluster {} is empty", l + 1)));
    }
    for l in 0..k {
        spread[l] /= sizes[l] as f64;
    }
    let mut total = 0.0;
    for i in 0..k {
        let mut worst = f64::NEG_INFINITY;
        for j in 0..k {
            if i == j {
                continue;
            }
            let d = distance_unchecked(centroids[i].as_ref(), centroids[j].as_ref(), mode);
            if d == 0.0 {
                return Err(Error::Degenerate(format!(
                    "prototypes {} and {} coincide",
                    i + 1,
                    j + 1
                )));
            }
            worst = worst.max((spread[i] + spread[j]) / d);
        }
        total += worst;
    }
    Ok(total / k as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub k: usize,
    pub mean_silhouette: f64,
    pub db_score: f64,
    pub cost: f64,
    #[serde(skip)]
    pub per_point_silhouette: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    /// Sorted by k.
    pub reports: Vec<ValidityReport>,
    /// argmax of mean Silhouette (the choice).
    pub chosen_k: usize,
    /// argmin of Davies-Bouldin, reported alongside.
    pub db_k: usize,
    pub models: Vec<ClusterModel>,
}

impl SweepResult {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut cw = csv::Writer::from_writer(w);
        cw.write_record(["k", "mean_silhouette", "db_score", "cost"])?;
        for r in &self.reports {
            cw.write_record([
                r.k.to_string(),
                format!("{}", r.mean_silhouette),
                format!("{}", r.db_score),
                format!("{}", r.cost),
            ])?;
        }
        cw.flush()?;
        Ok(())
    }
}

/// Fit every k in `k_min..=k_max` and score it. Each k uses its own seed
/// derived from `opts.seed`; pairwise distances are computed once.
pub fn sweep_k(
    matrix: &FeatureMatrix,
    k_min: usize,
    k_max: usize,
    opts: &FitOptions,
    cutoff: usize,
) -> Result<SweepResult> {
    if k_min < 2 || k_min > k_max || k_max > matrix.n() {
        return Err(Error::invalid(format!(
            "need 2 <= k_min <= k_max <= N, got {k_min}..{k_max} with N = {}",
            matrix.n()
        )));
    }
    let dist = PairDistances::new(matrix, opts.mode, cutoff);
    let mut reports = Vec::new();
    let mut models = Vec::new();
    for k in k_min..=k_max {
        let o = FitOptions {
            seed: derive_seed(opts.seed, k as u64),
            ..*opts
        };
        let model = fit(matrix, k, &o)?;
        let s = silhouette_from(&dist, &model.labels, k)?;
        let db = davies_bouldin(matrix, &model.labels, &model.centroids, opts.mode)?;
        reports.push(ValidityReport {
            k,
            mean_silhouette: s.mean,
            db_score: db,
            cost: model.cost,
            per_point_silhouette: s.per_point,
        });
        models.push(model);
    }
    let chosen_k = reports
        .iter()
        .fold(None::<&ValidityReport>, |best, r| match best {
            Some(b) if b.mean_silhouette >= r.mean_silhouette => Some(b),
            _ => Some(r),
        })
        .map(|r| r.k)
        .expect("non-empty sweep");
    let db_k = reports
        .iter()
        .fold(None::<&ValidityReport>, |best, r| match best {
            Some(b) if b.db_score <= r.db_score => Some(b),
            _ => Some(r),
        })
        .map(|r| r.k)
        .expect("non-empty sweep");
    Ok(SweepResult {
        reports,
        chosen_k,
        db_k,
        models,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(numeric: Vec<Vec<f64>>) -> FeatureMatrix {
        let n = numeric.len();
        let p = numeric[0].len();
        FeatureMatrix::from_rows(
            (0..n).map(|i| format!("{i}")).collect(),
            (0..p).map(|j| format!("x{j}")).collect(),
            vec![],
            numeric,
            vec![vec![]; n],
        )
        .unwrap()
    }

    #[test]
    fn two_tight_pairs() {
        let m = matrix(vec![vec![0.0], vec![0.1], vec![10.0], vec![10.1]]);
        let s = silhouette(&m, &[0, 0, 1, 1], 2, DistanceMode::L1).unwrap();
        assert!(s.per_point.iter().all(|&v| v > 0.9));
        assert!(silhouette(&m, &[0, 0, 0, 0], 1, DistanceMode::L1).is_err());
    }

    #[test]
    fn identical_points_give_zero() {
        let m = matrix(vec![vec![1.0]; 4]);
        let s = silhouette(&m, &[0, 0, 1, 1], 2, DistanceMode::L1).unwrap();
        assert_eq!(s.per_point, vec![0.0; 4]);
    }

    #[test]
    fn streamed_equals_stored() {
        let m = matrix(
            (0..30)
                .map(|i| vec![(i * 13 % 7) as f64, (i % 5) as f64])
                .collect(),
        );
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let a =
            silhouette_from(&PairDistances::new(&m, DistanceMode::L1, 1000), &labels, 3).unwrap();
        let b = silhouette_from(&PairDistances::new(&m, DistanceMode::L1, 10), &labels, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn db_singletons_and_scaling() {
        let m = matrix(vec![vec![0.0], vec![3.0]]);
        let cs: Vec<Centroid> = (0..2).map(|i| Centroid::from_row(m.row(i))).collect();
        assert_eq!(
            davies_bouldin(&m, &[0, 1], &cs, DistanceMode::L1).unwrap(),
            0.0
        );

        let base = matrix(vec![vec![-1.0], vec![1.0], vec![9.0], vec![11.0]]);
        let c1 = vec![
            Centroid {
                numeric: vec![0.0],
                categorical: vec![],
            },
            Centroid {
                numeric: vec![10.0],
                categorical: vec![],
            },
        ];
        let far = matrix(vec![vec![-1.0], vec![1.0], vec![19.0], vec![21.0]]);
        let c2 = vec![
            Centroid {
                numeric: vec![0.0],
                categorical: vec![],
            },
            Centroid {
                numeric: vec![20.0],
                categorical: vec![],
            },
        ];
        let d1 = davies_bouldin(&base, &[0, 0, 1, 1], &c1, DistanceMode::L1).unwrap();
        let d2 = davies_bouldin(&far, &[0, 0, 1, 1], &c2, DistanceMode::L1).unwrap();
        assert!((d1 / d2 - 2.0).abs() < 1e-12);

        let same = vec![c1[0].clone(), c1[0].clone()];
        assert!(matches!(
            davies_bouldin(&base, &[0, 0, 1, 1], &same, DistanceMode::L1),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn sweep_single_k() {
        let m = matrix(
            (0..12)
                .map(|i| vec![(i / 4) as f64 * 10.0 + (i % 4) as f64 * 0.1])
                .collect(),
        );
        let r = sweep_k(
            &m,
            3,
            3,
            &FitOptions {
                restarts: 5,
                ..FitOptions::default()
            },
            100,
        )
        .unwrap();
        assert_eq!(r.chosen_k, 3);
        assert_eq!(r.reports.len(), 1);
    }
}
