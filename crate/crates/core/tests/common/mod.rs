//! Independent oracles and instance builders shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rfmp::cluster::DistanceMode;
use rfmp::features::FeatureMatrix;

/// Random mixed matrix; `discrete` draws numeric values from a small grid
/// so ties are common.
pub fn random_matrix(
    rng: &mut ChaCha8Rng,
    n: usize,
    p: usize,
    q: usize,
    levels: usize,
    discrete: bool,
) -> FeatureMatrix {
    let numeric: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (0..p)
                .map(|_| {
                    if discrete {
                        rng.random_range(0..5) as f64
                    } else {
                        rng.random_range(-3.0..3.0)
                    }
                })
                .collect()
        })
        .collect();
    let cats: Vec<Vec<String>> = (0..n)
        .map(|_| {
            (0..q)
                .map(|_| format!("v{}", rng.random_range(0..levels)))
                .collect()
        })
        .collect();
    FeatureMatrix::from_rows(
        (0..n).map(|i| format!("r{i:04}")).collect(),
        (0..p).map(|j| format!("x{j}")).collect(),
        (0..q).map(|j| format!("g{j}")).collect(),
        numeric,
        cats,
    )
    .unwrap()
}

/// Row as plain values: numeric part and categories by name.
pub fn row_values(m: &FeatureMatrix, i: usize) -> (Vec<f64>, Vec<String>) {
    (
        (0..m.p()).map(|j| m.numeric_value(i, j)).collect(),
        (0..m.q()).map(|j| m.category(i, j).to_string()).collect(),
    )
}

/// Mixed distance written out directly from its definition.
pub fn oracle_distance(
    a: &(Vec<f64>, Vec<String>),
    b: &(Vec<f64>, Vec<String>),
    mode: DistanceMode,
) -> f64 {
    let num: f64 =
        a.0.iter()
            .zip(&b.0)
            .map(|(x, y)| match mode {
                DistanceMode::L1 => (x - y).abs(),
                DistanceMode::SquaredEuclidean => (x - y) * (x - y),
            })
            .sum();
    let cat = a.1.iter().zip(&b.1).filter(|(x, y)| x != y).count() as f64;
    num + cat
}

/// Mean/mode prototype of the listed rows; mode ties go to the
/// lexicographically smallest category.
pub fn oracle_prototype(m: &FeatureMatrix, members: &[usize]) -> (Vec<f64>, Vec<String>) {
    let n = members.len() as f64;
    let num = (0..m.p())
        .map(|j| members.iter().map(|&i| m.numeric_value(i, j)).sum::<f64>() / n)
        .collect();
    let cat = (0..m.q())
        .map(|j| {
            let mut counts: Vec<(String, usize)> = Vec::new();
            for &i in members {
                let c = m.category(i, j);
                match counts.iter_mut().find(|(s, _)| s == c) {
                    Some(e) => e.1 += 1,
                    None => counts.push((c.to_string(), 1)),
                }
            }
            counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            counts[0].0.clone()
        })
        .collect();
    (num, cat)
}

/// Silhouette by direct enumeration of all point pairs.
pub fn oracle_silhouette(m: &FeatureMatrix, labels: &[usize], k: usize, mode: DistanceMode) -> f64 {
    let n = m.n();
    let rows: Vec<_> = (0..n).map(|i| row_values(m, i)).collect();
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for j in 0..n {
            if i != j {
                sums[labels[j]] += oracle_distance(&rows[i], &rows[j], mode);
                counts[labels[j]] += 1;
            }
        }
        let own = labels[i];
        if counts[own] == 0 {
            continue; // singleton: S_i = 0
        }
        let a = sums[own] / counts[own] as f64;
        let b = (0..k)
            .filter(|&l| l != own && counts[l] > 0)
            .map(|l| sums[l] / counts[l] as f64)
            .fold(f64::INFINITY, f64::min);
        let s = if a.max(b) > 0.0 {
            (b - a) / a.max(b)
        } else {
            0.0
        };
        total += s;
    }
    total / n as f64
}

/// Davies-Bouldin index with prototypes computed by the oracle.
pub fn oracle_davies_bouldin(
    m: &FeatureMatrix,
    labels: &[usize],
    k: usize,
    mode: DistanceMode,
) -> f64 {
    let members: Vec<Vec<usize>> = (0..k)
        .map(|l| (0..m.n()).filter(|&i| labels[i] == l).collect())
        .collect();
    let protos: Vec<_> = members.iter().map(|mm| oracle_prototype(m, mm)).collect();
    let spread: Vec<f64> = (0..k)
        .map(|l| {
            members[l]
                .iter()
                .map(|&i| oracle_distance(&row_values(m, i), &protos[l], mode))
                .sum::<f64>()
                / members[l].len() as f64
        })
        .collect();
    let mut total = 0.0;
    for i in 0..k {
        let mut worst = f64::NEG_INFINITY;
        for j in 0..k {
            if i != j {
                worst = worst
                    .max((spread[i] + spread[j]) / oracle_distance(&protos[i], &protos[j], mode));
            }
        }
        total += worst;
    }
    total / k as f64
}

/// Midranks by counting: rank = #smaller + (#equal + 1) / 2.
pub fn oracle_ranks(values: &[f64]) -> Vec<f64> {
    values
        .iter()
        .map(|&v| {
            let less = values.iter().filter(|&&w| w < v).count() as f64;
            let eq = values.iter().filter(|&&w| w == v).count() as f64;
            less + (eq + 1.0) / 2.0
        })
        .collect()
}

/// Σ(t³ − t) over tie groups.
pub fn oracle_ties(values: &[f64]) -> f64 {
    let mut seen: Vec<f64> = Vec::new();
    let mut total = 0.0;
    for &v in values {
        if !seen.contains(&v) {
            seen.push(v);
            let t = values.iter().filter(|&&w| w == v).count() as f64;
            total += t * t * t - t;
        }
    }
    total
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}
