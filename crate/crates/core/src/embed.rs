//! Exact t-SNE over the mixed distance.
//!
//! Affinities use a Gaussian kernel on per-row normalized distances with a
//! bandwidth chosen by bisection to hit the target perplexity. The map is
//! optimized by gradient descent with momentum, per-coordinate gains and an
//! early exaggeration phase.

use std::io::Write;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cluster::{distance_unchecked, DistanceMode};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::numeric::rng_from_seed;

pub const PERPLEXITY_TOL: f64 = 1e-4;
pub const MAX_BISECTION_STEPS: usize = 200;

/// Full N × N distance matrix (row-major) for the embedding input. In
/// squared mode the square root is taken so the Gaussian kernel acts on a
/// distance rather than a squared distance.
pub fn distance_matrix(matrix: &FeatureMatrix, mode: DistanceMode) -> Vec<f64> {
    let n = matrix.n();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        let xi = matrix.row(i);
        for j in i + 1..n {
            let mut v = distance_unchecked(xi, matrix.row(j), mode);
            if mode == DistanceMode::SquaredEuclidean {
                v = v.sqrt();
            }
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

/// Conditional probabilities p_{j|i} for one row and their perplexity.
fn row_probs(d2: &[f64], i: usize, beta: f64, out: &mut [f64]) -> f64 {
    let n = d2.len();
    let dmin = (0..n)
        .filter(|&j| j != i)
        .map(|j| d2[j])
        .fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    for j in 0..n {
        out[j] = if j == i {
            0.0
        } else {
            (-beta * (d2[j] - dmin)).exp()
        };
        sum += out[j];
    }
    let mut h = 0.0;
    for j in 0..n {
        if j != i {
            out[j] /= sum;
            if out[j] > 0.0 {
                h -= out[j] * out[j].ln();
            }
        }
    }
    h.exp()
}

/// Achieved perplexity 2^H (H in bits) of a conditional distribution.
pub fn row_perplexity(p: &[f64]) -> f64 {
    let h: f64 = p.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.log2()).sum();
    h.exp2()
}

/// Per-row conditional affinities (N × N, rows sum to 1) with each row's
/// bandwidth tuned so its perplexity is within [`PERPLEXITY_TOL`] of the
/// target.
pub fn conditional_rows(distances: &[f64], n: usize, perplexity: f64) -> Result<Vec<f64>> {
    if distances.len() != n * n {
        return Err(Error::LayoutMismatch("distance matrix is not N × N".into()));
    }
    if n < 2 {
        return Err(Error::invalid("need at least two points"));
    }
    if !(perplexity > 1.0 && perplexity <= (n - 1) as f64) {
        return Err(Error::invalid(format!(
            "perplexity {perplexity} must lie in (1, N − 1] with N = {n}"
        )));
    }
    let mut cond = vec![0.0; n * n];
    let mut d2 = vec![0.0; n];
    for i in 0..n {
        let row = &distances[i * n..(i + 1) * n];
        let max = (0..n)
            .filter(|&j| j != i)
            .map(|j| row[j])
            .fold(0.0, f64::max);
        let min = (0..n)
            .filter(|&j| j != i)
            .map(|j| row[j])
            .fold(f64::INFINITY, f64::min);
        let out = &mut cond[i * n..(i + 1) * n];
        if max == min {
            // all neighbours equally far: uniform row
            for (j, o) in out.iter_mut().enumerate() {
                *o = if j == i { 0.0 } else { 1.0 / (n - 1) as f64 };
            }
            continue;
        }
        for j in 0..n {
            let v = row[j] / max;
            d2[j] = v * v;
        }
        let (mut lo, mut hi) = (0.0, f64::INFINITY);
        let mut beta = 1.0;
        let mut ok = false;
        let mut achieved = 0.0;
        for _ in 0..MAX_BISECTION_STEPS {
            achieved = row_probs(&d2, i, beta, out);
            if (achieved - perplexity).abs() <= PERPLEXITY_TOL * 0.5 {
                ok = true;
                break;
            }
            if achieved > perplexity {
                lo = beta;
                beta = if hi.is_finite() {
                    0.5 * (lo + hi)
                } else {
                    beta * 2.0
                };
            } else {
                hi = beta;
                beta = 0.5 * (lo + hi);
            }
        }
        if !ok {
            return Err(Error::PerplexitySearch {
                row: i,
                reason: format!(
                    "reached {achieved} for target {perplexity} after {MAX_BISECTION_STEPS} steps"
                ),
            });
        }
    }
    Ok(cond)
}

/// Symmetric joint affinities p_ij = (p_{j|i} + p_{i|j}) / 2N.
pub fn conditional_affinities(distances: &[f64], n: usize, perplexity: f64) -> Result<Vec<f64>> {
    let cond = conditional_rows(distances, n, perplexity)?;
    let mut p = vec![0.0; n * n];
    let denom = 2.0 * n as f64;
    for i in 0..n {
        for j in i + 1..n {
            let v = (cond[i * n + j] + cond[j * n + i]) / denom;
            p[i * n + j] = v;
            p[j * n + i] = v;
        }
    }
    Ok(p)
}

/// Low-dimensional Student-t affinities q_ij (N × N).
pub fn joint_q(coords: &[[f64; 2]]) -> Vec<f64> {
    let n = coords.len();
    let mut q = vec![0.0; n * n];
    let mut z = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let dx = coords[i][0] - coords[j][0];
            let dy = coords[i][1] - coords[j][1];
            let v = 1.0 / (1.0 + dx * dx + dy * dy);
            q[i * n + j] = v;
            q[j * n + i] = v;
            z += 2.0 * v;
        }
    }
    for v in &mut q {
        *v /= z;
    }
    q
}

/// KL(P‖Q) for a configuration.
pub fn kl_divergence(p: &[f64], coords: &[[f64; 2]]) -> f64 {
    let q = joint_q(coords);
    p.iter()
        .zip(&q)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| a * (a / b.max(f64::MIN_POSITIVE)).ln())
        .sum::<f64>()
        .max(0.0)
}

/// Gradient of KL(exaggeration·P ‖ Q) into `grad`; returns nothing else.
fn gradient(
    p: &[f64],
    coords: &[[f64; 2]],
    exaggeration: f64,
    num: &mut [f64],
    grad: &mut [[f64; 2]],
) {
    let n = coords.len();
    let mut z = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let dx = coords[i][0] - coords[j][0];
            let dy = coords[i][1] - coords[j][1];
            let v = 1.0 / (1.0 + dx * dx + dy * dy);
            num[i * n + j] = v;
            z += 2.0 * v;
        }
    }
    for g in grad.iter_mut() {
        *g = [0.0, 0.0];
    }
    for i in 0..n {
        for j in i + 1..n {
            let v = num[i * n + j];
            let m = 4.0 * (exaggeration * p[i * n + j] - v / z) * v;
            let dx = coords[i][0] - coords[j][0];
            let dy = coords[i][1] - coords[j][1];
            grad[i][0] += m * dx;
            grad[i][1] += m * dy;
            grad[j][0] -= m * dx;
            grad[j][1] -= m * dy;
        }
    }
}

/// Analytic gradient of KL(P‖Q).
pub fn kl_gradient(p: &[f64], coords: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let n = coords.len();
    let mut num = vec![0.0; n * n];
    let mut grad = vec![[0.0; 2]; n];
    gradient(p, coords, 1.0, &mut num, &mut grad);
    grad
}

/// Maximum relative error between the analytic gradient and central
/// differences with step 1e-5. Components whose magnitude is below 1e-6 of
/// the largest gradient component are compared on that floor instead.
pub fn gradient_check(p: &[f64], coords: &[[f64; 2]]) -> f64 {
    const H: f64 = 1e-5;
    let analytic = kl_gradient(p, coords);
    let scale = analytic
        .iter()
        .flat_map(|g| g.iter())
        .fold(0.0f64, |a, &b| a.max(b.abs()));
    let floor = (scale * 1e-6).max(f64::MIN_POSITIVE);
    let mut worst: f64 = 0.0;
    let mut y = coords.to_vec();
    for i in 0..coords.len() {
        for d in 0..2 {
            let orig = y[i][d];
            y[i][d] = orig + H;
            let up = kl_divergence(p, &y);
            y[i][d] = orig - H;
            let down = kl_divergence(p, &y);
            y[i][d] = orig;
            let fd = (up - down) / (2.0 * H);
            let a = analytic[i][d];
            worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(floor));
        }
    }
    worst
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TsneOptions {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    /// Record KL every this many iterations (and at the last one).
    pub trace_every: usize,
}

impl Default for TsneOptions {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            seed: 0,
            exaggeration: 12.0,
            exaggeration_iters: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            trace_every: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMap {
    pub coords: Vec<[f64; 2]>,
    pub perplexity: f64,
    pub iterations: usize,
    pub final_kl: f64,
    pub seed: u64,
    /// (iteration, KL(P‖Q)) pairs; KL is against the unexaggerated P.
    pub kl_trace: Vec<(usize, f64)>,
}

impl EmbeddingMap {
    pub fn write_csv<W: Write>(
        &self,
        ids: &[String],
        labels: Option<&[usize]>,
        w: W,
    ) -> Result<()> {
        if ids.len() != self.coords.len() {
            return Err(Error::LayoutMismatch("ids do not match coordinates".into()));
        }
        let mut cw = csv::Writer::from_writer(w);
        cw.write_record(["client_id", "x", "y", "cluster"])?;
        for (i, c) in self.coords.iter().enumerate() {
            let l = labels.map_or_else(String::new, |l| (l[i] + 1).to_string());
            cw.write_record([ids[i].clone(), format!("{}", c[0]), format!("{}", c[1]), l])?;
        }
        cw.flush()?;
        Ok(())
    }
}

/// Run t-SNE from a precomputed joint affinity matrix.
pub fn tsne_from_affinities(p: &[f64], n: usize, opts: &TsneOptions) -> Result<EmbeddingMap> {
    if p.len() != n * n {
        return Err(Error::LayoutMismatch("affinity matrix is not N × N".into()));
    }
    let mut rng = rng_from_seed(opts.seed);
    let normal = Normal::new(0.0, 1e-4).expect("valid normal");
    let mut y: Vec<[f64; 2]> = (0..n)
        .map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)])
        .collect();
    let mut update = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut grad = vec![[0.0; 2]; n];
    let mut num = vec![0.0; n * n];
    let mut trace = Vec::new();
    for it in 0..opts.iterations {
        let exaggerating = it < opts.exaggeration_iters;
        let ex = if exaggerating { opts.exaggeration } else { 1.0 };
        let momentum = if exaggerating {
            opts.initial_momentum
        } else {
            opts.final_momentum
        };
        gradient(p, &y, ex, &mut num, &mut grad);
        if grad.iter().any(|g| !(g[0].is_finite() && g[1].is_finite())) {
            return Err(Error::NonFiniteGradient(it));
        }
        for i in 0..n {
            for d in 0..2 {
                let g = grad[i][d];
                let gain = &mut gains[i][d];
                *gain = if (g > 0.0) != (update[i][d] > 0.0) {
                    *gain + 0.2
                } else {
                    *gain * 0.8
                };
                *gain = (*gain).max(0.01);
                update[i][d] = momentum * update[i][d] - opts.learning_rate * *gain * g;
                y[i][d] += update[i][d];
            }
        }
        // keep the map centred
        let (mx, my) = y.iter().fold((0.0, 0.0), |(a, b), c| (a + c[0], b + c[1]));
        let (mx, my) = (mx / n as f64, my / n as f64);
        for c in &mut y {
            c[0] -= mx;
            c[1] -= my;
        }
        let last = it + 1 == opts.iterations;
        if last || (opts.trace_every > 0 && (it + 1) % opts.trace_every == 0) {
            trace.push((it + 1, kl_divergence(p, &y)));
        }
    }
    let final_kl = trace.last().map_or_else(|| kl_divergence(p, &y), |t| t.1);
    Ok(EmbeddingMap {
        coords: y,
        perplexity: 0.0,
        iterations: opts.iterations,
        final_kl,
        seed: opts.seed,
        kl_trace: trace,
    })
}

/// Exact t-SNE of the feature matrix under the mixed distance.
pub fn tsne(
    matrix: &FeatureMatrix,
    mode: DistanceMode,
    opts: &TsneOptions,
) -> Result<EmbeddingMap> {
    let n = matrix.n();
    if n < 4 {
        return Err(Error::invalid("t-SNE needs at least four points"));
    }
    let d = distance_matrix(matrix, mode);
    let p = conditional_affinities(&d, n, opts.perplexity)?;
    let mut map = tsne_from_affinities(&p, n, opts)?;
    map.perplexity = opts.perplexity;
    Ok(map)
}
