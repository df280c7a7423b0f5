//! Distribution functions: normal, Student t, chi-square, F and the
//! studentized range.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use super::special::{beta_inc, erfc, gamma_p, gamma_q, ln_gamma};

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

pub fn norm_sf(x: f64) -> f64 {
    0.5 * erfc(x * FRAC_1_SQRT_2)
}

/// Inverse of the standard normal CDF (rational start, Halley refinement).
pub fn norm_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    let plow = 0.024_25;
    let mut x = if p < plow {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - plow {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    for _ in 0..2 {
        let e = if x < 0.0 {
            norm_cdf(x) - p
        } else {
            (1.0 - p) - norm_sf(x)
        };
        let u = e * (2.0 * PI).sqrt() * (0.5 * x * x).exp();
        x -= u / (1.0 + 0.5 * x * u);
    }
    x
}

pub fn chi2_cdf(x: f64, df: f64) -> f64 {
    gamma_p(0.5 * df, 0.5 * x)
}

pub fn chi2_sf(x: f64, df: f64) -> f64 {
    gamma_q(0.5 * df, 0.5 * x)
}

pub fn f_cdf(x: f64, d1: f64, d2: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    beta_inc(0.5 * d1, 0.5 * d2, d1 * x / (d1 * x + d2))
}

pub fn f_sf(x: f64, d1: f64, d2: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    beta_inc(0.5 * d2, 0.5 * d1, d2 / (d2 + d1 * x))
}

pub fn t_cdf(t: f64, df: f64) -> f64 {
    let tail = 0.5 * beta_inc(0.5 * df, 0.5, df / (df + t * t));
    if t < 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

/// P(|T| > |t|).
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    beta_inc(0.5 * df, 0.5, df / (df + t * t))
}

/// Root of an increasing function `cdf(x) = p` by bracketing and bisection.
fn invert(cdf: impl Fn(f64) -> f64, p: f64, lo: f64, mut hi: f64) -> f64 {
    let mut lo = lo;
    while cdf(hi) < p {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return f64::INFINITY;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn chi2_quantile(p: f64, df: f64) -> f64 {
    invert(|x| chi2_cdf(x, df), p, 0.0, df.max(1.0))
}

pub fn f_quantile(p: f64, d1: f64, d2: f64) -> f64 {
    invert(|x| f_cdf(x, d1, d2), p, 0.0, 1.0)
}

pub fn t_quantile(p: f64, df: f64) -> f64 {
    if p == 0.5 {
        return 0.0;
    }
    if p < 0.5 {
        return -t_quantile(1.0 - p, df);
    }
    invert(|x| t_cdf(x, df), p, 0.0, 1.0)
}

// Gauss-Kronrod 7/15 nodes and weights on [-1, 1].
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = fc * WGK[7];
    let mut g = fc * WG[3];
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (k * h, (k - g).abs() * h)
}

/// Adaptive Gauss-Kronrod integration to absolute tolerance `tol`.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let (v, err) = gk15(f, a, b);
        if err <= tol || depth >= 40 {
            return v;
        }
        let m = 0.5 * (a + b);
        rec(f, a, m, 0.5 * tol, depth + 1) + rec(f, m, b, 0.5 * tol, depth + 1)
    }
    rec(&f, a, b, tol, 0)
}

/// Φ(b) − Φ(a) for a ≤ b without cancellation in the tails.
fn norm_interval(a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        norm_sf(a) - norm_sf(b)
    } else if b <= 0.0 {
        norm_cdf(b) - norm_cdf(a)
    } else {
        1.0 - norm_cdf(a) - norm_sf(b)
    }
}

/// CDF of the range of `k` independent standard normals.
pub fn normal_range_cdf(w: f64, k: usize) -> f64 {
    if w <= 0.0 {
        return 0.0;
    }
    let km1 = (k - 1) as i32;
    let f = |z: f64| norm_pdf(z) * norm_interval(z, z + w).powi(km1);
    let edges = [-9.0 - w, -3.0 - w, -w, -0.5 * w, 0.0, 3.0, 9.0];
    let total: f64 = edges
        .windows(2)
        .map(|e| integrate(f, e[0], e[1], 1e-13))
        .sum();
    (k as f64 * total).clamp(0.0, 1.0)
}

/// CDF of the studentized range with `k` means and `df` error degrees of
/// freedom. Integrates the normal-range CDF against the density of
/// s = sqrt(χ²_df / df).
pub fn ptukey(q: f64, k: usize, df: f64) -> f64 {
    if q <= 0.0 {
        return 0.0;
    }
    assert!(k >= 2, "studentized range needs k >= 2");
    if df.is_infinite() || df > 1e7 {
        return normal_range_cdf(q, k);
    }
    let half = 0.5 * df;
    let ln_c = half * df.ln() - ln_gamma(half) - (half - 1.0) * std::f64::consts::LN_2;
    let ln_f = |s: f64| ln_c + (df - 1.0) * s.ln() - half * s * s;
    let mode = if df > 1.0 {
        ((df - 1.0) / df).sqrt()
    } else {
        0.0
    };
    let peak = if mode > 0.0 { ln_f(mode) } else { ln_c };
    let floor = peak - 45.0;

    let lo = if mode > 0.0 {
        let (mut a, mut b) = (0.0, mode);
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if ln_f(m) < floor {
                a = m;
            } else {
                b = m;
            }
        }
        a
    } else {
        0.0
    };
    let mut step = 1.0;
    while ln_f(mode + step) > floor {
        step *= 2.0;
    }
    let (mut a, mut b) = (mode + 0.5 * step, mode + step);
    if mode + 0.5 * step <= mode || ln_f(a) < floor {
        a = mode;
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if ln_f(m) > floor {
            a = m;
        } else {
            b = m;
        }
    }
    let hi = b;

    let g = |s: f64| {
        if s <= 0.0 {
            return 0.0;
        }
        ln_f(s).exp() * normal_range_cdf(q * s, k)
    };
    // split around the peak so the adaptive rule sees its width
    let width = hi - lo;
    let cuts: Vec<f64> = (0..=8).map(|i| lo + width * i as f64 / 8.0).collect();
    let v: f64 = cuts
        .windows(2)
        .map(|c| integrate(g, c[0], c[1], 1e-12))
        .sum();
    v.clamp(0.0, 1.0)
}

/// Upper tail of the studentized range.
pub fn tukey_sf(q: f64, k: usize, df: f64) -> f64 {
    (1.0 - ptukey(q, k, df)).clamp(0.0, 1.0)
}

/// Quantile of the studentized range.
pub fn qtukey(p: f64, k: usize, df: f64) -> f64 {
    // regula falsi (Illinois) on a bracket; ptukey is expensive
    let (mut a, mut b) = (0.0, 4.0);
    let mut fa = -p;
    let mut fb = ptukey(b, k, df) - p;
    while fb < 0.0 {
        a = b;
        fa = fb;
        b *= 2.0;
        fb = ptukey(b, k, df) - p;
    }
    let mut side = 0;
    for _ in 0..100 {
        let c = (a * fb - b * fa) / (fb - fa);
        let fc = ptukey(c, k, df) - p;
        if fc.abs() < 1e-12 || (b - a).abs() < 1e-12 * c.abs().max(1.0) {
            return c;
        }
        if fc * fb > 0.0 {
            b = c;
            fb = fc;
            if side == 1 {
                fa *= 0.5;
            }
            side = 1;
        } else {
            a = c;
            fa = fc;
            if side == -1 {
                fb *= 0.5;
            }
            side = -1;
        }
    }
    0.5 * (a + b)
}
