//! Property tests for invariants that hold for every valid input.

mod common;

use common::random_matrix;
use proptest::prelude::*;
use rfmp::cluster::{mixed_distance, DistanceMode};
use rfmp::embed::{conditional_affinities, distance_matrix};
use rfmp::model_select::silhouette;
use rfmp::numeric::rng_from_seed;
use rfmp::stats::anova::one_way_anova;
use rfmp::stats::density::symmetric_kl;
use rfmp::stats::rank::{kruskal_wallis, midranks};
use rfmp::stats::{adjust_p, Adjustment};
use rfmp::synth::adjusted_rand_index;

fn mode() -> impl Strategy<Value = DistanceMode> {
    prop_oneof![Just(DistanceMode::L1), Just(DistanceMode::SquaredEuclidean)]
}

fn groups() -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-50.0..50.0f64, 2..12), 2..6)
}

fn masses() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..10).prop_flat_map(|b| {
        let v = prop::collection::vec(0.0..1.0f64, b);
        (v.clone(), v).prop_map(|(p, q)| (normalise(p), normalise(q)))
    })
}

fn normalise(v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        v.iter().map(|x| x / s).collect()
    } else {
        vec![1.0 / v.len() as f64; v.len()]
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn distance_is_symmetric_and_nonnegative(seed in any::<u64>(), mode in mode(), discrete in any::<bool>()) {
        let mut rng = rng_from_seed(seed);
        let m = random_matrix(&mut rng, 6, 3, 2, 3, discrete);
        for i in 0..m.n() {
            prop_assert_eq!(mixed_distance(m.row(i), m.row(i), mode).unwrap(), 0.0);
            for j in 0..m.n() {
                let a = mixed_distance(m.row(i), m.row(j), mode).unwrap();
                let b = mixed_distance(m.row(j), m.row(i), mode).unwrap();
                prop_assert!(a >= 0.0);
                prop_assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn ari_ignores_label_names(labels in prop::collection::vec(0usize..4, 2..40), shift in 1usize..4) {
        let renamed: Vec<usize> = labels.iter().map(|&l| (l + shift) % 4 + 10).collect();
        let ari = adjusted_rand_index(&labels, &renamed).unwrap();
        prop_assert!((ari - 1.0).abs() < 1e-12 || ari == 0.0);
        let other: Vec<usize> = labels.iter().rev().copied().collect();
        let x = adjusted_rand_index(&labels, &other).unwrap();
        let y = adjusted_rand_index(&other, &labels).unwrap();
        prop_assert!((x - y).abs() < 1e-12);
        prop_assert!(x <= 1.0 + 1e-12);
    }

    #[test]
    fn symmetric_kl_properties((p, q) in masses()) {
        let eps = 1e-10;
        let d = symmetric_kl(&p, &q, eps).unwrap();
        prop_assert!(d >= 0.0);
        prop_assert!((d - symmetric_kl(&q, &p, eps).unwrap()).abs() <= 1e-12 * d.max(1.0));
        prop_assert!(symmetric_kl(&p, &p, eps).unwrap().abs() < 1e-12);
    }

    #[test]
    fn anova_sums_of_squares_decompose(g in groups()) {
        let t = one_way_anova(&g).unwrap();
        let scale = t.ss_total.max(1.0);
        prop_assert!((t.ss_between + t.ss_within - t.ss_total).abs() <= 1e-9 * scale);
        prop_assert!(t.ss_between >= -1e-9 * scale && t.ss_within >= 0.0);
        if t.p_value.is_finite() {
            prop_assert!((0.0..=1.0).contains(&t.p_value));
        }
    }

    #[test]
    fn kruskal_wallis_is_rank_based(g in groups()) {
        let (a, _) = kruskal_wallis(&g).unwrap();
        let moved: Vec<Vec<f64>> = g.iter().map(|v| v.iter().map(|x| 3.0 * x + 7.0).collect()).collect();
        let (b, _) = kruskal_wallis(&moved).unwrap();
        if a.statistic.is_finite() {
            prop_assert!((a.statistic - b.statistic).abs() <= 1e-9 * a.statistic.abs().max(1.0));
            prop_assert!((0.0..=1.0).contains(&a.p_value));
        }
    }

    #[test]
    fn midranks_sum_to_triangular_number(v in prop::collection::vec(0u8..6, 1..60)) {
        let values: Vec<f64> = v.iter().map(|&x| f64::from(x)).collect();
        let (r, _) = midranks(&values);
        let n = values.len() as f64;
        prop_assert!((r.iter().sum::<f64>() - n * (n + 1.0) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn holm_adjustment_is_bounded_and_ordered(p in prop::collection::vec(0.0..=1.0f64, 1..12)) {
        let adj = adjust_p(&p, Adjustment::Holm);
        for i in 0..p.len() {
            prop_assert!(adj[i] >= p[i] && adj[i] <= 1.0);
            for j in 0..p.len() {
                if p[i] <= p[j] {
                    prop_assert!(adj[i] <= adj[j]);
                }
            }
        }
    }

    #[test]
    fn joint_affinities_form_a_distribution(seed in any::<u64>(), mode in mode()) {
        let mut rng = rng_from_seed(seed);
        let m = random_matrix(&mut rng, 25, 3, 1, 3, false);
        let n = m.n();
        let p = conditional_affinities(&distance_matrix(&m, mode), n, 5.0).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for i in 0..n {
            prop_assert_eq!(p[i * n + i], 0.0);
            for j in 0..n {
                prop_assert!(p[i * n + j] >= 0.0);
                prop_assert_eq!(p[i * n + j], p[j * n + i]);
            }
        }
    }

    #[test]
    fn silhouette_is_bounded(seed in any::<u64>(), mode in mode(), k in 2usize..5) {
        let mut rng = rng_from_seed(seed);
        let m = random_matrix(&mut rng, 20, 2, 1, 3, true);
        let labels: Vec<usize> = (0..m.n()).map(|i| i % k).collect();
        let s = silhouette(&m, &labels, k, mode).unwrap();
        prop_assert!(s.per_point.iter().all(|v| (-1.0..=1.0).contains(v)));
        prop_assert!((-1.0..=1.0).contains(&s.mean));
    }
}
