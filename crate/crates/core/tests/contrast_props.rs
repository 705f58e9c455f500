mod common;

use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tgcc::contrast::{build_negative, build_negatives, infonce, kept_index_start};
use tgcc::graph::{normalized_laplacian, spectral_decompose};
use tgcc::linalg;

use common::{er_adjacency, weighted_adjacency};

fn random_vec(dim: usize, rng: &mut ChaCha8Rng) -> Array1<f64> {
    Array1::from_shape_fn(dim, |_| rng.random_range(-1.0..1.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn kept_start_is_monotone_in_kappa(n in 1usize..500, k1 in 0.0f64..=1.0, k2 in 0.0f64..=1.0) {
        let (lo, hi) = if k1 <= k2 { (k1, k2) } else { (k2, k1) };
        prop_assert!(kept_index_start(n, lo) >= kept_index_start(n, hi));
        prop_assert!(kept_index_start(n, hi) <= n / 2);
    }

    #[test]
    fn full_kappa_recovers_the_laplacian(n in 2usize..30, p in 0.1f64..0.9, seed in any::<u64>()) {
        let v = weighted_adjacency(n, p, seed);
        let neg = build_negative(v.view(), 1.0, 5000).unwrap();
        let l = normalized_laplacian(v.view()).unwrap();
        prop_assert!(linalg::relative_frobenius(neg.laplacian_hat.view(), l.view()) <= 1e-6);
        prop_assert_eq!(neg.kept_index_start, 0);
        prop_assert!(linalg::max_asymmetry(neg.adjacency_neg.view()) == 0.0);
    }

    #[test]
    fn batch_negatives_match_single_builds(n in 2usize..25, p in 0.1f64..0.8, seed in any::<u64>()) {
        let v = weighted_adjacency(n, p, seed);
        let kappas = [0.3, 0.1, 0.0, 0.2, 1.0];
        let batch = build_negatives(v.view(), &kappas, 5000).unwrap();
        for (neg, &k) in batch.iter().zip(kappas.iter()) {
            let single = build_negative(v.view(), k, 5000).unwrap();
            prop_assert_eq!(neg.kept_index_start, single.kept_index_start);
            for (a, b) in neg.adjacency_neg.iter().zip(single.adjacency_neg.iter()) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
            for (a, b) in neg.laplacian_hat.iter().zip(single.laplacian_hat.iter()) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn infonce_ignores_negative_order(dim in 2usize..8, m in 1usize..6, seed in any::<u64>(), t in 0.05f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hi = random_vec(dim, &mut rng);
        let hj = random_vec(dim, &mut rng);
        let negs: Vec<Array1<f64>> = (0..m).map(|_| random_vec(dim, &mut rng)).collect();
        let mut shuffled = negs.clone();
        for i in (1..m).rev() {
            shuffled.swap(i, rng.random_range(0..=i));
        }
        let a = infonce(hi.view(), hj.view(), &negs, t).unwrap();
        let b = infonce(hi.view(), hj.view(), &shuffled, t).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }
}

#[test]
fn zero_kappa_keeps_exactly_the_upper_half() {
    for n in [7usize, 8, 20] {
        let v = er_adjacency(n, 0.4, n as u64);
        let neg = build_negative(v.view(), 0.0, 5000).unwrap();
        assert_eq!(neg.kept_index_start, n / 2);
        let l = normalized_laplacian(v.view()).unwrap();
        let dec = spectral_decompose(l.view(), 5000).unwrap();
        let mut expected = Array2::<f64>::zeros((n, n));
        for i in n / 2..n {
            let u = dec.eigenvectors.column(i);
            for r in 0..n {
                for c in 0..n {
                    expected[[r, c]] += dec.eigenvalues[i] * u[r] * u[c];
                }
            }
        }
        assert!(linalg::relative_frobenius(neg.laplacian_hat.view(), expected.view()) < 1e-9);
    }
}

#[test]
fn filtered_spectrum_is_zero_plus_kept_eigenvalues() {
    let n = 8;
    let v = er_adjacency(n, 0.5, 31);
    let neg = build_negative(v.view(), 0.25, 5000).unwrap();
    let start = kept_index_start(n, 0.25);
    assert_eq!(start, 3);
    let l = normalized_laplacian(v.view()).unwrap();
    let (full, _) = linalg::symmetric_eigen(l.view()).unwrap();
    let mut expected: Vec<f64> = std::iter::repeat_n(0.0, start).chain(full.iter().skip(start).copied()).collect();
    expected.sort_by(f64::total_cmp);
    let (got, _) = linalg::symmetric_eigen(neg.laplacian_hat.view()).unwrap();
    for (a, b) in got.iter().zip(expected.iter()) {
        assert!((a - b).abs() < 1e-9, "{got:?} vs {expected:?}");
    }
}

#[test]
fn infonce_falls_as_the_positive_similarity_rises() {
    let hi = Array1::from(vec![1.0, 0.0, 0.0]);
    let negs = vec![
        Array1::from(vec![0.2, 0.9, 0.1]),
        Array1::from(vec![-0.5, 0.1, 0.8]),
        Array1::from(vec![0.0, -1.0, 0.3]),
    ];
    for t in [0.1, 0.5, 1.0] {
        let mut prev = f64::INFINITY;
        for k in 0..=100 {
            // θ from π down to 0: cosine with the anchor rises from −1 to 1.
            let theta = std::f64::consts::PI * (1.0 - k as f64 / 100.0);
            let hj = Array1::from(vec![theta.cos(), theta.sin(), 0.0]);
            let loss = infonce(hi.view(), hj.view(), &negs, t).unwrap();
            assert!(loss < prev, "t={t} step {k}: {loss} >= {prev}");
            prev = loss;
        }
    }
}
