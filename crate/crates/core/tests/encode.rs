use halluc_core::encode::{bow_encode, fv_encode, pool_avg, IntegralPool, PivotSet, PnOperator};
use halluc_core::numkit::rng::stream_rng;
use halluc_core::numkit::{Dictionary, GmmModel, Matrix};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;
use std::f64::consts::PI;

fn finite_vec(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0f64..50.0, len)
}

fn any_pn() -> impl Strategy<Value = PnOperator> {
    prop_oneof![
        (0.05f64..=1.0).prop_map(|g| PnOperator::gamma(g).unwrap()),
        (0.01f64..20.0).prop_map(|g| PnOperator::asinhe(g).unwrap()),
        (1.0f64..20.0).prop_map(|e| PnOperator::sigme(e).unwrap()),
        (1.001f64..20.0).prop_map(|e| PnOperator::axmin(e).unwrap()),
    ]
}

/// Gaussian density with diagonal covariance.
fn pdf(x: &[f64], mean: &[f64], std: &[f64]) -> f64 {
    x.iter()
        .zip(mean)
        .zip(std)
        .map(|((x, m), s)| (-(x - m) * (x - m) / (2.0 * s * s)).exp() / (s * (2.0 * PI).sqrt()))
        .product()
}

#[test]
fn fisher_vector_matches_density_ratio_oracle() {
    let mut rng = stream_rng(2, 0);
    let (k, d) = (2, 3);
    let weights = vec![0.35, 0.65];
    let means: Vec<f64> = (0..k * d).map(|_| rng.sample(StandardNormal)).collect();
    let stds: Vec<f64> = (0..k * d).map(|_| rng.gen_range(0.5..1.5)).collect();
    let gmm = GmmModel::new(
        weights.clone(),
        Matrix::from_vec(k, d, means.clone()).unwrap(),
        Matrix::from_vec(k, d, stds.clone()).unwrap(),
    )
    .unwrap();
    let x = vec![0.3; d];
    let joint: Vec<f64> = (0..k)
        .map(|c| weights[c] * pdf(&x, &means[c * d..(c + 1) * d], &stds[c * d..(c + 1) * d]))
        .collect();
    let total: f64 = joint.iter().sum();
    let got = fv_encode(&x, &gmm).unwrap();
    assert_eq!(got.len(), 2 * k * d);
    for c in 0..k {
        let scale = joint[c] / total / weights[c].sqrt();
        for j in 0..d {
            let phi = (x[j] - means[c * d + j]) / stds[c * d + j];
            let first = got[c * 2 * d + j];
            let second = got[c * 2 * d + d + j];
            assert!((first - scale * phi).abs() < 1e-10, "component {c} dim {j}");
            assert!((second - scale * (phi * phi - 1.0) / 2f64.sqrt()).abs() < 1e-10);
        }
    }
}

#[test]
fn sigme_scalar_is_half_angle_tanh() {
    // 2/(1+e^{-u}) - 1 = tanh(u/2), and u -> 1 as x grows past epsilon.
    let op = PnOperator::sigme(1.0).unwrap();
    for x in [1e3, 1.0, 1e-3] {
        let u = x / (x + op.epsilon());
        let got = op.apply(&[x])[0];
        assert!((got - (u / 2.0).tanh()).abs() < 1e-15, "x = {x}");
    }
    assert!((op.apply(&[1e3])[0] - 0.46212).abs() < 1e-5);
}

#[test]
fn axmin_saturates_on_three_four() {
    assert_eq!(PnOperator::axmin(2.0).unwrap().apply(&[3.0, 4.0]), vec![1.0, 1.0]);
}

#[test]
fn dense_pivots_approximate_the_target_kernel() {
    let pivots = PivotSet::even(64, 0.08).unwrap();
    let c = pivots.kernel_constant(0);
    let mut worst: f64 = 0.0;
    for i in 0..=40 {
        let x = 0.3 + 0.4 * i as f64 / 40.0;
        for j in -10..=10 {
            let y = x + 0.16 * j as f64 / 10.0;
            let approx: f64 = c * pivots.embed(x).iter().zip(pivots.embed(y)).map(|(a, b)| a * b).sum::<f64>();
            let exact = pivots.kernel(x, y);
            worst = worst.max((approx - exact).abs() / exact);
        }
    }
    assert!(worst < 0.02, "max relative error {worst}");
}

#[test]
fn integral_windows_match_direct_sums() {
    let mut rng = stream_rng(4, 0);
    let dim = 6;
    let frames: Vec<Vec<Vec<f64>>> = (0..50)
        .map(|_| (0..rng.gen_range(1..4)).map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect()).collect())
        .collect();
    let pool = IntegralPool::new(dim, &frames).unwrap();
    for _ in 0..200 {
        let s = rng.gen_range(0..50);
        let t = rng.gen_range(s..50);
        let mut sum = vec![0.0; dim];
        for frame in &frames[s..=t] {
            for v in frame {
                sum.iter_mut().zip(v).for_each(|(a, b)| *a += b);
            }
        }
        let norm = sum.iter().map(|x| x * x).sum::<f64>().sqrt() + 1e-12;
        for (a, b) in pool.pool_subsequence(s, t).unwrap().iter().zip(&sum) {
            assert!((a - b / norm).abs() < 1e-12);
        }
    }
}

proptest! {
    #[test]
    fn bow_is_one_hot_at_the_nearest_word(seed in any::<u64>(), k in 1usize..12, d in 1usize..6) {
        let mut rng = stream_rng(seed, 0);
        let c: Vec<f64> = (0..k * d).map(|_| rng.sample(StandardNormal)).collect();
        let dict = match Dictionary::new(Matrix::from_vec(k, d, c.clone()).unwrap()) {
            Ok(dict) => dict,
            Err(_) => return Ok(()),
        };
        let x: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let code = bow_encode(&x, &dict).unwrap();
        prop_assert_eq!(code.iter().sum::<f64>(), 1.0);
        prop_assert_eq!(code.iter().filter(|v| **v != 0.0).count(), 1);
        let hit = code.iter().position(|v| *v == 1.0).unwrap();
        let dist = |i: usize| (0..d).map(|j| (x[j] - c[i * d + j]).powi(2)).sum::<f64>();
        prop_assert!((0..k).all(|i| dist(hit) <= dist(i)));
    }

    #[test]
    fn fv_at_a_dominant_mean(seed in any::<u64>(), k in 1usize..5, d in 1usize..5) {
        let mut rng = stream_rng(seed, 1);
        // Means far apart so the chosen component owns the point.
        let means: Vec<f64> = (0..k * d).map(|i| 40.0 * (i / d) as f64 + rng.gen_range(-1.0..1.0)).collect();
        let stds: Vec<f64> = (0..k * d).map(|_| rng.gen_range(0.5..2.0)).collect();
        let gmm = GmmModel::new(
            vec![1.0 / k as f64; k],
            Matrix::from_vec(k, d, means.clone()).unwrap(),
            Matrix::from_vec(k, d, stds).unwrap(),
        ).unwrap();
        let c = rng.gen_range(0..k);
        let fv = fv_encode(&means[c * d..(c + 1) * d], &gmm).unwrap();
        prop_assert_eq!(fv.len(), 2 * k * d);
        let scale = (k as f64).sqrt();
        for j in 0..d {
            prop_assert!(fv[c * 2 * d + j].abs() < 1e-9);
            prop_assert!((fv[c * 2 * d + d + j] + scale / 2f64.sqrt()).abs() < 1e-6);
        }
    }

    #[test]
    fn pooled_window_equals_direct_pooling(seed in any::<u64>(), tau in 1usize..30, dim in 1usize..5) {
        let mut rng = stream_rng(seed, 2);
        let sums: Vec<Vec<f64>> = (0..tau).map(|_| (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
        let pool = IntegralPool::from_frame_sums(dim, &sums).unwrap();
        let s = rng.gen_range(0..tau);
        let t = rng.gen_range(s..tau);
        let mut sum = vec![0.0; dim];
        for f in &sums[s..=t] {
            sum.iter_mut().zip(f).for_each(|(a, b)| *a += b);
        }
        let norm = sum.iter().map(|x| x * x).sum::<f64>().sqrt() + 1e-12;
        for (a, b) in pool.pool_subsequence(s, t).unwrap().iter().zip(&sum) {
            prop_assert!((a - b / norm).abs() < 1e-12, "{} vs {}", a, b / norm);
        }
        if s == 0 && t == tau - 1 {
            let avg = pool_avg(&sums).unwrap();
            let got = pool.pool_subsequence(s, t).unwrap();
            if norm > 0.1 {
                prop_assert!(avg.iter().zip(&got).all(|(a, b)| (a - b).abs() < 1e-9));
            }
        }
        prop_assert!(pool.pool_subsequence(s, tau).is_err());
    }

    #[test]
    fn pn_is_odd(op in any_pn(), v in finite_vec(1..20)) {
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        for (a, b) in op.apply(&v).iter().zip(op.apply(&neg)) {
            prop_assert_eq!(*a, -b);
        }
    }

    #[test]
    fn bounded_pn_stays_in_range(eta in 1.0f64..20.0, v in finite_vec(1..20)) {
        prop_assert!(PnOperator::sigme(eta).unwrap().apply(&v).iter().all(|x| x.abs() < 1.0));
        let eta = eta.max(1.001);
        prop_assert!(PnOperator::axmin(eta).unwrap().apply(&v).iter().all(|x| x.abs() <= 1.0));
    }

    #[test]
    fn asinhe_keeps_zero_and_unit(g in 0.01f64..50.0) {
        let op = PnOperator::asinhe(g).unwrap();
        let out = op.apply(&[0.0, 1.0, -1.0]);
        prop_assert_eq!(out[0], 0.0);
        prop_assert!((out[1] - 1.0).abs() < 1e-15);
        prop_assert!((out[2] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn rbf_entries_in_unit_interval_and_periodic_shift(z in 2usize..16, sigma in 0.05f64..1.0, x in -3.0f64..3.0, shift in -5i32..5) {
        let even = PivotSet::even(z, sigma).unwrap();
        prop_assert!(even.embed(x.rem_euclid(1.0)).iter().all(|e| *e > 0.0 && *e <= 1.0));
        let ring = PivotSet::periodic(z, sigma).unwrap();
        let a = ring.embed(x);
        let b = ring.embed(x + f64::from(shift));
        for (p, q) in a.iter().zip(&b) {
            prop_assert!((p - q).abs() < 1e-12);
        }
    }
}
