use halluc_core::numkit::rng::stream_rng;
use halluc_core::numkit::{
    cholesky_lower, golden_section, grad_check, AdamConfig, AdamState, GmmEm, KMeans, Matrix, sq_dist, thin_svd, INV_PHI,
};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;

fn gaussian_blobs(centers: &[[f64; 2]], per: usize, spread: f64, seed: u64) -> (Matrix, Vec<usize>) {
    let mut rng = stream_rng(seed, 0);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..per {
            rows.push(center.map(|m| m + spread * rng.sample::<f64, _>(StandardNormal)));
            labels.push(c);
        }
    }
    (Matrix::from_rows(&rows).unwrap(), labels)
}

/// Plain Lloyd iterations from `k` random data points.
fn lloyd(points: &Matrix, k: usize, rng: &mut impl Rng) -> f64 {
    let n = points.rows();
    let mut centers: Vec<Vec<f64>> = sample(rng, n, k).iter().map(|i| points.row(i).to_vec()).collect();
    let assign = |centers: &[Vec<f64>], x: &[f64]| {
        (0..centers.len())
            .map(|c| (c, sq_dist(x, &centers[c])))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
    };
    for _ in 0..100 {
        let mut sums = vec![vec![0.0; points.cols()]; k];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let (c, _) = assign(&centers, points.row(i));
            counts[c] += 1;
            sums[c].iter_mut().zip(points.row(i)).for_each(|(s, x)| *s += x);
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    (0..n).map(|i| assign(&centers, points.row(i)).1).sum()
}

#[test]
fn kmeans_matches_restart_oracle() {
    let (points, _) = gaussian_blobs(&[[0.0, 0.0], [4.0, 1.0], [1.0, 5.0]], 34, 1.0, 5);
    let mut rng = stream_rng(99, 0);
    let oracle = (0..50).map(|_| lloyd(&points, 3, &mut rng)).fold(f64::INFINITY, f64::min);
    for seed in 0..5 {
        let fit = KMeans::default().fit(&points, 3, seed).unwrap();
        assert!(fit.objective <= 1.05 * oracle, "seed {seed}: {} vs oracle {oracle}", fit.objective);
        assert!((fit.dictionary.objective(&points) - fit.objective).abs() <= 1e-9 * oracle);
    }
}

#[test]
fn gmm_recovers_separated_means() {
    let centers = [[-3.0, 0.0], [3.0, 2.0]];
    let (points, labels) = gaussian_blobs(&centers, 400, 0.7, 11);
    let model = GmmEm::default().fit(&points, 2, 3).unwrap().model;
    for c in 0..2 {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        let sample_mean: Vec<f64> = (0..2)
            .map(|j| members.iter().map(|&i| points[(i, j)]).sum::<f64>() / members.len() as f64)
            .collect();
        let best = (0..2)
            .map(|k| sq_dist(model.means().row(k), &sample_mean).sqrt())
            .fold(f64::INFINITY, f64::min);
        assert!(best < 0.1, "cluster {c}: nearest component mean is {best} away");
    }
    assert!((model.weights().iter().sum::<f64>() - 1.0).abs() < 1e-9);
}

#[test]
fn gmm_with_one_component_per_point_fits_at_least_as_well() {
    let (points, _) = gaussian_blobs(&[[0.0, 0.0], [2.0, 2.0]], 4, 1.0, 2);
    let one = GmmEm::default().fit(&points, 1, 0).unwrap().model;
    let many = GmmEm::default().fit(&points, points.rows(), 0).unwrap().model;
    assert!(many.log_likelihood(&points) >= one.log_likelihood(&points));
}

#[test]
fn svd_matches_gram_eigenvalues() {
    let mut rng = stream_rng(6, 4);
    let data: Vec<f64> = (0..24).map(|_| rng.sample(StandardNormal)).collect();
    let m = Matrix::from_vec(6, 4, data.clone()).unwrap();
    let svd = thin_svd(&m);
    let a = DMatrix::from_row_slice(6, 4, &data);
    let mut eig: Vec<f64> = (a.transpose() * &a).symmetric_eigen().eigenvalues.iter().copied().collect();
    eig.sort_by(|x, y| y.total_cmp(x));
    for (s, e) in svd.singular_values.iter().zip(&eig) {
        assert!((s * s - e).abs() < 1e-8, "{} vs {e}", s * s);
    }
}

#[test]
fn cholesky_reconstructs_seeded_gram() {
    let mut rng = stream_rng(8, 0);
    let a = Matrix::from_vec(8, 8, (0..64).map(|_| rng.sample(StandardNormal)).collect()).unwrap();
    let mut spd = a.transpose().matmul(&a).unwrap();
    (0..8).for_each(|i| spd[(i, i)] += 1.0);
    let l = cholesky_lower(&spd).unwrap();
    let back = l.matmul(&l.transpose()).unwrap();
    for i in 0..8 {
        assert!(l[(i, i)] > 0.0);
        for j in 0..8 {
            assert!((back[(i, j)] - spd[(i, j)]).abs() < 1e-9);
            if j > i {
                assert_eq!(l[(i, j)], 0.0);
            }
        }
    }
}

#[test]
fn wrong_gradient_scale_is_caught() {
    let x = [0.3, -1.2, 2.0];
    let wrong: Vec<f64> = x.iter().map(|v| 3.0 * v).collect();
    let err = grad_check(|p| p.iter().map(|v| v * v).sum(), &wrong, &x, 1e-5);
    // |3x - 2x| / max(|3x|, |2x|)
    assert!((err - 1.0 / 3.0).abs() < 1e-6, "{err}");
    let right: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
    assert!(grad_check(|p| p.iter().map(|v| v * v).sum(), &right, &x, 1e-5) < 1e-8);
}

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = stream_rng(seed, 1);
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

proptest! {
    #[test]
    fn svd_factors_are_orthonormal_sorted_and_reconstruct(rows in 1usize..12, cols in 1usize..12, seed in any::<u64>()) {
        let m = random_matrix(rows, cols, seed);
        let svd = thin_svd(&m);
        let r = svd.singular_values.len();
        prop_assert!(svd.singular_values.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(svd.singular_values.iter().all(|s| *s >= 0.0));
        for f in [&svd.left_vectors, &svd.right_vectors] {
            let g = f.transpose().matmul(f).unwrap();
            for i in 0..r {
                for j in 0..r {
                    let want = if i == j { 1.0 } else { 0.0 };
                    prop_assert!((g[(i, j)] - want).abs() < 1e-8);
                }
            }
        }
        let back = svd.reconstruct();
        let err: f64 = m.as_slice().iter().zip(back.as_slice()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        prop_assert!(err <= 1e-6 * m.norm().max(1e-300));
    }

    #[test]
    fn cholesky_recovers_its_factor(d in 1usize..10, seed in any::<u64>()) {
        let mut rng = stream_rng(seed, 2);
        let mut l = Matrix::zeros(d, d);
        for i in 0..d {
            for j in 0..i {
                l[(i, j)] = rng.sample(StandardNormal);
            }
            l[(i, i)] = rng.gen_range(0.5..2.0);
        }
        let got = cholesky_lower(&l.matmul(&l.transpose()).unwrap()).unwrap();
        for (a, b) in got.as_slice().iter().zip(l.as_slice()) {
            prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
        }
    }

    #[test]
    fn golden_bracket_shrinks_by_the_ratio(
        lo in -10.0f64..0.0,
        width in 0.1f64..60.0,
        x0 in 0.0f64..1.0,
        iters in 1usize..30,
    ) {
        let hi = lo + width;
        let target = lo + x0 * width;
        let r = golden_section(|x| (x - target).abs(), lo, hi, 1e-300, iters).unwrap();
        let (a, b) = r.bracket;
        prop_assert!(b - a <= width * INV_PHI.powi(iters as i32 + 1) * 1.01 + 1e-12,
            "width {} after {} iterations", b - a, iters);
        prop_assert!(a <= target + 1e-12 && target <= b + 1e-12);
    }

    #[test]
    fn kmeans_objective_never_increases_and_repeats(seed in any::<u64>(), k in 1usize..6) {
        let (points, _) = gaussian_blobs(&[[0.0, 0.0], [3.0, 3.0], [-2.0, 4.0]], 10, 1.0, seed);
        let a = KMeans::default().fit(&points, k, seed).unwrap();
        let b = KMeans::default().fit(&points, k, seed).unwrap();
        prop_assert!(a.history.windows(2).all(|w| w[1] <= w[0]));
        prop_assert_eq!(a.dictionary.centroids().as_slice(), b.dictionary.centroids().as_slice());
    }

    #[test]
    fn gmm_likelihood_never_decreases_and_repeats(seed in any::<u64>(), k in 1usize..4) {
        let (points, _) = gaussian_blobs(&[[0.0, 0.0], [3.0, 3.0]], 15, 1.0, seed);
        let a = GmmEm::default().fit(&points, k, seed).unwrap();
        let b = GmmEm::default().fit(&points, k, seed).unwrap();
        prop_assert!(a.history.windows(2).all(|w| w[1] >= w[0] - 1e-7));
        prop_assert_eq!(a.model, b.model);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate(g in prop_oneof![-1e3f64..-1e-3, 1e-3f64..1e3], lr in 1e-5f64..1.0) {
        let cfg = AdamConfig { learning_rate: lr, ..AdamConfig::default() };
        let mut state = AdamState::new(1, cfg).unwrap();
        let mut p = [0.0];
        state.step("p", &mut p, &[g]).unwrap();
        prop_assert!((p[0].abs() - lr).abs() <= 1e-6 * lr);
        prop_assert!(p[0].signum() == -g.signum());
    }
}
