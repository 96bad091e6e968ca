use std::f64::consts::TAU;

use halluc_core::descriptors::{
    detections_to_matrix, encode_detection, encode_detection_plain, finalize_ground_truth, multi_moment,
    multi_moment_weighted, odf_descriptor, sdf_descriptor, DetectionRecord, MomentConfig, MomentInput, SaliencyFrame,
    SaliencySource, SdfEncoder, DET_CLASSES, INET_DIM, ODF_PIVOTS, ODF_SIGMA,
};
use halluc_core::encode::{PivotSet, PnOperator};
use halluc_core::numkit::rng::stream_rng;
use halluc_core::numkit::Matrix;
use halluc_core::sketch::SketchPlan;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn record(rng: &mut impl Rng, frame: usize, tau: usize) -> DetectionRecord {
    let mut inet: Vec<f64> = (0..INET_DIM).map(|_| rng.gen::<f64>()).collect();
    let s: f64 = inet.iter().sum();
    inet.iter_mut().for_each(|x| *x /= s);
    let x1 = rng.gen_range(0.0..0.6);
    let y1 = rng.gen_range(0.0..0.6);
    DetectionRecord {
        frame,
        tau,
        class_id: rng.gen_range(0..DET_CLASSES),
        score: rng.gen(),
        bbox: [x1, y1, x1 + rng.gen_range(0.0..0.4), y1 + rng.gen_range(0.0..0.4)],
        inet,
    }
}

fn frame(rng: &mut impl Rng, w: usize, h: usize, hi: f64) -> SaliencyFrame {
    SaliencyFrame::new(w, h, (0..w * h).map(|_| rng.gen_range(0.0..hi)).collect(), SaliencySource::Spatial).unwrap()
}

fn odf_pivots() -> PivotSet {
    PivotSet::even(ODF_PIVOTS, ODF_SIGMA).unwrap()
}

/// Naive gradient histogram: one pass per output entry.
fn gradient_histogram_oracle(f: &SaliencyFrame) -> Vec<f64> {
    let (w, h) = (f.width(), f.height());
    let px = |x: isize, y: isize| f.at(x.clamp(0, w as isize - 1) as usize, y.clamp(0, h as isize - 1) as usize);
    let mut out = vec![0.0; 12 * 25];
    for o in 0..12 {
        let zo = o as f64 / 12.0;
        for a in 0..5 {
            let za = a as f64 / 4.0;
            for b in 0..5 {
                let zb = b as f64 / 4.0;
                let mut acc = 0.0;
                for y in 0..h as isize {
                    for x in 0..w as isize {
                        let gx = px(x + 1, y) - px(x - 1, y);
                        let gy = px(x, y + 1) - px(x, y - 1);
                        let mag = (gx * gx + gy * gy).sqrt();
                        if mag == 0.0 {
                            continue;
                        }
                        let theta = (gy.atan2(gx) / TAU).rem_euclid(1.0);
                        let dt = (theta - zo).abs().min(1.0 - (theta - zo).abs());
                        let u = x as f64 / (w - 1) as f64;
                        let v = y as f64 / (h - 1) as f64;
                        acc += mag
                            * (-dt * dt * 144.0).exp()
                            * (-(u - za).powi(2) * 16.0).exp()
                            * (-(v - zb).powi(2) * 16.0).exp();
                    }
                }
                out[o * 25 + a * 5 + b] = acc;
            }
        }
    }
    let n = out.iter().map(|x| x * x).sum::<f64>().sqrt();
    out.iter().map(|x| x / n).collect()
}

#[test]
fn gradient_block_matches_pixel_loop_oracle() {
    let mut rng = stream_rng(14, 0);
    let enc = SdfEncoder::default();
    for _ in 0..3 {
        let f = frame(&mut rng, 16, 16, 1.0);
        let got = enc.encode_frame(&f);
        for (a, b) in got[..300].iter().zip(gradient_histogram_oracle(&f)) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }
}

#[test]
fn vertical_step_edge_points_along_x() {
    let data: Vec<f64> = (0..20 * 12).map(|i| if i % 20 < 10 { 0.0 } else { 1.0 }).collect();
    let f = SaliencyFrame::new(20, 12, data, SaliencySource::Temporal).unwrap();
    let v = SdfEncoder::default().encode_frame(&f);
    let mass: Vec<f64> = (0..12).map(|o| v[o * 25..(o + 1) * 25].iter().sum()).collect();
    let peak = (0..12).max_by(|a, b| mass[*a].total_cmp(&mass[*b])).unwrap();
    assert_eq!(peak, 0);
    assert!((mass[1] - mass[11]).abs() < 1e-12);
    for (a, b) in v[..300].iter().zip(gradient_histogram_oracle(&f)) {
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn detection_matrix_matches_direct_frame_loop() {
    let mut rng = stream_rng(15, 0);
    let pivots = odf_pivots();
    let frames = [0usize, 2, 5];
    let counts = [2usize, 1, 3];
    let mut records = Vec::new();
    for (&f, &k) in frames.iter().zip(&counts) {
        for _ in 0..k {
            records.push(record(&mut rng, f, 8));
        }
    }
    let encoded: Vec<Vec<f64>> = records.iter().map(|r| encode_detection(r, &pivots).unwrap()).collect();
    let input = detections_to_matrix(&records, &encoded).unwrap();
    let d = encoded[0].len();
    let n = encoded.len() as f64;
    let mean: Vec<f64> = (0..d).map(|i| encoded.iter().map(|v| v[i]).sum::<f64>() / n).collect();
    let mut col = 0;
    let mut start = 0;
    for &k in &counts {
        for v in &encoded[start..start + k] {
            for i in 0..d {
                let want = (v[i] - mean[i]) / (3.0 * k as f64);
                assert!((input.spread[(i, col)] - want).abs() < 1e-12);
                assert!((input.samples[(i, col)] - (v[i] - mean[i])).abs() < 1e-12);
            }
            col += 1;
        }
        start += k;
    }
    for (a, b) in input.mean.iter().zip(&mean) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn sdf_matches_hand_assembled_input() {
    let mut rng = stream_rng(16, 0);
    let enc = SdfEncoder::default();
    let frames: Vec<SaliencyFrame> = (0..4).map(|_| frame(&mut rng, 12, 10, 1.0)).collect();
    let cfg = MomentConfig::with_vectors(2);
    let got = sdf_descriptor(&frames, &enc, &cfg).unwrap().to_vec();

    let vs: Vec<Vec<f64>> = frames.iter().map(|f| enc.encode_frame(f)).collect();
    let d = vs[0].len();
    let mean: Vec<f64> = (0..d).map(|i| vs.iter().map(|v| v[i]).sum::<f64>() / 4.0).collect();
    let centred: Vec<Vec<f64>> = vs.iter().map(|v| v.iter().zip(&mean).map(|(x, m)| x - m).collect()).collect();
    let scaled: Vec<Vec<f64>> = centred.iter().map(|c| c.iter().map(|x| x / 4.0).collect()).collect();
    let want = multi_moment_weighted(
        &MomentInput {
            mean,
            spread: Matrix::from_columns(d, &scaled).unwrap(),
            samples: Matrix::from_columns(d, &centred).unwrap(),
        },
        &cfg,
    )
    .unwrap()
    .to_vec();
    assert_eq!(got.len(), want.len());
    for (a, b) in got.iter().zip(&want) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn finalize_is_pn_then_sketch() {
    let mut rng = stream_rng(17, 0);
    let desc: Vec<f64> = (0..1214 * 5).map(|_| rng.sample(StandardNormal)).collect();
    let pn = PnOperator::sigme(1.0).unwrap();
    let plan = SketchPlan::new(desc.len(), 128, 3).unwrap();
    let got = finalize_ground_truth(&desc, &pn, &plan).unwrap();
    assert_eq!(got, plan.apply(&pn.apply(&desc)).unwrap());
    assert!(finalize_ground_truth(&desc[1..], &pn, &plan).is_err());
}

#[test]
fn full_confidence_embedding_closed_form() {
    let mut rng = stream_rng(18, 0);
    let mut rec = record(&mut rng, 0, 1);
    rec.score = 1.0;
    let v = encode_detection(&rec, &odf_pivots()).unwrap();
    let phi = &v[DET_CLASSES + INET_DIM..DET_CLASSES + INET_DIM + 7];
    for (i, p) in phi.iter().enumerate() {
        let z = i as f64 / 6.0;
        assert!((p - (-(1.0 - z) * (1.0 - z) / 0.25).exp()).abs() < 1e-15);
    }
    // τ = 1 embeds time 0.
    let time = &v[v.len() - 7..];
    assert_eq!(time[0], 1.0);
}

fn random_columns(rng: &mut impl Rng, d: usize, n: usize) -> (Vec<f64>, Matrix) {
    let cols: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.sample::<f64, _>(StandardNormal).powi(3)).collect()).collect();
    let mean: Vec<f64> = (0..d).map(|i| cols.iter().map(|c| c[i]).sum::<f64>() / n as f64).collect();
    let centred: Vec<Vec<f64>> = cols.iter().map(|c| c.iter().zip(&mean).map(|(x, m)| x - m).collect()).collect();
    (mean, Matrix::from_columns(d, &centred).unwrap())
}

proptest! {
    #[test]
    fn detection_lengths_are_fixed(seed in any::<u64>(), tau in 1usize..40) {
        let mut rng = stream_rng(seed, 0);
        let f = rng.gen_range(0..tau);
        let rec = record(&mut rng, f, tau);
        prop_assert_eq!(encode_detection(&rec, &odf_pivots()).unwrap().len(), 1214);
        prop_assert_eq!(encode_detection_plain(&rec).unwrap().len(), 1178);
    }

    #[test]
    fn moment_blocks_have_their_contracts(seed in any::<u64>(), d in 1usize..12, n in 0usize..10, nv in 1usize..5) {
        let mut rng = stream_rng(seed, 1);
        let (mean, mat) = if n == 0 {
            (vec![0.0; d], Matrix::zeros(d, 0))
        } else {
            random_columns(&mut rng, d, n)
        };
        let m = multi_moment(&mean, &mat, &MomentConfig::with_vectors(nv)).unwrap();
        prop_assert_eq!(m.to_vec().len(), d * (4 + nv));
        let mean_norm = m.mean.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!(mean_norm == 0.0 || (mean_norm - 1.0).abs() < 1e-9);
        let total: f64 = m.spectrum.iter().sum();
        prop_assert!(m.spectrum.iter().all(|x| *x >= 0.0));
        prop_assert!(total == 0.0 || (total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn moments_ignore_positive_column_scaling(seed in any::<u64>(), d in 2usize..8, n in 3usize..9, c in 0.01f64..100.0) {
        let mut rng = stream_rng(seed, 2);
        let (mean, mat) = random_columns(&mut rng, d, n);
        let scaled = Matrix::from_vec(d, n, mat.as_slice().iter().map(|x| c * x).collect()).unwrap();
        let cfg = MomentConfig::with_vectors(2);
        let a = multi_moment(&mean, &mat, &cfg).unwrap();
        let b = multi_moment(&mean, &scaled, &cfg).unwrap();
        for (u, v) in a.vectors.iter().zip(&b.vectors) {
            let dot: f64 = u.iter().zip(v).map(|(x, y)| x * y).sum();
            let nu: f64 = u.iter().map(|x| x * x).sum();
            if nu > 0.5 {
                prop_assert!((dot.abs() - 1.0).abs() < 1e-6, "singular vectors moved: |<u,v>| = {}", dot.abs());
            }
        }
        for (x, y) in a.skewness.iter().chain(&a.kurtosis).zip(b.skewness.iter().chain(&b.kurtosis)) {
            prop_assert!((x - y).abs() < 1e-8 * x.abs().max(1.0));
        }
    }

    #[test]
    fn intensity_shift_leaves_gradient_block(seed in any::<u64>(), w in 3usize..20, h in 3usize..20, shift in 0.05f64..0.5) {
        let mut rng = stream_rng(seed, 3);
        let f = frame(&mut rng, w, h, 0.5);
        let g = SaliencyFrame::new(w, h, f.data().iter().map(|x| x + shift).collect(), SaliencySource::Spatial).unwrap();
        let enc = SdfEncoder::default();
        let (a, b) = (enc.encode_frame(&f), enc.encode_frame(&g));
        prop_assert_eq!(a.len(), 556);
        for (x, y) in a[..300].iter().zip(&b[..300]) {
            prop_assert!((x - y).abs() < 1e-9);
        }
        let low_a = enc.downsample(&f);
        let low_b = enc.downsample(&g);
        for (x, y) in low_a.iter().zip(&low_b) {
            prop_assert!((y - x - shift).abs() < 1e-12);
        }
    }

    #[test]
    fn odf_descriptor_length(seed in any::<u64>(), n in 0usize..6, nv in 1usize..4) {
        let mut rng = stream_rng(seed, 4);
        let recs: Vec<_> = (0..n).map(|_| { let f = rng.gen_range(0..4); record(&mut rng, f, 4) }).collect();
        let cfg = MomentConfig::with_vectors(nv);
        prop_assert_eq!(odf_descriptor(&recs, Some(&odf_pivots()), &cfg).unwrap().to_vec().len(), 1214 * (4 + nv));
        prop_assert_eq!(odf_descriptor(&recs, None, &cfg).unwrap().to_vec().len(), 1178 * (4 + nv));
    }
}
