/// Central-difference gradient check. Returns the largest coordinate-wise
/// relative error `|a - n| / max(|a|, |n|, 1e-8)` between the analytic
/// gradient `a` and the numerical estimate `n`.
pub fn grad_check<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    analytic: &[f64],
    point: &[f64],
    step: f64,
) -> f64 {
    assert!(step > 0.0, "finite-difference step must be positive");
    assert_eq!(analytic.len(), point.len(), "gradient and point lengths differ");
    let mut x = point.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + step;
        let fp = f(&x);
        x[i] = orig - step;
        let fm = f(&x);
        x[i] = orig;
        let numeric = (fp - fm) / (2.0 * step);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    worst
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}
