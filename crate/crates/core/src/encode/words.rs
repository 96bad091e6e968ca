use crate::error::{Error, Result};
use crate::numkit::{Dictionary, GmmModel};

/// Hard assignment to the nearest visual word (lowest index wins ties).
pub fn bow_encode(x: &[f64], dict: &Dictionary) -> Result<Vec<f64>> {
    if x.len() != dict.dim() {
        return Err(Error::dim("bow_encode descriptor", dict.dim(), x.len()));
    }
    let mut out = vec![0.0; dict.len()];
    out[dict.nearest(x).0] = 1.0;
    Ok(out)
}

/// Fisher vector of one descriptor: per component
/// `p(k|x)/sqrt(w_k) * [φ_k; φ'_k / sqrt 2]`, components concatenated.
pub fn fv_encode(x: &[f64], gmm: &GmmModel) -> Result<Vec<f64>> {
    let d = gmm.dim();
    let (first, second) = fv_encode_split(x, gmm)?;
    let mut out = Vec::with_capacity(2 * first.len());
    for k in 0..gmm.components() {
        out.extend_from_slice(&first[k * d..(k + 1) * d]);
        out.extend_from_slice(&second[k * d..(k + 1) * d]);
    }
    Ok(out)
}

/// First- and second-order Fisher blocks as two separate `K·D` vectors, the
/// form used when each order feeds its own stream.
pub fn fv_encode_split(x: &[f64], gmm: &GmmModel) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = gmm.dim();
    if x.len() != d {
        return Err(Error::dim("fv_encode descriptor", d, x.len()));
    }
    let post = gmm.posteriors(x);
    let k = gmm.components();
    let mut first = Vec::with_capacity(k * d);
    let mut second = Vec::with_capacity(k * d);
    for c in 0..k {
        let scale = post[c] / gmm.weights()[c].sqrt();
        for ((&xi, &m), &s) in x.iter().zip(gmm.means().row(c)).zip(gmm.stds().row(c)) {
            let phi = (xi - m) / s;
            first.push(scale * phi);
            second.push(scale * (phi * phi - 1.0) / std::f64::consts::SQRT_2);
        }
    }
    Ok((first, second))
}
