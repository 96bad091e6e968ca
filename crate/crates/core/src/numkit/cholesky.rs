use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Lower-triangular `L` with `L Lᵀ = spd` and a strictly positive diagonal.
pub fn cholesky_lower(spd: &Matrix) -> Result<Matrix> {
    let n = spd.rows();
    if spd.cols() != n {
        return Err(Error::dim("cholesky_lower (square)", n, spd.cols()));
    }
    for i in 0..n {
        for j in 0..i {
            let (a, b) = (spd[(i, j)], spd[(j, i)]);
            if (a - b).abs() > 1e-9 * (1.0 + a.abs().max(b.abs())) {
                return Err(Error::invalid(format!(
                    "cholesky_lower input is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut diag = spd[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if !(diag > 0.0) {
            return Err(Error::NotPositiveDefinite {
                index: j,
                value: diag,
            });
        }
        let ljj = diag.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = spd[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}
