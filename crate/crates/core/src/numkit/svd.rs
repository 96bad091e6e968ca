use super::matrix::{dot, Matrix};

/// Thin SVD `mat = U diag(s) Vᵀ` with `r = min(d, N)` columns in `U` and `V`.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub left_vectors: Matrix,
    pub singular_values: Vec<f64>,
    pub right_vectors: Matrix,
}

impl ThinSvd {
    pub fn rank(&self, rel_tol: f64) -> usize {
        let top = self.singular_values.first().copied().unwrap_or(0.0);
        self.singular_values
            .iter()
            .filter(|&&s| s > rel_tol * top && s > 0.0)
            .count()
    }

    pub fn reconstruct(&self) -> Matrix {
        let d = self.left_vectors.rows();
        let n = self.right_vectors.rows();
        let mut out = Matrix::zeros(d, n);
        for (k, &s) in self.singular_values.iter().enumerate() {
            if s == 0.0 {
                continue;
            }
            for i in 0..d {
                let a = s * self.left_vectors[(i, k)];
                for j in 0..n {
                    out[(i, j)] += a * self.right_vectors[(j, k)];
                }
            }
        }
        out
    }
}

const MAX_SWEEPS: usize = 80;

/// One-sided (Hestenes) Jacobi SVD. Columns are rotated pairwise until they
/// are mutually orthogonal, which implicitly diagonalises the Gram matrix
/// `matᵀ mat`; it is accurate and cheap when the short side is small.
pub fn thin_svd(mat: &Matrix) -> ThinSvd {
    if mat.cols() > mat.rows() {
        let t = thin_svd(&mat.transpose());
        return ThinSvd {
            left_vectors: t.right_vectors,
            singular_values: t.singular_values,
            right_vectors: t.left_vectors,
        };
    }
    let d = mat.rows();
    let n = mat.cols();
    // work on columns stored contiguously
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| mat.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = cols.iter().map(|c| dot(c, c).sqrt()).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
    let top = norms.iter().copied().fold(0.0, f64::max);
    let cutoff = top * 1e-13 * (d.max(n) as f64);

    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    let mut v_cols = Vec::with_capacity(n);
    let mut missing = Vec::new();
    for (slot, &j) in order.iter().enumerate() {
        let s = norms[j];
        v_cols.push(v[j].clone());
        if s > cutoff && s > 0.0 {
            values.push(s);
            u_cols.push(cols[j].iter().map(|x| x / s).collect());
        } else {
            values.push(0.0);
            u_cols.push(vec![0.0; d]);
            missing.push(slot);
        }
    }
    complete_basis(&mut u_cols, &missing);

    ThinSvd {
        left_vectors: Matrix::from_columns(d, &u_cols).expect("column length is d"),
        singular_values: values,
        right_vectors: Matrix::from_columns(n, &v_cols).expect("column length is n"),
    }
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let a = &mut lo[p];
    let b = &mut hi[0];
    for (x, y) in a.iter_mut().zip(b.iter_mut()) {
        let xp = *x;
        let yq = *y;
        *x = c * xp - s * yq;
        *y = s * xp + c * yq;
    }
}

/// Fills the listed (zero) columns with unit vectors orthogonal to all others.
fn complete_basis(cols: &mut [Vec<f64>], missing: &[usize]) {
    if missing.is_empty() {
        return;
    }
    let d = cols[0].len();
    let mut candidate = 0;
    for &slot in missing {
        while candidate < d {
            let mut e = vec![0.0; d];
            e[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for (j, c) in cols.iter().enumerate() {
                    if j == slot {
                        continue;
                    }
                    let proj = dot(&e, c);
                    if proj != 0.0 {
                        for (ei, ci) in e.iter_mut().zip(c) {
                            *ei -= proj * ci;
                        }
                    }
                }
            }
            let norm = dot(&e, &e).sqrt();
            if norm > 1e-8 {
                cols[slot] = e.into_iter().map(|x| x / norm).collect();
                break;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn orthonormality_error(m: &Matrix) -> f64 {
        let g = m.transpose().matmul(m).unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..g.rows() {
            for j in 0..g.cols() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g[(i, j)] - target).abs());
            }
        }
        worst
    }

    #[test]
    fn identity() {
        let s = thin_svd(&Matrix::identity(3));
        assert_eq!(s.singular_values, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn rank_one_outer_product() {
        // |u| = 2, |v| = 3
        let u = [2.0, 0.0, 0.0, 0.0];
        let v = [0.0, 3.0 / 2.0_f64.sqrt(), 3.0 / 2.0_f64.sqrt()];
        let mut m = Matrix::zeros(4, 3);
        for i in 0..4 {
            for j in 0..3 {
                m[(i, j)] = u[i] * v[j];
            }
        }
        let s = thin_svd(&m);
        assert!((s.singular_values[0] - 6.0).abs() < 1e-12);
        assert!(s.singular_values[1..].iter().all(|&x| x == 0.0));
        assert!(orthonormality_error(&s.left_vectors) < 1e-8);
        assert!((s.reconstruct().as_slice().iter().zip(m.as_slice()))
            .all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn zero_matrix_still_has_orthonormal_factors() {
        let s = thin_svd(&Matrix::zeros(5, 3));
        assert!(s.singular_values.iter().all(|&x| x == 0.0));
        assert!(orthonormality_error(&s.left_vectors) < 1e-12);
    }

    #[test]
    fn wide_matrix_goes_through_transpose() {
        let m = Matrix::from_rows(&[[1.0, 2.0, 3.0, 4.0], [0.0, -1.0, 2.0, 0.5]]).unwrap();
        let s = thin_svd(&m);
        assert_eq!(s.left_vectors.rows(), 2);
        assert_eq!(s.right_vectors.rows(), 4);
        let r = s.reconstruct();
        for (a, b) in r.as_slice().iter().zip(m.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
