//! Dense linear-algebra helpers shared by the estimators.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Eigen-decomposition of a symmetric matrix with eigenvalues in descending
/// order. Equal eigenvalues keep the solver's original relative order.
pub fn sym_eigen_desc(a: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let sym = (a + a.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = DMatrix::from_fn(n, n, |row, col| eig.eigenvectors[(row, order[col])]);
    (values, vectors)
}

/// Signs that make the largest-magnitude entry of every column positive.
/// Ties go to the lowest row index.
pub fn canonical_signs(m: &DMatrix<f64>) -> Vec<f64> {
    m.column_iter()
        .map(|col| {
            let mut best = 0.0f64;
            let mut value = 0.0f64;
            for &x in col.iter() {
                if x.abs() > best {
                    best = x.abs();
                    value = x;
                }
            }
            if value < 0.0 {
                -1.0
            } else {
                1.0
            }
        })
        .collect()
}

pub fn scale_columns(m: &mut DMatrix<f64>, signs: &[f64]) {
    for (mut col, &s) in m.column_iter_mut().zip(signs) {
        if s != 1.0 {
            col *= s;
        }
    }
}

/// Threshold on negative eigenvalues: anything above `-NEG_EIG_TOL * trace`
/// is treated as rounding noise and clipped to zero.
pub const NEG_EIG_TOL: f64 = 1e-10;

fn clipped_spectrum(a: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (mut values, vectors) = sym_eigen_desc(a);
    let trace: f64 = a.diagonal().iter().map(|x| x.abs()).sum();
    for v in values.iter_mut() {
        if *v < 0.0 {
            if *v < -NEG_EIG_TOL * trace.max(f64::MIN_POSITIVE) {
                return Err(Error::Numerical(format!(
                    "matrix is not positive semi-definite (eigenvalue {v:.3e})"
                )));
            }
            *v = 0.0;
        }
    }
    Ok((values, vectors))
}

fn spectral_map(values: &DVector<f64>, vectors: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let mut scaled = vectors.clone();
    for (mut col, &v) in scaled.column_iter_mut().zip(values.iter()) {
        col *= f(v);
    }
    &scaled * vectors.transpose()
}

/// Symmetric positive semi-definite square root.
pub fn sym_sqrt(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (values, vectors) = clipped_spectrum(a)?;
    Ok(spectral_map(&values, &vectors, f64::sqrt))
}

/// Inverse of the symmetric square root; fails on a singular matrix.
pub fn sym_inv_sqrt(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (values, vectors) = clipped_spectrum(a)?;
    let top = values.iter().cloned().fold(0.0, f64::max);
    if values.iter().any(|&v| v <= top * 1e-14) {
        return Err(Error::Singular("inverse square root of a singular matrix".into()));
    }
    Ok(spectral_map(&values, &vectors, |v| 1.0 / v.sqrt()))
}

/// Smallest over largest singular value; 0 for a rank-deficient matrix.
pub fn reciprocal_condition(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let sv = a.singular_values();
    let max = sv.max();
    if max == 0.0 || !max.is_finite() {
        return 0.0;
    }
    sv.min() / max
}

pub fn inverse(a: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(Error::Dimension(format!("{what}: cannot invert a non-square matrix")));
    }
    if reciprocal_condition(a) < 1e-14 {
        return Err(Error::Singular(what.to_string()));
    }
    a.clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular(what.to_string()))
}

/// `x' A^{-1} x` through a Cholesky solve when possible, LU otherwise.
pub fn inv_quad_form(a: &DMatrix<f64>, x: &DVector<f64>, what: &str) -> Result<f64> {
    if a.nrows() != x.len() || !a.is_square() {
        return Err(Error::Dimension(format!(
            "{what}: {}x{} weight against length-{} vector",
            a.nrows(),
            a.ncols(),
            x.len()
        )));
    }
    if reciprocal_condition(a) < 1e-14 {
        return Err(Error::Singular(what.to_string()));
    }
    let sol = match a.clone().cholesky() {
        Some(ch) => ch.solve(x),
        None => a
            .clone()
            .lu()
            .solve(x)
            .ok_or_else(|| Error::Singular(what.to_string()))?,
    };
    Ok(x.dot(&sol))
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// `||a - b||_F / ||b||_F`, or the absolute difference when `b` is zero.
pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let diff = (a - b).norm();
    let scale = b.norm();
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

pub fn diag(values: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_diagonal(values)
}

pub fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|x| x.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_sorted_descending() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.0, 2.0]);
        let (vals, vecs) = sym_eigen_desc(&a);
        assert_eq!(vals.as_slice(), &[3.0, 2.0, 1.0]);
        assert!((vecs[(1, 0)].abs() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn signs_pick_largest_entry_lowest_row_on_tie() {
        let m = DMatrix::from_row_slice(3, 2, &[-1.0, 0.5, 1.0, -2.0, 0.2, 1.0]);
        assert_eq!(canonical_signs(&m), vec![-1.0, -1.0]);
    }

    #[test]
    fn sqrt_roundtrip() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let s = sym_sqrt(&a).unwrap();
        assert!(max_abs(&(&s * &s - &a)) < 1e-12);
        let si = sym_inv_sqrt(&a).unwrap();
        assert!(max_abs(&(&si * &a * &si - DMatrix::identity(2, 2))) < 1e-12);
    }

    #[test]
    fn sqrt_rejects_indefinite() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(sym_sqrt(&a), Err(Error::Numerical(_))));
    }

    #[test]
    fn quad_form_matches_inverse() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let x = DVector::from_vec(vec![1.0, -2.0]);
        let direct = (x.transpose() * a.clone().try_inverse().unwrap() * &x)[0];
        assert!((inv_quad_form(&a, &x, "w").unwrap() - direct).abs() < 1e-12);
    }
}
