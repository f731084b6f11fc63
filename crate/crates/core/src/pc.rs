//! Principal-component estimation of an approximate factor model.
//!
//! `F_hat` is `sqrt(T)` times the top-`r` eigenvectors of `XX'/T`,
//! `B_hat = X'F_hat/T`, so that `F_hat'F_hat/T = I` and
//! `B_hat'B_hat = diag(lambda_hat)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Version tag of the column sign convention (largest-magnitude entry of
/// every factor column positive, lowest row on ties).
pub const SIGN_CONVENTION: &str = "max-abs-positive/v1";

#[derive(Debug, Clone, PartialEq)]
pub struct PcFit {
    pub f_hat: DMatrix<f64>,
    pub b_hat: DMatrix<f64>,
    /// Eigenvalues of `XX'/T`, descending (reordered consistently with the
    /// columns after [`crate::rotation::align_to_reference`]).
    pub lambda_hat: DVector<f64>,
    pub e_hat: DMatrix<f64>,
    pub c_hat: DMatrix<f64>,
    pub r: usize,
}

impl PcFit {
    pub fn t(&self) -> usize {
        self.f_hat.nrows()
    }

    pub fn n(&self) -> usize {
        self.b_hat.nrows()
    }

    /// Reassemble a fit from factors and loadings of the same panel.
    pub(crate) fn from_parts(x: &DMatrix<f64>, f_hat: DMatrix<f64>, b_hat: DMatrix<f64>, lambda_hat: DVector<f64>) -> Self {
        let c_hat = &f_hat * b_hat.transpose();
        let e_hat = x - &c_hat;
        let r = f_hat.ncols();
        PcFit { f_hat, b_hat, lambda_hat, e_hat, c_hat, r }
    }
}

/// Which Gram matrix to decompose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum GramRoute {
    /// `XX'/T` when `T <= N`, `X'X/T` otherwise.
    #[default]
    Auto,
    /// Always the `T x T` matrix `XX'/T`.
    Time,
    /// Always the `N x N` matrix `X'X/T`, mapped back through `X`.
    Cross,
}

pub fn pc_fit(x: &DMatrix<f64>, r: usize) -> Result<PcFit> {
    pc_fit_with(x, r, GramRoute::Auto)
}

pub fn pc_fit_with(x: &DMatrix<f64>, r: usize, route: GramRoute) -> Result<PcFit> {
    let (t, n) = x.shape();
    if r == 0 || r > t.min(n) {
        return Err(Error::Dimension(format!("r = {r} must lie in 1..={}", t.min(n))));
    }
    if !linalg::all_finite(x) {
        return Err(Error::InvalidInput("panel contains non-finite entries".into()));
    }
    let tf = t as f64;
    let use_time = match route {
        GramRoute::Auto => t <= n,
        GramRoute::Time => true,
        GramRoute::Cross => false,
    };

    let (values, mut f_hat) = if use_time {
        let gram = x * x.transpose() / tf;
        let (values, vectors) = linalg::sym_eigen_desc(&gram);
        let f_hat = vectors.columns(0, r) * tf.sqrt();
        (values, f_hat)
    } else {
        let gram = x.transpose() * x / tf;
        let (values, vectors) = linalg::sym_eigen_desc(&gram);
        // XX'/T (X v) = lambda (X v) and ||X v||^2 = T lambda.
        let mut f_hat = x * vectors.columns(0, r);
        for k in 0..r {
            let lam = values[k];
            if lam > 0.0 {
                f_hat.column_mut(k).scale_mut(1.0 / lam.sqrt());
            }
        }
        (values, f_hat)
    };

    let largest = values[0];
    let smallest = values[r - 1];
    if !(smallest > f64::EPSILON * largest) || largest <= 0.0 {
        return Err(Error::RankDeficientSignal { smallest, largest });
    }
    for k in 0..r {
        let next = values.get(k + 1).copied().unwrap_or(f64::NEG_INFINITY);
        if values[k] - next <= f64::EPSILON * largest * 8.0 {
            log::warn!("eigenvalue {} of XX'/T is tied with its successor; factor {} is not identified", k + 1, k + 1);
        }
    }

    let signs = linalg::canonical_signs(&f_hat);
    linalg::scale_columns(&mut f_hat, &signs);
    let b_hat = x.transpose() * &f_hat / tf;
    let lambda_hat = DVector::from_iterator(r, values.iter().take(r).copied());
    Ok(PcFit::from_parts(x, f_hat, b_hat, lambda_hat))
}

/// `||X - F B'||_F^2`.
pub fn objective_value(x: &DMatrix<f64>, f: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if f.nrows() != x.nrows() || b.nrows() != x.ncols() || f.ncols() != b.ncols() {
        return Err(Error::Dimension(format!(
            "X is {}x{}, F is {}x{}, B is {}x{}",
            x.nrows(),
            x.ncols(),
            f.nrows(),
            f.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    Ok((x - f * b.transpose()).norm_squared())
}

/// Worst violations of the fit invariants, used by tests and the CLI.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// `max |F'F/T - I|`.
    pub normalization: f64,
    /// Largest off-diagonal of `B'B` relative to `sqrt(lambda_i lambda_j)`.
    pub diagonality: f64,
    /// Largest relative gap between `diag(B'B)` and `lambda_hat`.
    pub eigenvalue_match: f64,
    /// `max |B_hat - X'F_hat/T|`.
    pub loading_identity: f64,
    /// `||E'F||_F / ||X||_F`.
    pub residual_orthogonality: f64,
    /// Relative error of `sum(lambda) + ||E||^2/T = tr(XX')/T`.
    pub energy_split: f64,
}

impl FitDiagnostics {
    pub fn compute(x: &DMatrix<f64>, fit: &PcFit) -> Self {
        let tf = fit.t() as f64;
        let r = fit.r;
        let ftf = fit.f_hat.transpose() * &fit.f_hat / tf;
        let normalization = linalg::max_abs(&(ftf - DMatrix::identity(r, r)));
        let btb = fit.b_hat.transpose() * &fit.b_hat;
        let mut diagonality = 0.0f64;
        let mut eigenvalue_match = 0.0f64;
        for i in 0..r {
            eigenvalue_match = eigenvalue_match.max((btb[(i, i)] - fit.lambda_hat[i]).abs() / fit.lambda_hat[i]);
            for j in 0..r {
                if i != j {
                    let s = (fit.lambda_hat[i] * fit.lambda_hat[j]).sqrt();
                    diagonality = diagonality.max(btb[(i, j)].abs() / s);
                }
            }
        }
        let loading_identity = linalg::max_abs(&(&fit.b_hat - x.transpose() * &fit.f_hat / tf));
        let residual_orthogonality = (fit.e_hat.transpose() * &fit.f_hat).norm() / x.norm().max(f64::MIN_POSITIVE);
        let total = x.norm_squared() / tf;
        let split = fit.lambda_hat.sum() + fit.e_hat.norm_squared() / tf;
        let energy_split = (split - total).abs() / total.max(f64::MIN_POSITIVE);
        FitDiagnostics { normalization, diagonality, eigenvalue_match, loading_identity, residual_orthogonality, energy_split }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{assemble_panel, FactorDesign, LoadingMode};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn panel(n: usize, t: usize, sigma: f64, seed: u64) -> crate::dgp::Panel {
        let mut d = FactorDesign::reference(n, t, (1.0, 0.8), LoadingMode::NonSparse, seed);
        d.sigma_e = sigma;
        assemble_panel(&d, &mut ChaCha20Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn noiseless_recovers_pseudo_true_pair() {
        let p = panel(40, 30, 0.0, 1);
        let fit = pc_fit(&p.x, 2).unwrap();
        let lam = p.b0.transpose() * &p.b0;
        for k in 0..2 {
            let s = if fit.f_hat.column(k).dot(&p.f0.column(k)) < 0.0 { -1.0 } else { 1.0 };
            assert!((fit.f_hat.column(k) * s - p.f0.column(k)).amax() < 1e-8);
            assert!((fit.b_hat.column(k) * s - p.b0.column(k)).amax() < 1e-8);
            assert!((fit.lambda_hat[k] - lam[(k, k)]).abs() < 1e-8 * lam[(k, k)]);
        }
    }

    #[test]
    fn hand_case_constant_column() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        let fit = pc_fit(&x, 1).unwrap();
        // XX'/3 = ones(3,3)/3 has eigenvalue 1 with eigenvector ones/sqrt(3).
        assert!((fit.lambda_hat[0] - 1.0).abs() < 1e-12);
        for t in 0..3 {
            assert!((fit.f_hat[(t, 0)] - 1.0).abs() < 1e-12);
        }
        assert!((fit.b_hat[(0, 0)] - 1.0).abs() < 1e-12);
        assert!(fit.b_hat[(1, 0)].abs() < 1e-12);
    }

    #[test]
    fn invariants_hold_on_noisy_panel() {
        let p = panel(80, 60, 0.7, 2);
        let fit = pc_fit(&p.x, 2).unwrap();
        let d = FitDiagnostics::compute(&p.x, &fit);
        assert!(d.normalization < 1e-10, "{d:?}");
        assert!(d.diagonality < 1e-10, "{d:?}");
        assert!(d.eigenvalue_match < 1e-10, "{d:?}");
        assert_eq!(d.loading_identity, 0.0);
        assert!(d.residual_orthogonality < 1e-8, "{d:?}");
        assert!(d.energy_split < 1e-8, "{d:?}");
        assert!(fit.lambda_hat[0] >= fit.lambda_hat[1] && fit.lambda_hat[1] > 0.0);
    }

    #[test]
    fn routes_agree() {
        for (n, t) in [(90, 40), (40, 90)] {
            let p = panel(n, t, 0.7, 3);
            let a = pc_fit_with(&p.x, 2, GramRoute::Time).unwrap();
            let b = pc_fit_with(&p.x, 2, GramRoute::Cross).unwrap();
            assert!(linalg::max_abs(&(&a.f_hat - &b.f_hat)) < 1e-10);
            assert!(linalg::max_abs(&(&a.b_hat - &b.b_hat)) < 1e-10);
            assert!((&a.lambda_hat - &b.lambda_hat).amax() < 1e-10 * a.lambda_hat[0]);
        }
    }

    #[test]
    fn weyl_sandwich() {
        let p = panel(100, 100, 0.5f64.sqrt(), 4);
        let fit = pc_fit(&p.x, 2).unwrap();
        let lam = p.b0.transpose() * &p.b0;
        let ee = &p.e * p.e.transpose() / 100.0;
        let s1 = linalg::sym_eigen_desc(&ee).0[0].sqrt();
        for k in 0..2 {
            let root = lam[(k, k)].sqrt();
            assert!(fit.lambda_hat[k] >= (root - s1).powi(2) - 1e-9);
            assert!(fit.lambda_hat[k] <= (root + s1).powi(2) + 1e-9);
        }
    }

    #[test]
    fn deterministic() {
        let p = panel(50, 50, 0.7, 5);
        assert_eq!(pc_fit(&p.x, 2).unwrap(), pc_fit(&p.x, 2).unwrap());
    }

    #[test]
    fn errors() {
        let x = DMatrix::from_element(3, 2, 1.0);
        assert!(matches!(pc_fit(&x, 0), Err(Error::Dimension(_))));
        assert!(matches!(pc_fit(&x, 3), Err(Error::Dimension(_))));
        assert!(matches!(pc_fit(&x, 2), Err(Error::RankDeficientSignal { .. })));
        let mut y = DMatrix::from_element(3, 2, 1.0);
        y[(0, 0)] = f64::NAN;
        assert!(matches!(pc_fit(&y, 1), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn objective_values() {
        let p = panel(30, 20, 0.7, 6);
        let fit = pc_fit(&p.x, 2).unwrap();
        let obj = objective_value(&p.x, &fit.f_hat, &fit.b_hat).unwrap();
        assert!((obj - fit.e_hat.norm_squared()).abs() < 1e-10 * obj);
        let zero = DMatrix::zeros(30, 2);
        assert_eq!(objective_value(&p.x, &fit.f_hat, &zero).unwrap(), p.x.norm_squared());
        assert!(objective_value(&p.x, &fit.b_hat, &fit.f_hat).is_err());
    }

    #[test]
    fn objective_is_locally_minimal() {
        use rand::Rng;
        let p = panel(30, 25, 0.7, 7);
        let fit = pc_fit(&p.x, 2).unwrap();
        let best = objective_value(&p.x, &fit.f_hat, &fit.b_hat).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(99);
        for _ in 0..100 {
            let rot = DMatrix::from_fn(2, 2, |i, j| if i == j { 1.0 } else { 0.0 } + rng.random_range(-0.3..0.3));
            let rot_inv_t = rot.clone().try_inverse().unwrap().transpose();
            let delta = DMatrix::from_fn(30, 2, |_, _| rng.random_range(-0.05..0.05));
            let f = &fit.f_hat * &rot;
            let b = &fit.b_hat * rot_inv_t + delta;
            assert!(objective_value(&p.x, &f, &b).unwrap() >= best - 1e-9 * best);
        }
    }
}
