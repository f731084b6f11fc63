//! The pseudo-true rotation of a structural factor pair and the
//! data-dependent rotations built from a PC fit.
//!
//! Given `(F*, B*)` the rotation `H` is the unique matrix (up to column
//! signs) for which `F0 = F* H` and `B0 = B* H'^{-1}` satisfy
//! `F0'F0/T = I` and `B0'B0` diagonal with descending entries. It is
//! computed by whitening: with `A = F*'F*/T` and `W` the eigenvectors of
//! `A^{1/2} B*'B* A^{1/2}`, `H = A^{-1/2} W` and `H'^{-1} = A^{1/2} W`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::pc::PcFit;

/// Relative eigenvalue gap below which the rotation is not identified.
pub const EIGEN_GAP_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoTrueRotation {
    #[serde(with = "crate::io::matrix_rows")]
    pub h: DMatrix<f64>,
    #[serde(with = "crate::io::matrix_rows")]
    pub f0: DMatrix<f64>,
    #[serde(with = "crate::io::matrix_rows")]
    pub b0: DMatrix<f64>,
    /// Diagonal of `B0'B0`, strictly descending.
    pub lambda: Vec<f64>,
    /// Smallest `(lambda_k - lambda_{k+1}) / lambda_k`.
    pub eigen_gap: f64,
}

impl PseudoTrueRotation {
    pub fn lambda_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.lambda)
    }
}

fn check_full_rank(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.ncols() == 0 || m.ncols() > m.nrows() {
        return Err(Error::Degenerate(format!("{what} is {}x{}", m.nrows(), m.ncols())));
    }
    if !linalg::all_finite(m) {
        return Err(Error::InvalidInput(format!("{what} contains non-finite entries")));
    }
    if linalg::reciprocal_condition(m) < 1e-12 {
        return Err(Error::Degenerate(format!("{what} does not have full column rank")));
    }
    Ok(())
}

pub fn pseudo_true_rotation(f_star: &DMatrix<f64>, b_star: &DMatrix<f64>) -> Result<PseudoTrueRotation> {
    if f_star.ncols() != b_star.ncols() {
        return Err(Error::Dimension(format!(
            "F* has {} columns but B* has {}",
            f_star.ncols(),
            b_star.ncols()
        )));
    }
    check_full_rank(f_star, "F*")?;
    check_full_rank(b_star, "B*")?;
    let tf = f_star.nrows() as f64;
    let r = f_star.ncols();

    let a = f_star.transpose() * f_star / tf;
    let a_half = linalg::sym_sqrt(&a)?;
    let a_inv_half = linalg::sym_inv_sqrt(&a)?;
    let btb = b_star.transpose() * b_star;
    let whitened = &a_half * btb * &a_half;
    let (values, w) = linalg::sym_eigen_desc(&whitened);

    let mut eigen_gap = f64::INFINITY;
    for k in 0..r.saturating_sub(1) {
        eigen_gap = eigen_gap.min((values[k] - values[k + 1]) / values[k].abs());
    }
    if r > 1 && !(eigen_gap >= EIGEN_GAP_TOL) {
        return Err(Error::NearDegenerateEigenvalues { gap: eigen_gap, tol: EIGEN_GAP_TOL });
    }
    if !(values[r - 1] > 0.0) {
        return Err(Error::Degenerate("signal eigenvalues must be positive".into()));
    }

    let mut h = &a_inv_half * &w;
    let mut h_inv_t = &a_half * &w;
    let mut f0 = f_star * &h;
    let signs = linalg::canonical_signs(&f0);
    linalg::scale_columns(&mut h, &signs);
    linalg::scale_columns(&mut h_inv_t, &signs);
    linalg::scale_columns(&mut f0, &signs);
    let b0 = b_star * h_inv_t;

    Ok(PseudoTrueRotation {
        h,
        f0,
        b0,
        lambda: values.iter().copied().collect(),
        eigen_gap,
    })
}

/// Data-dependent rotations relating a PC fit to the structural and
/// pseudo-true parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationSet {
    /// `B*'B* (F*'F_hat/T) Lambda_hat^{-1}`.
    #[serde(with = "crate::io::matrix_rows")]
    pub h_hat: DMatrix<f64>,
    /// `B*'B_hat Lambda_hat^{-1}`.
    #[serde(with = "crate::io::matrix_rows")]
    pub h_hat4: DMatrix<f64>,
    /// `B0'B_hat Lambda_hat^{-1}`.
    #[serde(with = "crate::io::matrix_rows")]
    pub h_tilde4: DMatrix<f64>,
    /// `F_hat'F*/T`.
    #[serde(with = "crate::io::matrix_rows")]
    pub q_hat: DMatrix<f64>,
    /// `F_hat'F0/T`.
    #[serde(with = "crate::io::matrix_rows")]
    pub q_tilde: DMatrix<f64>,
    /// `B0'B0 (F0'F_hat/T) Lambda_hat^{-1}`.
    #[serde(with = "crate::io::matrix_rows")]
    pub h_tilde: DMatrix<f64>,
    /// `(B0'B0)(B_hat'B0)^{-1}`.
    #[serde(with = "crate::io::matrix_rows")]
    pub h_tilde1: DMatrix<f64>,
    /// `(F0'F0)^{-1} F0'F_hat`; the transpose of `q_tilde` when `F0'F0/T = I`.
    #[serde(with = "crate::io::matrix_rows")]
    pub h_tilde2: DMatrix<f64>,
    /// `(F_hat'F0)^{-1} F_hat'F_hat`.
    #[serde(with = "crate::io::matrix_rows")]
    pub h_tilde3: DMatrix<f64>,
}

pub fn data_rotations(
    f_star: &DMatrix<f64>,
    b_star: &DMatrix<f64>,
    f0: &DMatrix<f64>,
    b0: &DMatrix<f64>,
    pc: &PcFit,
) -> Result<RotationSet> {
    let r = pc.r;
    let t = pc.t();
    let n = pc.n();
    for (m, rows, what) in [(f_star, t, "F*"), (f0, t, "F0"), (b_star, n, "B*"), (b0, n, "B0")] {
        if m.nrows() != rows || m.ncols() != r {
            return Err(Error::Dimension(format!("{what} is {}x{}, expected {rows}x{r}", m.nrows(), m.ncols())));
        }
    }
    let tf = t as f64;
    let lam_inv = DMatrix::from_diagonal(&pc.lambda_hat.map(|l| 1.0 / l));
    let f_hat = &pc.f_hat;
    let b_hat = &pc.b_hat;

    let h_hat = b_star.transpose() * b_star * (f_star.transpose() * f_hat / tf) * &lam_inv;
    let h_hat4 = b_star.transpose() * b_hat * &lam_inv;
    let h_tilde4 = b0.transpose() * b_hat * &lam_inv;
    let q_hat = f_hat.transpose() * f_star / tf;
    let q_tilde = f_hat.transpose() * f0 / tf;
    let b0tb0 = b0.transpose() * b0;
    let h_tilde = &b0tb0 * (f0.transpose() * f_hat / tf) * &lam_inv;
    let bhat_b0 = b_hat.transpose() * b0;
    let h_tilde1 = &b0tb0 * linalg::inverse(&bhat_b0, "B_hat'B0")?;
    let h_tilde2 = linalg::inverse(&(f0.transpose() * f0), "F0'F0")? * (f0.transpose() * f_hat);
    let fhat_f0 = f_hat.transpose() * f0;
    let h_tilde3 = linalg::inverse(&fhat_f0, "F_hat'F0")? * (f_hat.transpose() * f_hat);

    Ok(RotationSet { h_hat, h_hat4, h_tilde4, q_hat, q_tilde, h_tilde, h_tilde1, h_tilde2, h_tilde3 })
}

/// Reorder and sign-flip the columns of a fit to match a reference factor
/// matrix, greedily by descending absolute correlation.
pub fn align_to_reference(pc: &PcFit, f_ref: &DMatrix<f64>) -> Result<PcFit> {
    let r = pc.r;
    if f_ref.nrows() != pc.t() || f_ref.ncols() != r {
        return Err(Error::Dimension(format!(
            "reference is {}x{}, fit is {}x{r}",
            f_ref.nrows(),
            f_ref.ncols(),
            pc.t()
        )));
    }
    let corr = correlations(&pc.f_hat, f_ref);
    let mut est_used = vec![false; r];
    let mut ref_used = vec![false; r];
    // assignment[reference column] = (estimated column, sign)
    let mut assignment = vec![(0usize, 1.0f64); r];
    for _ in 0..r {
        let mut best: Option<(usize, usize, f64)> = None;
        for e in (0..r).filter(|&e| !est_used[e]) {
            for f in (0..r).filter(|&f| !ref_used[f]) {
                let c = corr[(e, f)].abs();
                if best.is_none_or(|(_, _, b)| c > b) {
                    best = Some((e, f, c));
                }
            }
        }
        let (e, f, c) = best.expect("an unassigned pair remains");
        if let Some(other) = (0..r).find(|&o| o != e && !est_used[o] && (corr[(o, f)].abs() - c).abs() < 1e-12) {
            return Err(Error::AmbiguousAlignment { first: e + 1, second: other + 1, reference: f + 1 });
        }
        est_used[e] = true;
        ref_used[f] = true;
        assignment[f] = (e, if corr[(e, f)] < 0.0 { -1.0 } else { 1.0 });
    }

    let mut f_hat = DMatrix::zeros(pc.t(), r);
    let mut b_hat = DMatrix::zeros(pc.n(), r);
    let mut lambda_hat = DVector::zeros(r);
    for (dst, &(src, sign)) in assignment.iter().enumerate() {
        f_hat.set_column(dst, &(pc.f_hat.column(src) * sign));
        b_hat.set_column(dst, &(pc.b_hat.column(src) * sign));
        lambda_hat[dst] = pc.lambda_hat[src];
    }
    Ok(PcFit {
        f_hat,
        b_hat,
        lambda_hat,
        e_hat: pc.e_hat.clone(),
        c_hat: pc.c_hat.clone(),
        r,
    })
}

/// Pearson correlations between the columns of `a` (rows) and `b` (columns).
fn correlations(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let center = |m: &DMatrix<f64>| {
        let mut c = m.clone();
        for mut col in c.column_iter_mut() {
            let mean = col.mean();
            col.add_scalar_mut(-mean);
            let norm = col.norm();
            if norm > 0.0 {
                col /= norm;
            }
        }
        c
    };
    center(a).transpose() * center(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{assemble_panel, FactorDesign, LoadingMode};
    use crate::pc::pc_fit;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn identity_when_restrictions_hold() {
        let f = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 1.0, -1.0, 1.0, 1.0, 1.0, -1.0]);
        let b = DMatrix::from_row_slice(3, 2, &[2.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let rot = pseudo_true_rotation(&f, &b).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((rot.h[(i, j)].abs() - expected).abs() < 1e-12);
            }
        }
        assert_eq!(rot.lambda.len(), 2);
        assert!((rot.lambda[0] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn recovers_design_rotation() {
        let d = FactorDesign::reference(50, 50, (1.0, 0.9), LoadingMode::NonSparse, 1);
        let p = assemble_panel(&d, &mut ChaCha20Rng::seed_from_u64(1)).unwrap();
        let rot = pseudo_true_rotation(&p.f_star, &p.b_star).unwrap();
        let h = d.h_matrix();
        for k in 0..2 {
            let s = if rot.h[(0, k)] * h[(0, k)] + rot.h[(1, k)] * h[(1, k)] < 0.0 { -1.0 } else { 1.0 };
            assert!((rot.h.column(k) * s - h.column(k)).amax() < 1e-8);
        }
    }

    #[test]
    fn rejects_equal_eigenvalues() {
        let f = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 1.0, -1.0, 1.0, 1.0, 1.0, -1.0]);
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        assert!(matches!(pseudo_true_rotation(&f, &b), Err(Error::NearDegenerateEigenvalues { .. })));
    }

    #[test]
    fn rejects_rank_deficiency() {
        let f = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        assert!(matches!(pseudo_true_rotation(&f, &b), Err(Error::Degenerate(_))));
    }

    fn noiseless_fit() -> (crate::dgp::Panel, PcFit) {
        let mut d = FactorDesign::reference(40, 30, (1.0, 0.8), LoadingMode::NonSparse, 2);
        d.sigma_e = 0.0;
        let p = assemble_panel(&d, &mut ChaCha20Rng::seed_from_u64(2)).unwrap();
        let fit = pc_fit(&p.x, 2).unwrap();
        (p, fit)
    }

    #[test]
    fn noiseless_rotations_are_signed_identities() {
        let (p, fit) = noiseless_fit();
        let set = data_rotations(&p.f_star, &p.b_star, &p.f0, &p.b0, &fit).unwrap();
        for m in [&set.h_tilde4, &set.q_tilde, &set.h_tilde] {
            for i in 0..2 {
                for j in 0..2 {
                    let expected = if i == j { 1.0 } else { 0.0 };
                    assert!((m[(i, j)].abs() - expected).abs() < 1e-8, "{m}");
                }
            }
        }
        // Structural versions equal H times the same signs.
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 2.0]);
        assert!(linalg::max_abs(&(&set.h_hat4 - &h * &set.h_tilde4)) < 1e-8);
    }

    #[test]
    fn structural_and_pseudo_true_rotations_agree() {
        let d = FactorDesign::reference(60, 50, (0.9, 0.7), LoadingMode::NonSparse, 3);
        let p = assemble_panel(&d, &mut ChaCha20Rng::seed_from_u64(3)).unwrap();
        let fit = pc_fit(&p.x, 2).unwrap();
        let s = data_rotations(&p.f_star, &p.b_star, &p.f0, &p.b0, &fit).unwrap();
        assert!(linalg::rel_frobenius(&(&p.f_star * &s.h_hat4), &(&p.f0 * &s.h_tilde4)) < 1e-10);
        assert!(linalg::rel_frobenius(&(&p.b_star * s.q_hat.transpose()), &(&p.b0 * s.q_tilde.transpose())) < 1e-10);
        assert!(linalg::rel_frobenius(&(&p.f_star * &s.h_hat), &(&p.f0 * &s.h_tilde)) < 1e-10);
    }

    #[test]
    fn alignment_flips_and_swaps() {
        let (p, fit) = noiseless_fit();
        let mut reference = fit.f_hat.clone();
        reference.column_mut(1).neg_mut();
        let aligned = align_to_reference(&fit, &reference).unwrap();
        assert_eq!(aligned.f_hat, reference);
        assert_eq!(aligned.b_hat.column(1), -fit.b_hat.column(1));

        let swapped = DMatrix::from_columns(&[fit.f_hat.column(1), fit.f_hat.column(0)]);
        let aligned = align_to_reference(&fit, &swapped).unwrap();
        assert_eq!(aligned.f_hat, swapped);
        assert_eq!(aligned.lambda_hat[0], fit.lambda_hat[1]);
        assert_eq!(aligned.lambda_hat[1], fit.lambda_hat[0]);
        assert_eq!(aligned.b_hat.column(0), fit.b_hat.column(1));
        let _ = p;
    }

    #[test]
    fn alignment_detects_ambiguity() {
        let f = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 5.0, 5.0]);
        let x = &f * DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let fit = PcFit::from_parts(&x, f.clone(), DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]), DVector::from_vec(vec![2.0, 1.0]));
        assert!(matches!(align_to_reference(&fit, &f), Err(Error::AmbiguousAlignment { .. })));
    }
}
