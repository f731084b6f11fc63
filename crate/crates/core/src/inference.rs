//! Asymptotic inference for PC estimates.
//!
//! Each statistic takes a covariance object that is either estimated from
//! the fit ([`CovMode::Feasible`]) or supplied from known population
//! quantities ([`CovMode::Oracle`]). The mode travels with the object and
//! is never inferred.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::format_f64;
use crate::linalg;
use crate::pc::PcFit;
use crate::quantile::two_sided_pvalue;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CovMode {
    Feasible,
    Oracle,
}

/// Asymptotic covariance of a factor estimate at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorCov {
    /// `Gamma_t`.
    pub gamma_t: DMatrix<f64>,
    /// `(B'B)^{1/2}`: estimated from `B_hat` or taken from `B0`.
    pub scale: DMatrix<f64>,
    pub t: usize,
    pub mode: CovMode,
}

impl FactorCov {
    /// Population covariance `gamma` with scale `(B0'B0)^{1/2}`.
    pub fn oracle(gamma_t: DMatrix<f64>, b0: &DMatrix<f64>, t: usize) -> Result<Self> {
        let scale = linalg::sym_sqrt(&(b0.transpose() * b0))?;
        Ok(FactorCov { gamma_t, scale, t, mode: CovMode::Oracle })
    }

    pub fn scale_inverse(&self) -> Result<DMatrix<f64>> {
        linalg::inverse(&self.scale, "factor scale")
    }
}

/// HAC covariance of a loading estimate for unit `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadingCov {
    pub phi_i: DMatrix<f64>,
    pub bandwidth: usize,
    pub i: usize,
    pub mode: CovMode,
}

impl LoadingCov {
    pub fn oracle(phi_i: DMatrix<f64>, i: usize) -> Self {
        LoadingCov { phi_i, bandwidth: 0, i, mode: CovMode::Oracle }
    }
}

fn check_index(what: &'static str, index: usize, len: usize) -> Result<usize> {
    if index == 0 || index > len {
        Err(Error::OutOfRange { what, index, len })
    } else {
        Ok(index - 1)
    }
}

/// `S^{-1} (sum_i b_i e_i^2 b_i') S^{-1}` for one row of residuals.
pub fn gamma_sandwich(loadings: &DMatrix<f64>, scale_inv: &DMatrix<f64>, resid_row: &[f64]) -> DMatrix<f64> {
    let r = loadings.ncols();
    let mut omega = DMatrix::zeros(r, r);
    for (i, &e) in resid_row.iter().enumerate() {
        let b = loadings.row(i).transpose();
        omega.syger(e * e, &b, &b, 1.0);
    }
    omega.fill_upper_triangle_with_lower_triangle();
    let g = scale_inv * omega * scale_inv;
    (&g + g.transpose()) * 0.5
}

/// Feasible `Gamma_hat_t` (1-based `t`) with cross-sectionally independent,
/// heteroskedastic errors.
pub fn gamma_hat(pc: &PcFit, t: usize) -> Result<FactorCov> {
    let row = check_index("time index", t, pc.t())?;
    // B_hat'B_hat is diagonal by construction.
    let scale = DMatrix::from_diagonal(&pc.lambda_hat.map(f64::sqrt));
    let scale_inv = DMatrix::from_diagonal(&pc.lambda_hat.map(|l| 1.0 / l.sqrt()));
    let resid: Vec<f64> = pc.e_hat.row(row).iter().copied().collect();
    let gamma_t = gamma_sandwich(&pc.b_hat, &scale_inv, &resid);
    Ok(FactorCov { gamma_t, scale, t, mode: CovMode::Feasible })
}

/// Newey–West bandwidth `floor(4 (T/100)^{2/9})`.
pub fn default_bandwidth(t: usize) -> usize {
    (4.0 * (t as f64 / 100.0).powf(2.0 / 9.0)).floor() as usize
}

/// Bartlett-weighted long-run covariance of the rows of `scores`, each
/// autocovariance normalized by the full sample length.
pub fn bartlett_hac(scores: &DMatrix<f64>, bandwidth: usize) -> Result<DMatrix<f64>> {
    let (t, r) = scores.shape();
    if bandwidth >= t {
        return Err(Error::Bandwidth { bandwidth, t });
    }
    let tf = t as f64;
    let mut phi = scores.transpose() * scores / tf;
    for lag in 1..=bandwidth {
        let lead = scores.rows(lag, t - lag);
        let lagged = scores.rows(0, t - lag);
        let v = lead.transpose() * lagged / tf;
        let w = 1.0 - lag as f64 / (bandwidth as f64 + 1.0);
        phi += (&v + v.transpose()) * w;
    }
    debug_assert_eq!(phi.shape(), (r, r));
    Ok((&phi + phi.transpose()) * 0.5)
}

/// Feasible HAC `Phi_hat_i` (1-based `i`) from the scores `f_hat_t e_hat_{t,i}`.
pub fn phi_hat(pc: &PcFit, i: usize, bandwidth: usize) -> Result<LoadingCov> {
    let col = check_index("unit index", i, pc.n())?;
    let mut scores = pc.f_hat.clone();
    for (t, mut row) in scores.row_iter_mut().enumerate() {
        row *= pc.e_hat[(t, col)];
    }
    let phi_i = bartlett_hac(&scores, bandwidth)?;
    Ok(LoadingCov { phi_i, bandwidth, i, mode: CovMode::Feasible })
}

fn inverse_diagonal(m: &DMatrix<f64>, k: usize, what: &str) -> Result<f64> {
    let inv = linalg::inverse(m, what)?;
    let v = inv[(k, k)];
    if v > 0.0 {
        Ok(v)
    } else {
        Err(Error::Numerical(format!("{what}: non-positive diagonal of the inverse")))
    }
}

/// `scale_kk (f_hat_tk - f_ref) sqrt((Gamma_t^{-1})_kk)`, 1-based `t`, `k`.
pub fn z_factor(pc: &PcFit, t: usize, k: usize, f_ref: f64, cov: &FactorCov) -> Result<f64> {
    let row = check_index("time index", t, pc.t())?;
    let kk = check_index("factor index", k, pc.r)?;
    let g = inverse_diagonal(&cov.gamma_t, kk, "Gamma_t")?;
    Ok(cov.scale[(kk, kk)] * (pc.f_hat[(row, kk)] - f_ref) * g.sqrt())
}

/// `sqrt(T (Phi_i^{-1})_kk) (b_hat_ik - b_ref)`, 1-based `i`, `k`.
pub fn z_loading(pc: &PcFit, i: usize, k: usize, b_ref: f64, cov: &LoadingCov) -> Result<f64> {
    let row = check_index("unit index", i, pc.n())?;
    let kk = check_index("factor index", k, pc.r)?;
    let p = inverse_diagonal(&cov.phi_i, kk, "Phi_i")?;
    Ok((pc.t() as f64 * p).sqrt() * (pc.b_hat[(row, kk)] - b_ref))
}

/// `V_hat_{t,i} + U_hat_{t,i}`: the variance of the common-component estimate.
pub fn common_variance(pc: &PcFit, t: usize, i: usize, gcov: &FactorCov, lcov: &LoadingCov) -> Result<f64> {
    let row = check_index("time index", t, pc.t())?;
    let col = check_index("unit index", i, pc.n())?;
    let s_inv = gcov.scale_inverse()?;
    let b = pc.b_hat.row(col).transpose();
    let sb = &s_inv * &b;
    let v = (sb.transpose() * &gcov.gamma_t * &sb)[0];
    let f = pc.f_hat.row(row).transpose();
    let u = (f.transpose() * &lcov.phi_i * &f)[0] / pc.t() as f64;
    Ok(v + u)
}

/// Oracle variance `sigma_e^2 [b0_i'(B0'B0)^{-1} b0_i + f0_t'f0_t / T]` under
/// i.i.d. errors.
pub fn common_variance_oracle(f0: &DMatrix<f64>, b0: &DMatrix<f64>, sigma_e2: f64, t: usize, i: usize) -> Result<f64> {
    let row = check_index("time index", t, f0.nrows())?;
    let col = check_index("unit index", i, b0.nrows())?;
    let b = b0.row(col).transpose();
    let lb = linalg::inv_quad_form(&(b0.transpose() * b0), &b, "B0'B0")?;
    let f = f0.row(row);
    Ok(sigma_e2 * (lb + f.norm_squared() / f0.nrows() as f64))
}

pub fn z_with_variance(estimate: f64, reference: f64, variance: f64) -> Result<f64> {
    if !(variance > 0.0) || !variance.is_finite() {
        return Err(Error::Numerical(format!("variance {variance} is not positive")));
    }
    Ok((estimate - reference) / variance.sqrt())
}

/// `(c_hat_ti - c_ref) / sqrt(V_hat + U_hat)`.
pub fn z_common(pc: &PcFit, t: usize, i: usize, c_ref: f64, gcov: &FactorCov, lcov: &LoadingCov) -> Result<f64> {
    let var = common_variance(pc, t, i, gcov, lcov)?;
    z_with_variance(pc.c_hat[(t - 1, i - 1)], c_ref, var)
}

/// How a joint deviation is scaled before the quadratic form.
#[derive(Debug, Clone, PartialEq)]
pub enum Q2Form {
    /// `T delta' W^{-1} delta` (loadings).
    Loading { t: usize },
    /// `delta' S W^{-1} S delta` with `S = (B0'B0)^{1/2}` (factors).
    Factor { scale: DMatrix<f64> },
}

pub fn q2_joint(delta: &DVector<f64>, weight: &DMatrix<f64>, form: &Q2Form) -> Result<f64> {
    let q = match form {
        Q2Form::Loading { t } => *t as f64 * linalg::inv_quad_form(weight, delta, "Q2 weight")?,
        Q2Form::Factor { scale } => {
            if scale.ncols() != delta.len() {
                return Err(Error::Dimension("scale and deviation disagree".into()));
            }
            linalg::inv_quad_form(weight, &(scale * delta), "Q2 weight")?
        }
    };
    Ok(q.max(0.0))
}

/// One line of the long-format statistics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatRow {
    pub index: usize,
    pub statistic: String,
    pub value: f64,
    pub pvalue: f64,
}

/// Feasible `z_f` for every `(t, k)` and `z_b` for every `(i, k)`. References
/// default to zero when absent.
pub fn batch_statistics(pc: &PcFit, f_ref: Option<&DMatrix<f64>>, b_ref: Option<&DMatrix<f64>>, bandwidth: usize) -> Result<Vec<StatRow>> {
    for (m, rows, what) in [(f_ref, pc.t(), "factor reference"), (b_ref, pc.n(), "loading reference")] {
        if let Some(m) = m {
            if m.shape() != (rows, pc.r) {
                return Err(Error::Dimension(format!("{what} is {}x{}, expected {rows}x{}", m.nrows(), m.ncols(), pc.r)));
            }
        }
    }
    let mut rows = Vec::with_capacity((pc.t() + pc.n()) * pc.r);
    for t in 1..=pc.t() {
        let cov = gamma_hat(pc, t)?;
        for k in 1..=pc.r {
            let reference = f_ref.map_or(0.0, |m| m[(t - 1, k - 1)]);
            let z = z_factor(pc, t, k, reference, &cov)?;
            rows.push(StatRow { index: t, statistic: format!("z_f{k}"), value: z, pvalue: two_sided_pvalue(z) });
        }
    }
    for i in 1..=pc.n() {
        let cov = phi_hat(pc, i, bandwidth)?;
        for k in 1..=pc.r {
            let reference = b_ref.map_or(0.0, |m| m[(i - 1, k - 1)]);
            let z = z_loading(pc, i, k, reference, &cov)?;
            rows.push(StatRow { index: i, statistic: format!("z_b{k}"), value: z, pvalue: two_sided_pvalue(z) });
        }
    }
    Ok(rows)
}

pub fn stat_rows_to_csv(rows: &[StatRow]) -> String {
    let mut out = String::from("index,statistic,value,pvalue\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.index, r.statistic, format_f64(r.value), format_f64(r.pvalue)));
    }
    out
}
