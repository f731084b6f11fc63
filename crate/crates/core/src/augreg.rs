//! Factor-augmented regression `y_{t+h} = f_t'gamma + w_t'beta + eps_{t+h}`
//! on estimated factors, with sandwich covariance and h-step forecasts.
//!
//! Series are stored by regressor time: `y[t]` holds `y_{t+h}` for
//! `t = 1..T`. Only the first `T - h` pairs are observable at time `T`, so
//! they form the estimation sample; `y_{T+h}` is the forecast target.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::FactorCov;
use crate::io::format_f64;
use crate::linalg;
use crate::quantile::{two_sided_critical, two_sided_pvalue};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SandwichMode {
    /// `n^{-1} sum z_t eps_{t+h}^2 z_t'`.
    #[default]
    Heteroskedastic,
    /// `sigma_eps^2 n^{-1} Z'Z`.
    Homoskedastic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugRegFit {
    /// `(gamma', beta')'`.
    pub delta_hat: Vec<f64>,
    /// Asymptotic covariance of `sqrt(n) (delta_hat - delta)`.
    #[serde(with = "crate::io::matrix_rows")]
    pub sigma_delta_hat: DMatrix<f64>,
    pub residuals: Vec<f64>,
    /// Time label `t + h` of each residual.
    pub residual_times: Vec<usize>,
    /// `n^{-1} sum eps_hat^2`.
    pub sigma_eps2_hat: f64,
    pub h: usize,
    /// Number of factor regressors; the remaining coefficients are controls.
    pub r: usize,
    /// Estimation sample size `n = T - h`.
    pub n_obs: usize,
    pub mode: SandwichMode,
    /// `(n^{-1} Z'Z)^{-1}`.
    #[serde(with = "crate::io::matrix_rows")]
    pub ztz_inv: DMatrix<f64>,
}

impl AugRegFit {
    pub fn gamma_hat(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.delta_hat[..self.r])
    }

    pub fn beta_hat(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.delta_hat[self.r..])
    }

    pub fn delta(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.delta_hat)
    }

    pub fn standard_errors(&self) -> Vec<f64> {
        let n = self.n_obs as f64;
        self.sigma_delta_hat.diagonal().iter().map(|v| (v.max(0.0) / n).sqrt()).collect()
    }

    /// Block of the covariance belonging to the factor coefficients.
    pub fn sigma_gamma_hat(&self) -> DMatrix<f64> {
        self.sigma_delta_hat.view((0, 0), (self.r, self.r)).clone_owned()
    }
}

fn design_matrix(f: &DMatrix<f64>, w: &DMatrix<f64>, rows: usize) -> DMatrix<f64> {
    let r = f.ncols();
    let l = w.ncols();
    let mut z = DMatrix::zeros(rows, r + l);
    z.view_mut((0, 0), (rows, r)).copy_from(&f.rows(0, rows));
    if l > 0 {
        z.view_mut((0, r), (rows, l)).copy_from(&w.rows(0, rows));
    }
    z
}

fn check_shapes(y: &DVector<f64>, f: &DMatrix<f64>, w: &DMatrix<f64>, h: usize) -> Result<usize> {
    let t = y.len();
    if f.nrows() != t || w.nrows() != t {
        return Err(Error::Dimension(format!(
            "y has {t} rows, factors {} and controls {}",
            f.nrows(),
            w.nrows()
        )));
    }
    if h == 0 {
        return Err(Error::InvalidInput("horizon h must be positive".into()));
    }
    let k = f.ncols() + w.ncols();
    if t < h + k + 1 {
        return Err(Error::Dimension(format!("T - h = {} leaves too few observations for {k} regressors", t.saturating_sub(h))));
    }
    if !y.iter().all(|v| v.is_finite()) || !linalg::all_finite(f) || !linalg::all_finite(w) {
        return Err(Error::InvalidInput("regression data contain non-finite entries".into()));
    }
    Ok(t - h)
}

pub fn augreg_fit(y: &DVector<f64>, f_hat: &DMatrix<f64>, w: &DMatrix<f64>, h: usize, mode: SandwichMode) -> Result<AugRegFit> {
    let n = check_shapes(y, f_hat, w, h)?;
    let nf = n as f64;
    let z = design_matrix(f_hat, w, n);
    let target = y.rows(0, n).clone_owned();
    if linalg::reciprocal_condition(&z) < 1e-10 {
        return Err(Error::Collinear("regressors (F_hat, W) are rank deficient".into()));
    }
    let szz = z.transpose() * &z / nf;
    let ztz_inv = linalg::inverse(&szz, "Z'Z/n").map_err(|_| Error::Collinear("Z'Z is singular".into()))?;
    let delta = &ztz_inv * (z.transpose() * &target / nf);
    let resid = &target - &z * &delta;
    let sigma_eps2_hat = resid.norm_squared() / nf;
    let meat = match mode {
        SandwichMode::Homoskedastic => &szz * sigma_eps2_hat,
        SandwichMode::Heteroskedastic => {
            let mut scaled = z.clone();
            for (mut row, e) in scaled.row_iter_mut().zip(resid.iter()) {
                row *= e * e;
            }
            scaled.transpose() * &z / nf
        }
    };
    let sigma = &ztz_inv * meat * &ztz_inv;
    let sigma = (&sigma + sigma.transpose()) * 0.5;
    Ok(AugRegFit {
        delta_hat: delta.iter().copied().collect(),
        sigma_delta_hat: sigma,
        residuals: resid.iter().copied().collect(),
        residual_times: (1 + h..=n + h).collect(),
        sigma_eps2_hat,
        h,
        r: f_hat.ncols(),
        n_obs: n,
        mode,
        ztz_inv,
    })
}

/// `M_w F` over the estimation sample; `F` itself when there are no controls.
fn partial_out(f: &DMatrix<f64>, w: &DMatrix<f64>, n: usize) -> Result<DMatrix<f64>> {
    let fs = f.rows(0, n).clone_owned();
    if w.ncols() == 0 {
        return Ok(fs);
    }
    let ws = w.rows(0, n).clone_owned();
    let wtw_inv = linalg::inverse(&(ws.transpose() * &ws), "W'W")?;
    Ok(&fs - &ws * (wtw_inv * (ws.transpose() * &fs)))
}

/// Frisch–Waugh estimate of the factor coefficients with the controls
/// projected out, over `t = 1..T-h`.
pub fn infeasible_gamma(y: &DVector<f64>, f0: &DMatrix<f64>, w: &DMatrix<f64>, h: usize) -> Result<DVector<f64>> {
    let n = check_shapes(y, f0, w, h)?;
    let ft = partial_out(f0, w, n)?;
    let gram = ft.transpose() * &ft;
    let inv = linalg::inverse(&gram, "projected factor Gram matrix")?;
    Ok(inv * (ft.transpose() * y.rows(0, n)))
}

/// Population covariance `sigma_eps^2 (n^{-1} F0' M_w F0)^{-1}` of
/// `sqrt(n) (gamma_hat - gamma0)`.
pub fn oracle_sigma_gamma(f0: &DMatrix<f64>, w: &DMatrix<f64>, sigma_eps2: f64, h: usize) -> Result<DMatrix<f64>> {
    let t = f0.nrows();
    if t <= h {
        return Err(Error::Dimension("horizon exceeds the sample".into()));
    }
    let n = t - h;
    let ft = partial_out(f0, w, n)?;
    let inv = linalg::inverse(&(ft.transpose() * &ft / n as f64), "F0'M_wF0/n")?;
    Ok(inv * sigma_eps2)
}

/// `T delta' Sigma^{-1} delta`.
pub fn gamma_joint_q2(delta_gamma: &DVector<f64>, sigma_gamma: &DMatrix<f64>, t: usize) -> Result<f64> {
    Ok(t as f64 * linalg::inv_quad_form(sigma_gamma, delta_gamma, "Sigma_gamma")?)
}

/// `sqrt(T (Sigma^{-1})_kk) delta_k` for the 1-based coefficient `k`.
pub fn z_coefficient(delta_gamma: &DVector<f64>, sigma_gamma: &DMatrix<f64>, k: usize, t: usize) -> Result<f64> {
    if k == 0 || k > delta_gamma.len() {
        return Err(Error::OutOfRange { what: "coefficient index", index: k, len: delta_gamma.len() });
    }
    let inv = linalg::inverse(sigma_gamma, "Sigma_gamma")?;
    let s = inv[(k - 1, k - 1)];
    if !(s > 0.0) {
        return Err(Error::Numerical("non-positive precision".into()));
    }
    Ok((t as f64 * s).sqrt() * delta_gamma[k - 1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forecast {
    pub y_hat: f64,
    /// Standard deviation of the conditional-mean forecast error.
    pub sigma_cond: f64,
    /// `sqrt(sigma_eps^2 + sigma_cond^2)`.
    pub sigma_actual: f64,
    pub level: f64,
    pub conditional_mean: Interval,
    pub actual_value: Interval,
    /// The actual-value interval is only valid under Gaussian regression errors.
    pub actual_interval_assumes_normality: bool,
}

/// Intervals around `y_hat` given the conditional-mean variance and the
/// regression error variance.
pub fn forecast_from_variance(y_hat: f64, sigma_cond2: f64, sigma_eps2: f64, level: f64) -> Result<Forecast> {
    if !(sigma_cond2 > 0.0) || !sigma_cond2.is_finite() || !(sigma_eps2 >= 0.0) {
        return Err(Error::Numerical(format!("forecast variance {sigma_cond2:.3e} is not positive")));
    }
    let z = two_sided_critical(level)?;
    let sigma_cond = sigma_cond2.sqrt();
    let sigma_actual = (sigma_cond2 + sigma_eps2).sqrt();
    Ok(Forecast {
        y_hat,
        sigma_cond,
        sigma_actual,
        level,
        conditional_mean: Interval { lower: y_hat - z * sigma_cond, upper: y_hat + z * sigma_cond },
        actual_value: Interval { lower: y_hat - z * sigma_actual, upper: y_hat + z * sigma_actual },
        actual_interval_assumes_normality: true,
    })
}

/// Feasible forecast of `y_{T+h}` from the last regressor row `z_T`.
pub fn forecast(fit: &AugRegFit, z_t: &DVector<f64>, gcov_t: &FactorCov, gamma_hat: &DVector<f64>, level: f64) -> Result<Forecast> {
    let k = fit.delta_hat.len();
    if z_t.len() != k || gamma_hat.len() != fit.r || gcov_t.gamma_t.nrows() != fit.r {
        return Err(Error::Dimension("forecast inputs disagree with the fitted model".into()));
    }
    let y_hat = fit.delta().dot(z_t);
    let coef_var = (z_t.transpose() * &fit.sigma_delta_hat * z_t)[0] / fit.n_obs as f64;
    let s_inv = gcov_t.scale_inverse()?;
    let g = &s_inv * gamma_hat;
    let factor_var = (g.transpose() * &gcov_t.gamma_t * &g)[0];
    forecast_from_variance(y_hat, coef_var + factor_var, fit.sigma_eps2_hat, level)
}

/// Flat summary of a fit and forecast, for JSON reports and CSV aggregation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugRegReport {
    pub coefficients: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub z_stats: Vec<f64>,
    pub p_values: Vec<f64>,
    pub sigma_eps2_hat: f64,
    pub n_obs: usize,
    pub h: usize,
    pub mode: SandwichMode,
    pub forecast: Option<Forecast>,
}

impl AugRegReport {
    pub fn new(fit: &AugRegFit, forecast: Option<Forecast>) -> Self {
        let se = fit.standard_errors();
        let z: Vec<f64> = fit.delta_hat.iter().zip(&se).map(|(d, s)| if *s > 0.0 { d / s } else { f64::NAN }).collect();
        AugRegReport {
            coefficients: fit.delta_hat.clone(),
            standard_errors: se,
            p_values: z.iter().map(|&v| two_sided_pvalue(v)).collect(),
            z_stats: z,
            sigma_eps2_hat: fit.sigma_eps2_hat,
            n_obs: fit.n_obs,
            h: fit.h,
            mode: fit.mode,
            forecast,
        }
    }

    pub fn csv_header(&self) -> String {
        let mut cols = Vec::new();
        for j in 1..=self.coefficients.len() {
            cols.push(format!("coef{j}"));
            cols.push(format!("se{j}"));
        }
        cols.extend(["sigma_eps2", "n_obs", "y_hat", "sigma_cond", "lower_mean", "upper_mean", "lower_actual", "upper_actual"].map(String::from));
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cols = Vec::new();
        for (c, s) in self.coefficients.iter().zip(&self.standard_errors) {
            cols.push(format_f64(*c));
            cols.push(format_f64(*s));
        }
        cols.push(format_f64(self.sigma_eps2_hat));
        cols.push(self.n_obs.to_string());
        match &self.forecast {
            Some(f) => {
                for v in [f.y_hat, f.sigma_cond, f.conditional_mean.lower, f.conditional_mean.upper, f.actual_value.lower, f.actual_value.upper] {
                    cols.push(format_f64(v));
                }
            }
            None => cols.extend(std::iter::repeat_n(String::new(), 6)),
        }
        cols.join(",")
    }
}
