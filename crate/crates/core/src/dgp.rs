//! Synthetic weak-factor panels and factor-augmented regression targets.
//!
//! Factors are i.i.d. uniform with unit variance, orthonormalized so that
//! `F0'F0/T = I`. Loadings follow deterministic non-sparse or sparse
//! templates whose column energy grows like `N^alpha_k`. The structural pair
//! is `F* = F0 H^{-1}`, `B* = B0 H'`, so `F* B*' = F0 B0'`.
//!
//! Random draws are consumed in a fixed order: factors row by row
//! (`t` outer, `k` inner), then the idiosyncratic errors row by row.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LoadingMode {
    NonSparse,
    Sparse,
}

/// Parameters of a simulated factor panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorDesign {
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub r: usize,
    /// Strength exponents, non-increasing, each in (0, 1].
    pub alphas: Vec<f64>,
    /// Factor means.
    pub mu: Vec<f64>,
    /// Idiosyncratic standard deviation.
    pub sigma_e: f64,
    pub loading_mode: LoadingMode,
    /// Rotation from the pseudo-true to the structural parametrization, row-major.
    #[serde(rename = "structural_H")]
    pub structural_h: Vec<Vec<f64>>,
    pub seed: u64,
}

/// The two-factor rotation used throughout the reference experiments.
pub const REFERENCE_H: [[f64; 2]; 2] = [[1.0, 0.5], [0.5, 2.0]];
pub const REFERENCE_SIGMA_E2: f64 = 0.5;

/// The six `(alpha_1, alpha_2)` strength pairs of the reference experiments.
pub const REFERENCE_DESIGNS: [(f64, f64); 6] = [
    (1.0, 1.0),
    (1.0, 0.9),
    (1.0, 0.8),
    (0.9, 0.7),
    (0.8, 0.6),
    (0.7, 0.5),
];

impl FactorDesign {
    /// Two-factor reference design: `mu = 1`, `sigma_e^2 = 0.5`,
    /// `H = [[1, 0.5], [0.5, 2]]`.
    pub fn reference(n: usize, t: usize, alphas: (f64, f64), loading_mode: LoadingMode, seed: u64) -> Self {
        FactorDesign {
            t,
            n,
            r: 2,
            alphas: vec![alphas.0, alphas.1],
            mu: vec![1.0, 1.0],
            sigma_e: REFERENCE_SIGMA_E2.sqrt(),
            loading_mode,
            structural_h: REFERENCE_H.iter().map(|row| row.to_vec()).collect(),
            seed,
        }
    }

    pub fn h_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.r, self.r, |i, j| self.structural_h[i][j])
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.r;
        if r == 0 || self.t == 0 || self.n == 0 {
            return Err(Error::Design("T, N and r must be positive".into()));
        }
        if self.t < r {
            return Err(Error::Design(format!("T = {} is smaller than r = {r}", self.t)));
        }
        if self.n < 2 {
            return Err(Error::Design(format!("N = {} must be at least 2", self.n)));
        }
        if self.alphas.len() != r || self.mu.len() != r {
            return Err(Error::Design(format!(
                "alphas ({}) and mu ({}) must have length r = {r}",
                self.alphas.len(),
                self.mu.len()
            )));
        }
        if self.alphas.iter().any(|&a| !(a > 0.0 && a <= 1.0)) {
            return Err(Error::Design("every alpha must lie in (0, 1]".into()));
        }
        if self.alphas.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::Design("alphas must be non-increasing".into()));
        }
        if self.mu.iter().any(|m| !m.is_finite()) {
            return Err(Error::Design("mu must be finite".into()));
        }
        if !(self.sigma_e >= 0.0 && self.sigma_e.is_finite()) {
            return Err(Error::Design("sigma_e must be a finite non-negative number".into()));
        }
        if self.structural_h.len() != r || self.structural_h.iter().any(|row| row.len() != r) {
            return Err(Error::Design(format!("structural_H must be {r}x{r}")));
        }
        let h = self.h_matrix();
        if !linalg::all_finite(&h) || linalg::reciprocal_condition(&h) < 1e-12 {
            return Err(Error::Design("structural_H is singular or ill-conditioned".into()));
        }
        if self.loading_mode == LoadingMode::Sparse {
            for &a in &self.alphas {
                let target = (self.n as f64).powf(a);
                if target < 2.0 {
                    return Err(Error::Design(format!("sparse loadings need N^alpha >= 2, got {target:.3}")));
                }
                let nk = nearest_even(target);
                if nk > self.n {
                    return Err(Error::Design(format!("sparse block size {nk} exceeds N = {}", self.n)));
                }
            }
        }
        Ok(())
    }
}

/// Even integer closest to `x`; exact ties round up.
pub fn nearest_even(x: f64) -> usize {
    let lower = 2.0 * (x / 2.0).floor();
    let upper = lower + 2.0;
    if x - lower < upper - x {
        lower as usize
    } else {
        upper as usize
    }
}

/// `T x r` matrix of i.i.d. `U(mu_k - sqrt 3, mu_k + sqrt 3)` draws.
pub fn gen_factors<R: Rng + ?Sized>(design: &FactorDesign, rng: &mut R) -> DMatrix<f64> {
    let half = 3f64.sqrt();
    let laws: Vec<Uniform<f64>> = design
        .mu
        .iter()
        .map(|&m| Uniform::new(m - half, m + half).expect("finite bounds"))
        .collect();
    let mut f = DMatrix::zeros(design.t, design.r);
    for t in 0..design.t {
        for (k, law) in laws.iter().enumerate() {
            f[(t, k)] = law.sample(rng);
        }
    }
    f
}

/// Gram–Schmidt in column order (with one re-orthogonalization pass), scaled
/// so the result satisfies `F0'F0/T = I`.
pub fn gram_schmidt_scale(f: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (t, r) = f.shape();
    if r > t {
        return Err(Error::Degenerate(format!("{r} columns cannot be independent in {t} rows")));
    }
    let mut q = DMatrix::<f64>::zeros(t, r);
    for j in 0..r {
        let original = f.column(j);
        let mut v = original.clone_owned();
        for _pass in 0..2 {
            for i in 0..j {
                let qi = q.column(i);
                let proj = qi.dot(&v);
                v.axpy(-proj, &qi, 1.0);
            }
        }
        let norm = v.norm();
        if !(norm >= 1e-12 * original.norm()) || norm == 0.0 {
            return Err(Error::Degenerate(format!("column {} is linearly dependent on its predecessors", j + 1)));
        }
        q.set_column(j, &(v / norm));
    }
    Ok(q * (t as f64).sqrt())
}

/// Deterministic `N x r` loading matrix `B0`.
///
/// Column templates alternate between the first and the second two-factor
/// pattern; for `r > 2` each further pair is multiplied row-wise by a Walsh
/// sign sequence (period 2, 4, 8, ...) so the columns stay non-collinear.
pub fn gen_loadings(design: &FactorDesign) -> Result<DMatrix<f64>> {
    design.validate()?;
    let n = design.n;
    let split = n.div_ceil(2);
    let mut b = DMatrix::zeros(n, design.r);
    for (k, &alpha) in design.alphas.iter().enumerate() {
        let block = k / 2;
        let walsh = |i: usize| -> f64 {
            if block > 0 && (i >> (block - 1)) & 1 == 1 {
                -1.0
            } else {
                1.0
            }
        };
        match design.loading_mode {
            LoadingMode::NonSparse => {
                let scale = (n as f64).powf((alpha - 1.0) / 2.0);
                for i in 0..n {
                    let g = match (k % 2, i < split) {
                        (0, true) => 2.0,
                        (0, false) => 1.0,
                        (_, true) => 0.5,
                        (_, false) => -1.0,
                    };
                    b[(i, k)] = scale * g * walsh(i);
                }
            }
            LoadingMode::Sparse => {
                let nk = nearest_even((n as f64).powf(alpha));
                for i in 0..nk {
                    let g = if k % 2 == 0 {
                        2.0
                    } else if i < nk / 2 {
                        1.0
                    } else {
                        -1.0
                    };
                    b[(i, k)] = g * walsh(i);
                }
            }
        }
    }
    Ok(b)
}

/// One simulated panel with both parametrizations of the common component.
#[derive(Debug, Clone)]
pub struct Panel {
    pub x: DMatrix<f64>,
    pub f_star: DMatrix<f64>,
    pub b_star: DMatrix<f64>,
    pub f0: DMatrix<f64>,
    pub b0: DMatrix<f64>,
    pub e: DMatrix<f64>,
}

impl Panel {
    pub fn common_component(&self) -> DMatrix<f64> {
        &self.f0 * self.b0.transpose()
    }
}

pub fn assemble_panel<R: Rng + ?Sized>(design: &FactorDesign, rng: &mut R) -> Result<Panel> {
    design.validate()?;
    let raw = gen_factors(design, rng);
    let f0 = gram_schmidt_scale(&raw)?;
    let b0 = gen_loadings(design)?;
    let h = design.h_matrix();
    let h_inv = linalg::inverse(&h, "structural_H")?;
    let f_star = &f0 * h_inv;
    let b_star = &b0 * h.transpose();
    let mut e = DMatrix::zeros(design.t, design.n);
    if design.sigma_e > 0.0 {
        let law = Normal::new(0.0, design.sigma_e).map_err(|err| Error::Design(err.to_string()))?;
        for t in 0..design.t {
            for i in 0..design.n {
                e[(t, i)] = law.sample(rng);
            }
        }
    }
    let x = &f0 * b0.transpose() + &e;
    Ok(Panel { x, f_star, b_star, f0, b0, e })
}

/// Parameters of the factor-augmented regression target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugRegDesign {
    pub gamma0: Vec<f64>,
    pub beta: Vec<f64>,
    pub rho: Vec<f64>,
    pub sigma_w: Vec<f64>,
    pub sigma_eps: f64,
    pub h: usize,
}

impl AugRegDesign {
    /// Reference design: `gamma0 = beta = 1`, one control with `rho = 0.5`,
    /// `sigma_w = 1`, `sigma_eps = 1`, horizon 1.
    pub fn reference(r: usize) -> Self {
        AugRegDesign {
            gamma0: vec![1.0; r],
            beta: vec![1.0],
            rho: vec![0.5],
            sigma_w: vec![1.0],
            sigma_eps: 1.0,
            h: 1,
        }
    }

    pub fn controls(&self) -> usize {
        self.beta.len()
    }

    pub fn validate(&self, r: usize) -> Result<()> {
        let l = self.beta.len();
        if self.rho.len() != l || self.sigma_w.len() != l {
            return Err(Error::Design("beta, rho and sigma_w must have equal lengths".into()));
        }
        if self.gamma0.len() != r {
            return Err(Error::Design(format!("gamma0 has length {}, expected r = {r}", self.gamma0.len())));
        }
        if self.sigma_w.iter().any(|&s| !(s >= 0.0 && s.is_finite())) || !(self.sigma_eps >= 0.0 && self.sigma_eps.is_finite()) {
            return Err(Error::Design("noise scales must be finite and non-negative".into()));
        }
        if self.h == 0 {
            return Err(Error::Design("forecast horizon h must be positive".into()));
        }
        Ok(())
    }

    /// R^2 of the target under idealized moments: factors uncorrelated with
    /// unit variance and independent of all noise terms.
    pub fn idealized_r2(&self) -> f64 {
        let r = self.gamma0.len() as f64;
        let gamma_sum: f64 = self.gamma0.iter().sum();
        let mut signal: f64 = self.gamma0.iter().map(|g| g * g).sum();
        // Var(w'beta) with w_l = rho_l * sum_k f_k + noise.
        let rho_beta: f64 = self.rho.iter().zip(&self.beta).map(|(p, b)| p * b).sum();
        signal += rho_beta * rho_beta * r;
        signal += self.sigma_w.iter().zip(&self.beta).map(|(s, b)| (s * b).powi(2)).sum::<f64>();
        signal += 2.0 * rho_beta * gamma_sum;
        signal / (signal + self.sigma_eps * self.sigma_eps)
    }
}

/// Controls and targets; `y[t]` holds `y_{t+h}` for `t = 1..T`.
#[derive(Debug, Clone)]
pub struct AugRegDraw {
    pub y: DVector<f64>,
    pub w: DMatrix<f64>,
    /// Regression errors `eps_{t+h}`, aligned with `y`.
    pub eps: DVector<f64>,
}

impl AugRegDraw {
    /// `f0_t' gamma0 + w_t' beta` for the (1-based) time index `t`.
    pub fn conditional_mean(&self, f0: &DMatrix<f64>, design: &AugRegDesign, t: usize) -> f64 {
        let row = t - 1;
        let mut m = 0.0;
        for (k, g) in design.gamma0.iter().enumerate() {
            m += f0[(row, k)] * g;
        }
        for (l, b) in design.beta.iter().enumerate() {
            m += self.w[(row, l)] * b;
        }
        m
    }
}

/// Draw controls `W` and targets `y_{t+h}`. The factor centering uses the
/// sample mean of each column of `F0`. Draw order: control noise row by
/// row, then the regression errors.
pub fn gen_augreg<R: Rng + ?Sized>(f0: &DMatrix<f64>, design: &AugRegDesign, rng: &mut R) -> Result<AugRegDraw> {
    let (t_len, r) = f0.shape();
    design.validate(r)?;
    let l = design.controls();
    let centered_sum: Vec<f64> = {
        let means: Vec<f64> = f0.column_iter().map(|c| c.mean()).collect();
        (0..t_len)
            .map(|t| (0..r).map(|k| f0[(t, k)] - means[k]).sum())
            .collect()
    };
    let mut w = DMatrix::zeros(t_len, l);
    for t in 0..t_len {
        for j in 0..l {
            let noise = if design.sigma_w[j] > 0.0 {
                design.sigma_w[j] * sample_std_normal(rng)
            } else {
                0.0
            };
            w[(t, j)] = design.rho[j] * centered_sum[t] + noise;
        }
    }
    let mut eps = DVector::zeros(t_len);
    if design.sigma_eps > 0.0 {
        for t in 0..t_len {
            eps[t] = design.sigma_eps * sample_std_normal(rng);
        }
    }
    let gamma = DVector::from_column_slice(&design.gamma0);
    let beta = DVector::from_column_slice(&design.beta);
    let y = f0 * gamma + &w * beta + &eps;
    Ok(AugRegDraw { y, w, eps })
}

fn sample_std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rand_distr::StandardNormal.sample(rng)
}
