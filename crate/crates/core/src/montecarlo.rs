//! Replication engine for the factor and factor-augmented regression
//! experiments.
//!
//! Replication `j` of grid cell `c` draws from a ChaCha20 generator keyed by
//! `base_seed` on stream `(c << 32) | j`, so every replication is
//! reproducible on its own. Replications run in parallel, are collected in
//! index order and folded sequentially, which makes a summary bit-identical
//! for any number of worker threads.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augreg::{self, SandwichMode};
use crate::dgp::{self, AugRegDesign, FactorDesign, LoadingMode, Panel, REFERENCE_DESIGNS, REFERENCE_SIGMA_E2};
use crate::error::{Error, Result};
use crate::inference::{self, FactorCov, LoadingCov, Q2Form};
use crate::io::format_f64;
use crate::linalg;
use crate::pc::{pc_fit, PcFit};
use crate::quantile::{chi2_quantile, two_sided_critical};
use crate::rotation::{align_to_reference, data_rotations, RotationSet};

/// Version tag of the summary CSV column layout.
pub const SUMMARY_SCHEMA: &str = "wfpc-mc-summary/v1";
pub const SUMMARY_HEADER: &str = "experiment,N,T,alpha1,alpha2,metric,reference,mean,mcse,reps,failed,flag";
/// Nominal size of every single and joint test.
pub const NOMINAL_SIZE: f64 = 0.05;
/// Largest tolerated share of failed replications in a cell.
pub const MAX_FAILURE_RATE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    FactorLosses,
    JointNormality,
    ElementTests,
    AugregLosses,
    AugregJoint,
    AugregTests,
    Coverage,
}

impl Experiment {
    pub const ALL: [Experiment; 7] = [
        Experiment::FactorLosses,
        Experiment::JointNormality,
        Experiment::ElementTests,
        Experiment::AugregLosses,
        Experiment::AugregJoint,
        Experiment::AugregTests,
        Experiment::Coverage,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::FactorLosses => "factor-losses",
            Experiment::JointNormality => "joint-normality",
            Experiment::ElementTests => "element-tests",
            Experiment::AugregLosses => "augreg-losses",
            Experiment::AugregJoint => "augreg-joint",
            Experiment::AugregTests => "augreg-tests",
            Experiment::Coverage => "coverage",
        }
    }

    fn is_augreg(self) -> bool {
        matches!(self, Experiment::AugregLosses | Experiment::AugregJoint | Experiment::AugregTests | Experiment::Coverage)
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Experiment::ALL.iter().map(|e| e.name()).collect();
                Error::InvalidInput(format!("unknown experiment '{s}', expected one of {}", names.join(", ")))
            })
    }
}

/// `((alpha_1, alpha_2), (N, T))`.
pub type Cell = ((f64, f64), (usize, usize));

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub experiment: Experiment,
    /// `(alpha_1, alpha_2)` pairs.
    pub designs: Vec<(f64, f64)>,
    /// `(N, T)` pairs.
    pub sizes: Vec<(usize, usize)>,
    pub replications: usize,
    pub base_seed: u64,
    /// Confidence levels of the forecast intervals.
    pub levels: Vec<f64>,
    pub loading_mode: LoadingMode,
    pub sigma_e2: f64,
    pub augreg: AugRegDesign,
}

impl McConfig {
    /// The reference grid at desk scale: six designs, `N = T` in {50, 100, 200}.
    pub fn reference(experiment: Experiment) -> Self {
        McConfig {
            experiment,
            designs: REFERENCE_DESIGNS.to_vec(),
            sizes: vec![(50, 50), (100, 100), (200, 200)],
            replications: 2000,
            base_seed: 20240229,
            levels: vec![0.9, 0.95],
            loading_mode: LoadingMode::NonSparse,
            sigma_e2: REFERENCE_SIGMA_E2,
            augreg: AugRegDesign::reference(2),
        }
    }

    pub fn single(experiment: Experiment, design: (f64, f64), n: usize, t: usize, replications: usize) -> Self {
        McConfig { designs: vec![design], sizes: vec![(n, t)], replications, ..McConfig::reference(experiment) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::InvalidInput("replications must be at least 1".into()));
        }
        if self.designs.is_empty() || self.sizes.is_empty() {
            return Err(Error::InvalidInput("the design grid is empty".into()));
        }
        if let Some(&(n, t)) = self.sizes.iter().find(|&&(n, t)| n < 10 || t < 10) {
            return Err(Error::InvalidInput(format!("(N, T) = ({n}, {t}) is below the (10, 10) minimum")));
        }
        if self.replications > u32::MAX as usize || self.designs.len() * self.sizes.len() > u32::MAX as usize {
            return Err(Error::InvalidInput("grid or replication count exceeds the seeding scheme".into()));
        }
        if self.levels.iter().any(|&l| !(l > 0.0 && l < 1.0)) {
            return Err(Error::InvalidInput("levels must lie in (0, 1)".into()));
        }
        if !(self.sigma_e2 >= 0.0 && self.sigma_e2.is_finite()) {
            return Err(Error::InvalidInput("sigma_e2 must be finite and non-negative".into()));
        }
        for (i, _) in self.cells() {
            self.factor_design(i)?.validate()?;
        }
        if self.experiment.is_augreg() {
            self.augreg.validate(2)?;
        }
        Ok(())
    }

    /// Grid cells as `(index, ((alpha_1, alpha_2), (N, T)))`, sizes outermost.
    pub fn cells(&self) -> impl Iterator<Item = (usize, Cell)> + '_ {
        self.sizes
            .iter()
            .flat_map(move |&size| self.designs.iter().map(move |&d| (d, size)))
            .enumerate()
    }

    fn factor_design(&self, cell: usize) -> Result<FactorDesign> {
        let (alphas, (n, t)) = self.cells().nth(cell).map(|(_, c)| c).ok_or(Error::OutOfRange {
            what: "grid cell",
            index: cell,
            len: self.designs.len() * self.sizes.len(),
        })?;
        let mut design = FactorDesign::reference(n, t, alphas, self.loading_mode, self.base_seed);
        design.sigma_e = self.sigma_e2.sqrt();
        Ok(design)
    }
}

/// Generator for replication `rep` of grid cell `cell`.
pub fn replication_rng(base_seed: u64, cell: usize, rep: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(base_seed);
    rng.set_stream(((cell as u64) << 32) | rep as u64);
    rng
}

/// Running `(count, mean, M2)` triple.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Welford {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Welford {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    /// Combine two accumulators as if all values had been pushed into one.
    pub fn merge(&self, other: &Welford) -> Welford {
        if self.count == 0 {
            return *other;
        }
        if other.count == 0 {
            return *self;
        }
        let count = self.count + other.count;
        let (na, nb, n) = (self.count as f64, other.count as f64, count as f64);
        let d = other.mean - self.mean;
        Welford { count, mean: self.mean + d * nb / n, m2: self.m2 + other.m2 + d * d * na * nb / n }
    }

    pub fn sd(&self) -> Option<f64> {
        (self.count > 1).then(|| (self.m2.max(0.0) / (self.count - 1) as f64).sqrt())
    }

    /// `sd / sqrt(count)`; absent with fewer than two values.
    pub fn mcse(&self) -> Option<f64> {
        self.sd().map(|s| s / (self.count as f64).sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowFlag {
    Ok,
    /// Fewer than two successful replications.
    McseAbsent,
    /// `MCSE > |mean| / 10`.
    Underpowered,
}

impl RowFlag {
    fn as_str(self) -> &'static str {
        match self {
            RowFlag::Ok => "",
            RowFlag::McseAbsent => "mcse_absent",
            RowFlag::Underpowered => "underpowered",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub experiment: Experiment,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub alpha1: f64,
    pub alpha2: f64,
    pub metric: String,
    pub reference: String,
    pub mean: f64,
    pub mcse: Option<f64>,
    pub reps: u64,
    pub failed: usize,
    pub flag: RowFlag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellLog {
    pub cell: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub alpha1: f64,
    pub alpha2: f64,
    pub attempted: usize,
    pub failed: usize,
    /// The first few failure messages, tagged with their replication index.
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub schema: String,
    pub rows: Vec<SummaryRow>,
    pub cells: Vec<CellLog>,
}

impl McSummary {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(SUMMARY_HEADER);
        out.push('\n');
        for row in &self.rows {
            let mcse = row.mcse.map(format_f64).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{}\n",
                row.experiment,
                row.n,
                row.t,
                row.alpha1,
                row.alpha2,
                row.metric,
                row.reference,
                format_f64(row.mean),
                mcse,
                row.reps,
                row.failed,
                row.flag.as_str()
            ));
        }
        out
    }

    pub fn find(&self, n: usize, design: (f64, f64), metric: &str, reference: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| {
            r.n == n && r.alpha1 == design.0 && r.alpha2 == design.1 && r.metric == metric && r.reference == reference
        })
    }

    pub fn failed_total(&self) -> usize {
        self.cells.iter().map(|c| c.failed).sum()
    }
}

/// One replication's output: `(experiment, metric, reference, value)`.
type Metric = (Experiment, String, &'static str, f64);

fn push(out: &mut Vec<Metric>, exp: Experiment, metric: impl Into<String>, reference: &'static str, value: f64) {
    out.push((exp, metric.into(), reference, value));
}

fn indicator(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

fn frob(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm()
}

/// Per-replication draw shared by every experiment.
struct Draw {
    panel: Panel,
    pc: PcFit,
    rot: RotationSet,
}

fn draw_panel(design: &FactorDesign, rng: &mut ChaCha20Rng) -> Result<Draw> {
    let panel = dgp::assemble_panel(design, rng)?;
    let pc = align_to_reference(&pc_fit(&panel.x, design.r)?, &panel.f0)?;
    let rot = data_rotations(&panel.f_star, &panel.b_star, &panel.f0, &panel.b0, &pc)?;
    Ok(Draw { panel, pc, rot })
}

fn factor_losses(d: &Draw, out: &mut Vec<Metric>) -> Result<()> {
    let exp = Experiment::FactorLosses;
    let Draw { panel: p, pc, rot } = d;
    let (t, n) = (pc.t() as f64, pc.n() as f64);
    let h_inv_t = linalg::inverse(&rot.h_hat, "H_hat")?.transpose();
    push(out, exp, "factor_loss", "pseudo_true", frob(&pc.f_hat, &p.f0) / t.sqrt());
    push(out, exp, "factor_loss", "h_hat4", frob(&pc.f_hat, &(&p.f_star * &rot.h_hat4)) / t.sqrt());
    push(out, exp, "factor_loss", "h_hat", frob(&pc.f_hat, &(&p.f_star * &rot.h_hat)) / t.sqrt());
    push(out, exp, "loading_loss", "pseudo_true", frob(&pc.b_hat, &p.b0) / n.sqrt());
    push(out, exp, "loading_loss", "q_hat", frob(&pc.b_hat, &(&p.b_star * rot.q_hat.transpose())) / n.sqrt());
    push(out, exp, "loading_loss", "h_hat", frob(&pc.b_hat, &(&p.b_star * h_inv_t)) / n.sqrt());
    push(out, exp, "common_loss", "structural", frob(&pc.c_hat, &p.common_component()) / (n * t).sqrt());
    Ok(())
}

fn joint_normality(d: &Draw, sigma_e2: f64, out: &mut Vec<Metric>) -> Result<()> {
    let exp = Experiment::JointNormality;
    let Draw { panel: p, pc, rot } = d;
    let r = pc.r;
    let crit = chi2_quantile(r, 1.0 - NOMINAL_SIZE)?;
    let weight = DMatrix::identity(r, r) * sigma_e2;
    let scale = linalg::sym_sqrt(&(p.b0.transpose() * &p.b0))?;
    let f_hat = pc.f_hat.row(0).transpose();
    let f_star = p.f_star.row(0).transpose();
    let f_refs = [
        ("pseudo_true", p.f0.row(0).transpose()),
        ("h_hat4", rot.h_hat4.transpose() * &f_star),
        ("h_hat", rot.h_hat.transpose() * &f_star),
    ];
    for (name, f_ref) in f_refs {
        let q = inference::q2_joint(&(&f_hat - f_ref), &weight, &Q2Form::Factor { scale: scale.clone() })?;
        push(out, exp, "q2_f_reject", name, indicator(q > crit));
    }
    let b_hat = pc.b_hat.row(0).transpose();
    let b_star = p.b_star.row(0).transpose();
    let b_refs = [
        ("pseudo_true", p.b0.row(0).transpose()),
        ("q_hat", &rot.q_hat * &b_star),
        ("h_hat", linalg::inverse(&rot.h_hat, "H_hat")? * &b_star),
    ];
    for (name, b_ref) in b_refs {
        let q = inference::q2_joint(&(&b_hat - b_ref), &weight, &Q2Form::Loading { t: pc.t() })?;
        push(out, exp, "q2_b_reject", name, indicator(q > crit));
    }
    Ok(())
}

fn element_tests(d: &Draw, sigma_e2: f64, out: &mut Vec<Metric>) -> Result<()> {
    let exp = Experiment::ElementTests;
    let Draw { panel: p, pc, .. } = d;
    let r = pc.r;
    let crit = two_sided_critical(1.0 - NOMINAL_SIZE)?;
    let reject = |z: f64| indicator(z.abs() > crit);
    let oracle = DMatrix::identity(r, r) * sigma_e2;
    let gcov = FactorCov::oracle(oracle.clone(), &p.b0, 1)?;
    let lcov = LoadingCov::oracle(oracle, 1);
    let gcov_hat = inference::gamma_hat(pc, 1)?;
    let lcov_hat = inference::phi_hat(pc, 1, inference::default_bandwidth(pc.t()))?;

    // Infeasible GLS-type control f0_1 + (B0'B0)^{-1} B0'e_1, exactly normal.
    let b0tb0 = p.b0.transpose() * &p.b0;
    let x1 = p.x.row(0).transpose();
    let f_control = linalg::inverse(&b0tb0, "B0'B0")? * (p.b0.transpose() * x1);

    for k in 1..=r {
        let f0 = p.f0[(0, k - 1)];
        push(out, exp, format!("z_f{k}_reject"), "pseudo_true", reject(inference::z_factor(pc, 1, k, f0, &gcov)?));
        let zb = inference::z_loading(pc, 1, k, p.b0[(0, k - 1)], &lcov)?;
        push(out, exp, format!("z_b{k}_reject"), "pseudo_true", reject(zb));
        let zf_hat = inference::z_factor(pc, 1, k, f0, &gcov_hat)?;
        push(out, exp, format!("z_f{k}_feasible_reject"), "pseudo_true", reject(zf_hat));
        let zb_hat = inference::z_loading(pc, 1, k, p.b0[(0, k - 1)], &lcov_hat)?;
        push(out, exp, format!("z_b{k}_feasible_reject"), "pseudo_true", reject(zb_hat));
        let z_control = gcov.scale[(k - 1, k - 1)] * (f_control[k - 1] - f0) / sigma_e2.sqrt();
        push(out, exp, format!("z_f{k}_control_reject"), "pseudo_true", reject(z_control));
    }
    let c_star = (p.f0.row(0) * p.b0.row(0).transpose())[0];
    let var_c = inference::common_variance_oracle(&p.f0, &p.b0, sigma_e2, 1, 1)?;
    push(out, exp, "z_c_reject", "structural", reject(inference::z_with_variance(pc.c_hat[(0, 0)], c_star, var_c)?));
    let zc_hat = inference::z_common(pc, 1, 1, c_star, &gcov_hat, &lcov_hat)?;
    push(out, exp, "z_c_feasible_reject", "structural", reject(zc_hat));
    Ok(())
}

fn augreg_metrics(
    d: &Draw,
    design: &FactorDesign,
    cfg: &McConfig,
    groups: &[Experiment],
    rng: &mut ChaCha20Rng,
    out: &mut Vec<Metric>,
) -> Result<()> {
    let Draw { panel: p, pc, rot } = d;
    let ar = &cfg.augreg;
    let r = pc.r;
    let t_len = pc.t();
    let h = ar.h;
    let draw = dgp::gen_augreg(&p.f0, ar, rng)?;
    let fit = augreg::augreg_fit(&draw.y, &pc.f_hat, &draw.w, h, SandwichMode::Heteroskedastic)?;
    let n_obs = fit.n_obs;
    let gamma0 = DVector::from_column_slice(&ar.gamma0);
    let gamma_hat = fit.gamma_hat();
    let gamma_inf = augreg::infeasible_gamma(&draw.y, &p.f0, &draw.w, h)?;
    let gamma_star = design.h_matrix() * &gamma0;
    let gamma_rot = linalg::inverse(&rot.h_hat, "H_hat")? * gamma_star;
    let sigma_eps2 = ar.sigma_eps * ar.sigma_eps;

    let deltas = [
        ("q2_gamma0_reject", "z_gamma0", "pseudo_true", &gamma_inf - &gamma0),
        ("q2_gamma_reject", "z_gamma", "pseudo_true", &gamma_hat - &gamma0),
        ("q2_gamma_reject", "", "h_hat", &gamma_hat - &gamma_rot),
    ];
    if groups.contains(&Experiment::AugregLosses) {
        let exp = Experiment::AugregLosses;
        push(out, exp, "gamma0_loss", "pseudo_true", deltas[0].3.norm());
        push(out, exp, "gamma_loss", "pseudo_true", deltas[1].3.norm());
        push(out, exp, "gamma_loss", "h_hat", deltas[2].3.norm());
    }
    let joint = groups.contains(&Experiment::AugregJoint);
    let tests = groups.contains(&Experiment::AugregTests);
    if joint || tests {
        let sigma = augreg::oracle_sigma_gamma(&p.f0, &draw.w, sigma_eps2, h)?;
        let crit_q = chi2_quantile(r, 1.0 - NOMINAL_SIZE)?;
        let crit_z = two_sided_critical(1.0 - NOMINAL_SIZE)?;
        for (q_name, z_name, reference, delta) in &deltas {
            if joint {
                let q = augreg::gamma_joint_q2(delta, &sigma, n_obs)?;
                push(out, Experiment::AugregJoint, *q_name, reference, indicator(q > crit_q));
            }
            if tests && !z_name.is_empty() {
                for k in 1..=r {
                    let z = augreg::z_coefficient(delta, &sigma, k, n_obs)?;
                    push(out, Experiment::AugregTests, format!("{z_name}{k}_reject"), reference, indicator(z.abs() > crit_z));
                }
            }
        }
    }
    if groups.contains(&Experiment::Coverage) {
        let exp = Experiment::Coverage;
        let last = t_len - 1;
        let l = draw.w.ncols();
        let z_hat_t = DVector::from_iterator(r + l, pc.f_hat.row(last).iter().chain(draw.w.row(last).iter()).copied());
        let z0_t = DVector::from_iterator(r + l, p.f0.row(last).iter().chain(draw.w.row(last).iter()).copied());
        let mut z0 = DMatrix::zeros(n_obs, r + l);
        z0.view_mut((0, 0), (n_obs, r)).copy_from(&p.f0.rows(0, n_obs));
        z0.view_mut((0, r), (n_obs, l)).copy_from(&draw.w.rows(0, n_obs));
        let coef_var = sigma_eps2 * linalg::inv_quad_form(&(z0.transpose() * &z0), &z0_t, "Z0'Z0")?;
        let b0tb0 = p.b0.transpose() * &p.b0;
        let factor_var = cfg.sigma_e2 * linalg::inv_quad_form(&b0tb0, &gamma0, "B0'B0")?;
        let y_hat = fit.delta().dot(&z_hat_t);
        let y_mean = draw.conditional_mean(&p.f0, ar, t_len);
        let y_actual = draw.y[last];
        let gcov_t = inference::gamma_hat(pc, t_len)?;
        for &level in &cfg.levels {
            let oracle = augreg::forecast_from_variance(y_hat, coef_var + factor_var, sigma_eps2, level)?;
            push(out, exp, format!("coverage_mean_{level}"), "oracle_sigma", indicator(oracle.conditional_mean.contains(y_mean)));
            push(out, exp, format!("coverage_actual_{level}"), "oracle_sigma", indicator(oracle.actual_value.contains(y_actual)));
            let feasible = augreg::forecast(&fit, &z_hat_t, &gcov_t, &gamma_hat, level)?;
            push(out, exp, format!("coverage_mean_{level}"), "feasible_sigma", indicator(feasible.conditional_mean.contains(y_mean)));
            push(out, exp, format!("coverage_actual_{level}"), "feasible_sigma", indicator(feasible.actual_value.contains(y_actual)));
        }
    }
    Ok(())
}

fn replication(cfg: &McConfig, groups: &[Experiment], design: &FactorDesign, cell: usize, rep: usize) -> Result<Vec<Metric>> {
    let mut rng = replication_rng(cfg.base_seed, cell, rep);
    let d = draw_panel(design, &mut rng)?;
    let mut out = Vec::new();
    for &g in groups {
        match g {
            Experiment::FactorLosses => factor_losses(&d, &mut out)?,
            Experiment::JointNormality => joint_normality(&d, cfg.sigma_e2, &mut out)?,
            Experiment::ElementTests => element_tests(&d, cfg.sigma_e2, &mut out)?,
            _ => {}
        }
    }
    let aug: Vec<Experiment> = groups.iter().copied().filter(|g| g.is_augreg()).collect();
    if !aug.is_empty() {
        augreg_metrics(&d, design, cfg, &aug, &mut rng, &mut out)?;
    }
    if let Some(bad) = out.iter().find(|m| !m.3.is_finite()) {
        return Err(Error::Numerical(format!("metric {} is not finite", bad.1)));
    }
    Ok(out)
}

/// Run the given metric groups over the whole grid.
pub fn run_groups(cfg: &McConfig, groups: &[Experiment]) -> Result<McSummary> {
    cfg.validate()?;
    let mut rows = Vec::new();
    let mut cells = Vec::new();
    for (cell, ((a1, a2), (n, t))) in cfg.cells() {
        let design = cfg.factor_design(cell)?;
        let results: Vec<Result<Vec<Metric>>> =
            (0..cfg.replications).into_par_iter().map(|rep| replication(cfg, groups, &design, cell, rep)).collect();

        let mut keys: Vec<(Experiment, String, &'static str)> = Vec::new();
        let mut acc: Vec<Welford> = Vec::new();
        let mut failures = Vec::new();
        let mut failed = 0;
        for (rep, res) in results.into_iter().enumerate() {
            match res {
                Ok(metrics) => {
                    if keys.is_empty() {
                        keys = metrics.iter().map(|m| (m.0, m.1.clone(), m.2)).collect();
                        acc = vec![Welford::default(); keys.len()];
                    }
                    debug_assert_eq!(metrics.len(), keys.len());
                    for (a, m) in acc.iter_mut().zip(&metrics) {
                        a.push(m.3);
                    }
                }
                Err(err) => {
                    failed += 1;
                    if failures.len() < 5 {
                        failures.push(format!("rep {rep}: {err}"));
                    }
                }
            }
        }
        if failed as f64 > MAX_FAILURE_RATE * cfg.replications as f64 {
            log::error!("cell {cell}: {failed} of {} replications failed; first: {:?}", cfg.replications, failures.first());
            return Err(Error::TooManyFailures {
                cell: format!("N={n} T={t} alpha=({a1},{a2}): {}", failures.first().cloned().unwrap_or_default()),
                failed,
                total: cfg.replications,
            });
        }
        for ((exp, metric, reference), w) in keys.into_iter().zip(acc) {
            let mcse = w.mcse();
            let flag = match mcse {
                None => RowFlag::McseAbsent,
                Some(s) if s > w.mean.abs() / 10.0 => RowFlag::Underpowered,
                Some(_) => RowFlag::Ok,
            };
            rows.push(SummaryRow {
                experiment: exp,
                n,
                t,
                alpha1: a1,
                alpha2: a2,
                metric,
                reference: reference.to_string(),
                mean: w.mean,
                mcse,
                reps: w.count,
                failed,
                flag,
            });
        }
        cells.push(CellLog { cell, n, t, alpha1: a1, alpha2: a2, attempted: cfg.replications, failed, failures });
    }
    Ok(McSummary { schema: SUMMARY_SCHEMA.to_string(), rows, cells })
}

/// Run the experiment named in the configuration.
pub fn run(cfg: &McConfig) -> Result<McSummary> {
    run_groups(cfg, &[cfg.experiment])
}

/// Run on a dedicated pool of `threads` workers.
pub fn run_with_threads(cfg: &McConfig, threads: usize) -> Result<McSummary> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    pool.install(|| run(cfg))
}

pub fn run_factor_mc(cfg: &McConfig) -> Result<McSummary> {
    run_groups(cfg, &[Experiment::FactorLosses])
}

pub fn run_joint_normality_mc(cfg: &McConfig) -> Result<McSummary> {
    run_groups(cfg, &[Experiment::JointNormality])
}

pub fn run_element_tests_mc(cfg: &McConfig) -> Result<McSummary> {
    run_groups(cfg, &[Experiment::ElementTests])
}

/// Every aug-reg metric group from a single pass over the replications.
pub fn run_augreg_mc(cfg: &McConfig) -> Result<McSummary> {
    run_groups(
        cfg,
        &[Experiment::AugregLosses, Experiment::AugregJoint, Experiment::AugregTests, Experiment::Coverage],
    )
}

/// Frequency of `chi2_r` draws above the `1 - NOMINAL_SIZE` quantile, as a
/// sanity control of the rejection machinery.
pub fn chi2_control(r: usize, reps: usize, seed: u64) -> Result<Welford> {
    let crit = chi2_quantile(r, 1.0 - NOMINAL_SIZE)?;
    let mut acc = Welford::default();
    for rep in 0..reps {
        let mut rng = replication_rng(seed, 0, rep);
        let q: f64 = (0..r).map(|_| StandardNormal.sample(&mut rng)).map(|z: f64| z * z).sum();
        acc.push(indicator(q > crit));
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn welford_merge_matches_sequential() {
        let xs: Vec<f64> = (0..101).map(|i| ((i * 37) % 17) as f64 * 0.3 - 1.0).collect();
        let mut all = Welford::default();
        xs.iter().for_each(|&x| all.push(x));
        for split in [0, 1, 50, 100, 101] {
            let (mut a, mut b) = (Welford::default(), Welford::default());
            xs[..split].iter().for_each(|&x| a.push(x));
            xs[split..].iter().for_each(|&x| b.push(x));
            let m = a.merge(&b);
            assert_eq!(m.count, all.count);
            assert!((m.mean - all.mean).abs() < 1e-12);
            assert!((m.m2 - all.m2).abs() < 1e-10);
        }
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        assert!((all.sd().unwrap() - var.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn welford_merge_is_associative() {
        let mut parts = [Welford::default(); 3];
        for (i, p) in parts.iter_mut().enumerate() {
            for j in 0..(5 + i * 3) {
                p.push((i * 10 + j) as f64 * 0.7);
            }
        }
        let left = parts[0].merge(&parts[1]).merge(&parts[2]);
        let right = parts[0].merge(&parts[1].merge(&parts[2]));
        assert_eq!(left.count, right.count);
        assert!((left.mean - right.mean).abs() < 1e-12);
        assert!((left.m2 - right.m2).abs() < 1e-9);
    }

    #[test]
    fn single_value_has_no_mcse() {
        let mut w = Welford::default();
        w.push(3.0);
        assert_eq!(w.mcse(), None);
    }

    #[test]
    fn streams_are_distinct_and_reproducible() {
        use rand::Rng;
        let a: u64 = replication_rng(1, 0, 0).random();
        let b: u64 = replication_rng(1, 0, 1).random();
        let c: u64 = replication_rng(1, 1, 0).random();
        assert_eq!(a, replication_rng(1, 0, 0).random::<u64>());
        assert!(a != b && a != c && b != c);
    }

    #[test]
    fn experiment_names_round_trip() {
        for e in Experiment::ALL {
            assert_eq!(e.name().parse::<Experiment>().unwrap(), e);
        }
        assert!(matches!("nope".parse::<Experiment>(), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn config_validation() {
        let mut cfg = McConfig::single(Experiment::FactorLosses, (1.0, 1.0), 20, 20, 0);
        assert!(cfg.validate().is_err());
        cfg.replications = 3;
        assert!(cfg.validate().is_ok());
        cfg.sizes = vec![(9, 20)];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn noiseless_losses_vanish() {
        let mut cfg = McConfig::single(Experiment::FactorLosses, (1.0, 0.8), 30, 30, 4);
        cfg.sigma_e2 = 0.0;
        let s = run(&cfg).unwrap();
        assert_eq!(s.rows.len(), 7);
        for row in &s.rows {
            assert!(row.mean.abs() < 1e-8, "{} {}: {}", row.metric, row.reference, row.mean);
        }
    }

    #[test]
    fn noiseless_element_tests_fail_cleanly() {
        let mut cfg = McConfig::single(Experiment::ElementTests, (1.0, 1.0), 20, 20, 3);
        cfg.sigma_e2 = 0.0;
        assert!(matches!(run(&cfg), Err(Error::TooManyFailures { failed: 3, total: 3, .. })));
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let mut cfg = McConfig::single(Experiment::ElementTests, (1.0, 0.9), 30, 30, 40);
        cfg.designs.push((0.8, 0.6));
        let one = run_with_threads(&cfg, 1).unwrap();
        let four = run_with_threads(&cfg, 4).unwrap();
        assert_eq!(one.to_csv(), four.to_csv());
        assert_eq!(one, four);
    }

    #[test]
    fn augreg_groups_all_report() {
        let cfg = McConfig::single(Experiment::Coverage, (1.0, 1.0), 30, 30, 5);
        let s = run_augreg_mc(&cfg).unwrap();
        for e in [Experiment::AugregLosses, Experiment::AugregJoint, Experiment::AugregTests, Experiment::Coverage] {
            assert!(s.rows.iter().any(|r| r.experiment == e), "{e}");
        }
        let only = run(&cfg).unwrap();
        assert!(only.rows.iter().all(|r| r.experiment == Experiment::Coverage));
        assert_eq!(only.rows.len(), 8);
    }

    #[test]
    fn one_replication_flags_missing_mcse() {
        let cfg = McConfig::single(Experiment::FactorLosses, (1.0, 1.0), 20, 20, 1);
        let s = run(&cfg).unwrap();
        assert!(s.rows.iter().all(|r| r.mcse.is_none() && r.flag == RowFlag::McseAbsent));
        let line = s.to_csv().lines().nth(1).unwrap().to_string();
        assert!(line.ends_with(",,1,0,mcse_absent"), "{line}");
    }

    #[test]
    fn summary_csv_shape() {
        let cfg = McConfig::single(Experiment::JointNormality, (1.0, 1.0), 20, 20, 10);
        let s = run(&cfg).unwrap();
        let csv = s.to_csv();
        let width = SUMMARY_HEADER.split(',').count();
        assert!(csv.lines().all(|l| l.split(',').count() == width));
        assert_eq!(csv.lines().count(), 1 + 6);
    }

    #[test]
    fn chi2_control_is_nominal() {
        let w = chi2_control(2, 20000, 7).unwrap();
        assert!((w.mean - NOMINAL_SIZE).abs() < 3.0 * w.mcse().unwrap());
    }
}
