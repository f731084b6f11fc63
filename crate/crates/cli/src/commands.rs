use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use wfpc_core::augreg::{self, AugRegReport, SandwichMode};
use wfpc_core::dgp::{self, FactorDesign};
use wfpc_core::inference;
use wfpc_core::io::{self, format_f64};
use wfpc_core::montecarlo::{self, Experiment, McConfig, SUMMARY_SCHEMA};
use wfpc_core::rotation::{align_to_reference, data_rotations, RotationSet};
use wfpc_core::{pc_fit, pseudo_true_rotation, Error, Result};

use crate::{presets, Common, Format};

fn json<T: Serialize>(value: &T) -> Result<String> {
    Ok(io::to_json_pretty(value)? + "\n")
}

#[derive(Serialize)]
struct SimulateManifest<'a> {
    design: &'a FactorDesign,
    generator: &'static str,
    /// Diagonal of `B0'B0`.
    lambda: Vec<f64>,
    files: Vec<FileEntry>,
}

#[derive(Serialize)]
struct FileEntry {
    file: String,
    rows: usize,
    cols: usize,
}

pub fn simulate(common: &Common, config: Option<&Path>, preset: Option<&str>) -> Result<String> {
    let mut design: FactorDesign = match (config, preset) {
        (Some(path), _) => io::read_json(path)?,
        (None, Some(name)) => presets::design(name)?,
        (None, None) => return Err(Error::InvalidInput("either --config or --preset is required".into())),
    };
    if let Some(seed) = common.seed {
        design.seed = seed;
    }
    design.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(design.seed);
    let panel = dgp::assemble_panel(&design, &mut rng)?;
    io::ensure_dir(&common.out)?;
    let parts: [(&str, &DMatrix<f64>); 6] = [
        ("X.csv", &panel.x),
        ("F0.csv", &panel.f0),
        ("B0.csv", &panel.b0),
        ("Fstar.csv", &panel.f_star),
        ("Bstar.csv", &panel.b_star),
        ("E.csv", &panel.e),
    ];
    let mut files = Vec::new();
    for (name, m) in parts {
        io::write_matrix(&common.out.join(name), m)?;
        files.push(FileEntry { file: name.to_string(), rows: m.nrows(), cols: m.ncols() });
    }
    let lambda = (panel.b0.transpose() * &panel.b0).diagonal().iter().copied().collect();
    let manifest = SimulateManifest { design: &design, generator: "chacha20/seed_from_u64", lambda, files };
    io::write_json(&common.out.join("manifest.json"), &manifest)?;
    match common.format {
        Format::Json => json(&manifest),
        Format::Csv => {
            let mut out = String::from("file,rows,cols\n");
            for f in &manifest.files {
                out.push_str(&format!("{},{},{}\n", f.file, f.rows, f.cols));
            }
            Ok(out)
        }
    }
}

fn lambda_csv(values: &[f64]) -> String {
    let mut out = String::from("k,lambda\n");
    for (k, v) in values.iter().enumerate() {
        out.push_str(&format!("{},{}\n", k + 1, format_f64(*v)));
    }
    out
}

pub fn fit(common: &Common, x: &Path, r: usize) -> Result<String> {
    let x = io::read_matrix(x)?;
    let fit = pc_fit(&x, r)?;
    let manifest = io::export_fit(&common.out, &fit)?;
    match common.format {
        Format::Json => json(&manifest),
        Format::Csv => Ok(lambda_csv(&manifest.lambda_hat)),
    }
}

#[derive(Serialize)]
struct RotateReport {
    #[serde(with = "wfpc_core::io::matrix_rows")]
    h: DMatrix<f64>,
    lambda: Vec<f64>,
    eigen_gap: f64,
    rotations: Option<RotationSet>,
}

pub fn rotate(common: &Common, fstar: &Path, bstar: &Path, x: Option<&Path>) -> Result<String> {
    let f_star = io::read_matrix(fstar)?;
    let b_star = io::read_matrix(bstar)?;
    let rot = pseudo_true_rotation(&f_star, &b_star)?;
    io::ensure_dir(&common.out)?;
    io::write_matrix(&common.out.join("H.csv"), &rot.h)?;
    io::write_matrix(&common.out.join("F0.csv"), &rot.f0)?;
    io::write_matrix(&common.out.join("B0.csv"), &rot.b0)?;
    io::write_vector(&common.out.join("lambda.csv"), &rot.lambda_vector())?;
    let rotations = match x {
        Some(path) => {
            let x = io::read_matrix(path)?;
            let pc = align_to_reference(&pc_fit(&x, f_star.ncols())?, &rot.f0)?;
            Some(data_rotations(&f_star, &b_star, &rot.f0, &rot.b0, &pc)?)
        }
        None => None,
    };
    let report = RotateReport { h: rot.h.clone(), lambda: rot.lambda.clone(), eigen_gap: rot.eigen_gap, rotations };
    io::write_json(&common.out.join("rotation.json"), &report)?;
    match common.format {
        Format::Json => json(&report),
        Format::Csv => Ok(io::matrix_to_csv(&report.h)),
    }
}

#[derive(Serialize)]
struct InferReport {
    statistics: usize,
    bandwidth: usize,
    rejected_at_5pct: usize,
    file: String,
}

pub fn infer(
    common: &Common,
    x: &Path,
    r: usize,
    f_ref: Option<&Path>,
    b_ref: Option<&Path>,
    bandwidth: Option<usize>,
) -> Result<String> {
    let x = io::read_matrix(x)?;
    let f_ref = f_ref.map(io::read_matrix).transpose()?;
    let b_ref = b_ref.map(io::read_matrix).transpose()?;
    let mut pc = pc_fit(&x, r)?;
    if let Some(f) = &f_ref {
        pc = align_to_reference(&pc, f)?;
    }
    let bandwidth = bandwidth.unwrap_or_else(|| inference::default_bandwidth(pc.t()));
    let rows = inference::batch_statistics(&pc, f_ref.as_ref(), b_ref.as_ref(), bandwidth)?;
    io::ensure_dir(&common.out)?;
    let file = match common.format {
        Format::Csv => {
            io::write_text(&common.out.join("stats.csv"), &inference::stat_rows_to_csv(&rows))?;
            "stats.csv"
        }
        Format::Json => {
            io::write_json(&common.out.join("stats.json"), &rows)?;
            "stats.json"
        }
    };
    let report = InferReport {
        statistics: rows.len(),
        bandwidth,
        rejected_at_5pct: rows.iter().filter(|r| r.pvalue < 0.05).count(),
        file: file.to_string(),
    };
    match common.format {
        Format::Json => json(&report),
        Format::Csv => Ok(format!(
            "statistics,bandwidth,rejected_at_5pct,file\n{},{},{},{}\n",
            report.statistics, report.bandwidth, report.rejected_at_5pct, report.file
        )),
    }
}

pub struct AugregArgs {
    pub y: PathBuf,
    pub x: PathBuf,
    pub r: usize,
    pub w: Option<PathBuf>,
    pub h: usize,
    pub level: f64,
    pub mode: SandwichMode,
}

pub fn augreg(common: &Common, args: &AugregArgs) -> Result<String> {
    let y = io::read_vector(&args.y)?;
    let x = io::read_matrix(&args.x)?;
    let w = match &args.w {
        Some(path) => io::read_matrix(path)?,
        None => DMatrix::zeros(y.len(), 0),
    };
    if x.nrows() != y.len() {
        return Err(Error::Dimension(format!("panel has {} rows but y has {}", x.nrows(), y.len())));
    }
    let pc = pc_fit(&x, args.r)?;
    let fit = augreg::augreg_fit(&y, &pc.f_hat, &w, args.h, args.mode)?;
    let last = pc.t() - 1;
    let z_t = DVector::from_iterator(
        fit.delta_hat.len(),
        pc.f_hat.row(last).iter().chain(w.row(last).iter()).copied(),
    );
    let gcov = inference::gamma_hat(&pc, pc.t())?;
    let fc = augreg::forecast(&fit, &z_t, &gcov, &fit.gamma_hat(), args.level)?;
    let report = AugRegReport::new(&fit, Some(fc));
    io::ensure_dir(&common.out)?;
    io::write_json(&common.out.join("augreg.json"), &report)?;
    let csv = format!("{}\n{}\n", report.csv_header(), report.csv_row());
    io::write_text(&common.out.join("augreg.csv"), &csv)?;
    match common.format {
        Format::Json => json(&report),
        Format::Csv => Ok(csv),
    }
}

pub struct McArgs {
    pub experiment: Option<Experiment>,
    pub preset: Option<String>,
    pub config: Option<PathBuf>,
    pub reps: Option<usize>,
    pub sizes: Option<Vec<String>>,
    pub designs: Option<Vec<String>>,
}

fn parse_size(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::InvalidInput(format!("size '{s}' is not of the form NxT"));
    let (n, t) = s.trim().split_once('x').ok_or_else(bad)?;
    Ok((n.parse().map_err(|_| bad())?, t.parse().map_err(|_| bad())?))
}

fn parse_design(s: &str) -> Result<(f64, f64)> {
    let bad = || Error::InvalidInput(format!("design '{s}' is not of the form a1:a2"));
    let (a, b) = s.trim().split_once(':').ok_or_else(bad)?;
    Ok((a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?))
}

#[derive(Serialize)]
struct ConfigEcho<'a> {
    schema: &'static str,
    config: &'a McConfig,
}

#[derive(Serialize)]
struct McReport {
    rows: usize,
    failed_replications: usize,
    underpowered_rows: usize,
    files: Vec<&'static str>,
}

pub fn mc(common: &Common, args: &McArgs) -> Result<String> {
    let mut cfg = match (&args.config, &args.preset) {
        (Some(path), _) => io::read_json::<McConfig>(path)?,
        (None, preset) => {
            let name = preset.as_deref().unwrap_or("paper-7.1");
            let cfg = presets::grid(name)?;
            if args.experiment.is_none() {
                return Err(Error::InvalidInput("--experiment is required with a preset".into()));
            }
            cfg
        }
    };
    if let Some(e) = args.experiment {
        cfg.experiment = e;
    }
    if let Some(reps) = args.reps {
        cfg.replications = reps;
    }
    if let Some(seed) = common.seed {
        cfg.base_seed = seed;
    }
    if let Some(sizes) = &args.sizes {
        cfg.sizes = sizes.iter().map(|s| parse_size(s)).collect::<Result<_>>()?;
    }
    if let Some(designs) = &args.designs {
        cfg.designs = designs.iter().map(|s| parse_design(s)).collect::<Result<_>>()?;
    }
    cfg.validate()?;
    let summary = match common.threads {
        Some(n) => montecarlo::run_with_threads(&cfg, n)?,
        None => montecarlo::run(&cfg)?,
    };
    io::ensure_dir(&common.out)?;
    let csv = summary.to_csv();
    io::write_text(&common.out.join("summary.csv"), &csv)?;
    io::write_json(&common.out.join("config.echo.json"), &ConfigEcho { schema: SUMMARY_SCHEMA, config: &cfg })?;
    io::write_json(&common.out.join("failures.json"), &summary.cells)?;
    let mut files = vec!["summary.csv", "config.echo.json", "failures.json"];
    if common.format == Format::Json {
        io::write_json(&common.out.join("summary.json"), &summary)?;
        files.push("summary.json");
    }
    match common.format {
        Format::Csv => Ok(csv),
        Format::Json => json(&McReport {
            rows: summary.rows.len(),
            failed_replications: summary.failed_total(),
            underpowered_rows: summary
                .rows
                .iter()
                .filter(|r| r.flag == montecarlo::RowFlag::Underpowered)
                .count(),
            files,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_flags_parse() {
        assert_eq!(parse_size("50x60").unwrap(), (50, 60));
        assert!(parse_size("50").is_err());
        assert_eq!(parse_design("1.0:0.9").unwrap(), (1.0, 0.9));
        assert!(parse_design("a:b").is_err());
    }
}
