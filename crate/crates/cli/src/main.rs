use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use wfpc_core::augreg::SandwichMode;
use wfpc_core::montecarlo::Experiment;
use wfpc_core::Error;

mod commands;
mod presets;

#[derive(Debug, Parser)]
#[command(name = "wfpc", version, about = "Weak-factor principal components toolkit")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Seed for any random draws; overrides the seed in a config or preset.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Format of the report written to stdout and of tabular outputs.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Worker threads for Monte Carlo runs.
    #[arg(long, global = true, env = "WFPC_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a factor panel and write its parts as CSV matrices.
    Simulate {
        /// Design as JSON.
        #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
        config: Option<PathBuf>,
        /// Built-in design: paper-7.1-nonsparse or paper-7.1-sparse.
        #[arg(long)]
        preset: Option<String>,
    },
    /// Principal-component fit of a T x N panel.
    Fit {
        #[arg(long)]
        x: PathBuf,
        #[arg(long)]
        r: usize,
    },
    /// Pseudo-true rotation from structural factors and loadings.
    Rotate {
        #[arg(long)]
        fstar: PathBuf,
        #[arg(long)]
        bstar: PathBuf,
        /// Panel for the data-dependent rotations; requires the factor count from --fstar.
        #[arg(long)]
        x: Option<PathBuf>,
    },
    /// Feasible z statistics for every factor and loading entry.
    Infer {
        #[arg(long)]
        x: PathBuf,
        #[arg(long)]
        r: usize,
        /// Reference factors (T x r); the fit is aligned to them.
        #[arg(long)]
        f_ref: Option<PathBuf>,
        /// Reference loadings (N x r).
        #[arg(long)]
        b_ref: Option<PathBuf>,
        /// HAC bandwidth; defaults to floor(4 (T/100)^(2/9)).
        #[arg(long)]
        bandwidth: Option<usize>,
    },
    /// Factor-augmented regression and h-step forecast.
    Augreg {
        /// Targets, one per line: row t holds y_{t+h}.
        #[arg(long)]
        y: PathBuf,
        /// Panel from which the factors are estimated.
        #[arg(long)]
        x: PathBuf,
        #[arg(long)]
        r: usize,
        /// Observed controls (T x L).
        #[arg(long)]
        w: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        h: usize,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        #[arg(long, value_enum, default_value_t = CovChoice::Heteroskedastic)]
        cov_mode: CovChoice,
    },
    /// Monte Carlo experiment over a design grid.
    Mc {
        #[arg(long, value_parser = parse_experiment)]
        experiment: Option<Experiment>,
        /// Built-in grid: paper-7.1 or paper-7.1-sparse.
        #[arg(long, conflicts_with = "config")]
        preset: Option<String>,
        /// Grid as JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        reps: Option<usize>,
        /// Sizes as NxT pairs, e.g. 50x50,100x100.
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<String>>,
        /// Designs as a1:a2 pairs, e.g. 1.0:0.9,0.7:0.5.
        #[arg(long, value_delimiter = ',')]
        designs: Option<Vec<String>>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CovChoice {
    Heteroskedastic,
    Homoskedastic,
}

impl From<CovChoice> for SandwichMode {
    fn from(c: CovChoice) -> Self {
        match c {
            CovChoice::Heteroskedastic => SandwichMode::Heteroskedastic,
            CovChoice::Homoskedastic => SandwichMode::Homoskedastic,
        }
    }
}

fn parse_experiment(s: &str) -> Result<Experiment, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn report_error(kind: &str, message: &str, code: i32) -> ExitCode {
    let body = serde_json::json!({ "error": kind, "message": message, "exit_code": code });
    eprintln!("{body}");
    ExitCode::from(code as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            if matches!(err.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = err.print();
                return ExitCode::SUCCESS;
            }
            return report_error("usage", err.to_string().trim(), 2);
        }
    };
    let common = cli.common.clone();
    let result = match cli.command {
        Command::Simulate { config, preset } => commands::simulate(&common, config.as_deref(), preset.as_deref()),
        Command::Fit { x, r } => commands::fit(&common, &x, r),
        Command::Rotate { fstar, bstar, x } => commands::rotate(&common, &fstar, &bstar, x.as_deref()),
        Command::Infer { x, r, f_ref, b_ref, bandwidth } => {
            commands::infer(&common, &x, r, f_ref.as_deref(), b_ref.as_deref(), bandwidth)
        }
        Command::Augreg { y, x, r, w, h, level, cov_mode } => {
            commands::augreg(&common, &commands::AugregArgs { y, x, r, w, h, level, mode: cov_mode.into() })
        }
        Command::Mc { experiment, preset, config, reps, sizes, designs } => commands::mc(
            &common,
            &commands::McArgs { experiment, preset, config, reps, sizes, designs },
        ),
    };
    match result {
        Ok(report) => {
            print!("{report}");
            ExitCode::SUCCESS
        }
        Err(err) => report_error(err.kind(), &err.to_string(), err.exit_code()),
    }
}
