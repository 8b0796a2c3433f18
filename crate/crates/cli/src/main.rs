use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use gmport::em::{fit_em, EmOptions};
use gmport::graphform::export_cone_program;
use gmport::io::{parse_bounds, parse_grid, parse_model_json, parse_returns_csv, parse_weights, write_cdf_csv};
use gmport::{markowitz_solve, EgmProblem, EvarMethod, EvarOptions, EvarProblem, FeasibleSet, GmModel, SolveOptions};
use nalgebra::DVector;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "gmport", version, about = "Portfolio construction under Gaussian-mixture returns")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a Gaussian mixture to a returns CSV and write the model JSON.
    Fit {
        #[arg(long)]
        returns: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Maximize expected exponential utility.
    SolveEgm {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        gamma: f64,
        /// `lower:upper`, one pair for all assets or one per asset.
        #[arg(long)]
        bounds: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Minimize entropic value at risk.
    SolveEvar {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        bounds: Option<String>,
        /// alternating, approx, conic, joint or gaussian.
        #[arg(long, default_value = "alternating")]
        method: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean-variance portfolio on the mixture's overall mean and covariance.
    SolveMarkowitz {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        gamma: f64,
        #[arg(long)]
        bounds: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the portfolio return CDF over a grid as CSV.
    Cdf {
        #[arg(long)]
        model: PathBuf,
        /// Comma-separated portfolio weights.
        #[arg(long, allow_hyphen_values = true)]
        weights: String,
        /// `start:stop:steps`.
        #[arg(long, allow_hyphen_values = true)]
        grid: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the EVaR cone program as a text fixture.
    EvarExport {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        bounds: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Usage(String),
    Data(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

impl From<gmport::GmError> for Failure {
    fn from(e: gmport::GmError) -> Self {
        Failure::Data(e.into())
    }
}

type Outcome = std::result::Result<bool, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> anyhow::Result<()> {
    match out {
        Some(path) => fs::write(path, bytes).with_context(|| format!("writing {}", path.display())),
        None => std::io::stdout().write_all(bytes).context("writing to stdout"),
    }
}

fn emit_json<T: serde::Serialize>(out: Option<&Path>, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    emit(out, text.as_bytes())
}

fn load_model(path: &Path) -> anyhow::Result<GmModel> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_model_json(&text).with_context(|| format!("loading model {}", path.display()))
}

fn feasible_set(bounds: Option<&str>, n: usize) -> Result<FeasibleSet, Failure> {
    match bounds {
        None => Ok(FeasibleSet::budget(n)),
        Some(spec) => parse_bounds(spec, n).map_err(|e| match e {
            gmport::GmError::Parse { message, .. } => usage(format!("--bounds: {message}")),
            other => Failure::Data(anyhow::Error::from(other).context("--bounds")),
        }),
    }
}

fn check_gamma(gamma: f64) -> Result<(), Failure> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(usage(format!("--gamma must be positive, got {gamma}")))
    }
}

fn check_alpha(alpha: f64) -> Result<(), Failure> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(usage(format!("--alpha must lie in (0, 1), got {alpha}")))
    }
}

fn cmd_fit(returns: &Path, k: usize, seed: u64, out: Option<&Path>) -> Outcome {
    if k == 0 {
        return Err(usage("--k must be at least 1"));
    }
    let text = fs::read_to_string(returns).with_context(|| format!("reading {}", returns.display()))?;
    let data = parse_returns_csv(&text).with_context(|| format!("parsing {}", returns.display()))?;
    let fit = fit_em(&data.data, k, seed, &EmOptions::default())?;
    for w in &fit.warnings {
        eprintln!("warning: {w}");
    }
    emit(out, gmport::io::model_to_json(&fit.model)?.as_bytes())?;
    eprintln!("log-likelihood: {:.6}", fit.log_likelihood);
    for (i, (p, mu)) in fit.model.weights().iter().zip(fit.model.means()).enumerate() {
        let mean: Vec<String> = mu.iter().map(|v| format!("{v:.6}")).collect();
        eprintln!("component {}: weight {p:.4}, mean [{}]", i + 1, mean.join(", "));
    }
    Ok(fit.converged)
}

fn cmd_solve_egm(model: &Path, gamma: f64, bounds: Option<&str>, out: Option<&Path>) -> Outcome {
    check_gamma(gamma)?;
    let model = load_model(model)?;
    let set = feasible_set(bounds, model.n())?;
    let report = EgmProblem::new(model, gamma, set)?.solve(&SolveOptions::default());
    emit_json(out, &report)?;
    Ok(report.converged)
}

fn cmd_solve_evar(model: &Path, alpha: f64, bounds: Option<&str>, method: &str, out: Option<&Path>) -> Outcome {
    check_alpha(alpha)?;
    let method: EvarMethod = method.parse().map_err(|e: gmport::GmError| usage(format!("--method: {e}")))?;
    let model = load_model(model)?;
    let set = feasible_set(bounds, model.n())?;
    let report = EvarProblem::new(model, alpha, set)?.solve(method, &EvarOptions::default())?;
    emit_json(out, &report)?;
    Ok(report.converged)
}

fn cmd_solve_markowitz(model: &Path, gamma: f64, bounds: Option<&str>, out: Option<&Path>) -> Outcome {
    check_gamma(gamma)?;
    let model = load_model(model)?;
    let set = feasible_set(bounds, model.n())?;
    let (mu, sigma) = model.mixture_moments();
    let report = markowitz_solve(&mu, &sigma, gamma, &set, &SolveOptions::default())?;
    emit_json(out, &report)?;
    Ok(report.converged)
}

fn cmd_cdf(model: &Path, weights: &str, grid: &str, out: Option<&Path>) -> Outcome {
    let w = parse_weights(weights).map_err(|e| usage(format!("--weights: {e}")))?;
    let grid = parse_grid(grid).map_err(|e| usage(format!("--grid: {e}")))?;
    let model = load_model(model)?;
    if w.len() != model.n() {
        return Err(usage(format!("--weights has {} entries, model has {} assets", w.len(), model.n())));
    }
    let proj = model.project(&DVector::from_vec(w))?;
    let rows: Vec<(f64, f64)> = grid.points().into_iter().map(|a| (a, proj.cdf(model.weights(), a))).collect();
    let mut buf = Vec::new();
    write_cdf_csv(&mut buf, &rows)?;
    emit(out, &buf)?;
    Ok(true)
}

fn cmd_evar_export(model: &Path, alpha: f64, bounds: Option<&str>, out: Option<&Path>) -> Outcome {
    check_alpha(alpha)?;
    let model = load_model(model)?;
    let set = feasible_set(bounds, model.n())?;
    let program = export_cone_program(&model, alpha, &set)?;
    emit(out, program.to_text().as_bytes())?;
    Ok(true)
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Fit { returns, k, seed, out } => cmd_fit(&returns, k, seed, out.as_deref()),
        Command::SolveEgm { model, gamma, bounds, out } => {
            cmd_solve_egm(&model, gamma, bounds.as_deref(), out.as_deref())
        }
        Command::SolveEvar { model, alpha, bounds, method, out } => {
            cmd_solve_evar(&model, alpha, bounds.as_deref(), &method, out.as_deref())
        }
        Command::SolveMarkowitz { model, gamma, bounds, out } => {
            cmd_solve_markowitz(&model, gamma, bounds.as_deref(), out.as_deref())
        }
        Command::Cdf { model, weights, grid, out } => cmd_cdf(&model, &weights, &grid, out.as_deref()),
        Command::EvarExport { model, alpha, bounds, out } => {
            cmd_evar_export(&model, alpha, bounds.as_deref(), out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("warning: solver did not converge");
            ExitCode::from(EXIT_NOT_CONVERGED)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_DATA)
        }
    }
}
