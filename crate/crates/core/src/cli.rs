//! Command-line surface: oracle energies, condition audits, cancellation
//! checks, and lower-bound sweeps.

use std::fmt::Write as _;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use crate::conditions::{
    audit_metrics, audit_two_four, cancel_check, CancelReport, ConditionReport, TwoFourCondition, METRIC_TOL,
    TWO_FOUR_TOL,
};
use crate::error::{Error, Result};
use crate::hamiltonians::{hubbard_chain, pairing, random_two_body, IntegralSet};
use crate::opalg::MetricKind;
use crate::oracle::{compute_rdm, ground_state_capped, RdmTensor, MAX_SECTOR_DIMENSION};
use crate::solver::{lower_bound, ConditionSet, SolverOptions, SolverResult};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VIOLATION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RESOURCE: i32 = 3;
pub const EXIT_MALFORMED: i32 = 4;

/// Slack allowed between adjacent bounds of a nested sweep.
const MONOTONE_SLACK: f64 = 1e-6;

#[derive(Debug, Parser)]
#[command(name = "rdmkit", version, about = "N-representability conditions for two-particle reduced density matrices")]
pub struct RunConfig {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Exact ground-state energy of a model in one particle-number sector.
    Oracle(OracleArgs),
    /// Metric-matrix and (2,4) audits of a 2-RDM, or cancellation checks.
    Audit(AuditArgs),
    /// Variational lower bounds across nested condition sets.
    Bound(BoundArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Pairing,
    Hubbard,
    Random,
    File,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Format {
    Table,
    #[default]
    Json,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Hamiltonian generator.
    #[arg(long, value_enum)]
    pub model: Option<ModelKind>,
    /// Pairing: number of levels (two spin orbitals each); level energies default to 0.
    #[arg(long)]
    pub levels: Option<usize>,
    /// Pairing: comma-separated level energies.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub eps: Option<Vec<f64>>,
    /// Pairing: coupling strength.
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub g: f64,
    /// Hubbard: number of sites.
    #[arg(long)]
    pub sites: Option<usize>,
    /// Hubbard: hopping amplitude.
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub t: f64,
    /// Hubbard: on-site repulsion.
    #[arg(long = "U", default_value_t = 4.0, allow_hyphen_values = true)]
    pub u: f64,
    /// Hubbard: close the chain into a ring.
    #[arg(long)]
    pub periodic: bool,
    /// Random: number of spin orbitals (also the orbital count for cancellation checks).
    #[arg(long)]
    pub r: Option<usize>,
    /// Random: integral scale.
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    /// File: integral file path.
    #[arg(long)]
    pub integrals: Option<PathBuf>,
    /// Particle number.
    #[arg(long)]
    pub n: Option<usize>,
    /// Seed for every random choice.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Write output here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Largest sector dimension diagonalized.
    #[arg(long, default_value_t = MAX_SECTOR_DIMENSION)]
    pub max_dim: usize,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct AuditArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// 2-RDM JSON file to audit instead of a model ground state.
    #[arg(long, conflicts_with = "model")]
    pub rdm: Option<PathBuf>,
    /// Run cancellation checks on the (2,4) catalogue rows instead of auditing an RDM.
    #[arg(long)]
    pub cancel_check: bool,
    /// Catalogue row (1-8); all rows when omitted.
    #[arg(long)]
    pub row: Option<usize>,
    /// Use the particle-hole dual rows.
    #[arg(long)]
    pub dual: bool,
    /// Random coefficient draws per cancellation check.
    #[arg(long, default_value_t = 5)]
    pub draws: usize,
    /// Random starts per (2,4) violation search.
    #[arg(long, default_value_t = 2)]
    pub restarts: usize,
    /// Skip the (2,4) violation searches.
    #[arg(long)]
    pub metrics_only: bool,
    #[arg(long, default_value_t = MAX_SECTOR_DIMENSION)]
    pub max_dim: usize,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct BoundArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Comma-separated conditions (e.g. D2,Q2,G2); the full nested sweep when omitted.
    #[arg(long)]
    pub conditions: Option<String>,
    #[arg(long, default_value_t = SolverOptions::default().max_iterations)]
    pub max_iterations: usize,
    #[arg(long, default_value_t = SolverOptions::default().psd_tol)]
    pub tol: f64,
    /// Write the final ²D of the last row here.
    #[arg(long)]
    pub d2_out: Option<PathBuf>,
    #[arg(long, default_value_t = MAX_SECTOR_DIMENSION)]
    pub max_dim: usize,
    #[command(flatten)]
    pub output: OutputArgs,
}

/// Usage errors detected after flag parsing.
#[derive(Debug)]
struct Usage(String);

enum Failure {
    Usage(Usage),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<Usage> for Failure {
    fn from(e: Usage) -> Self {
        Failure::Usage(e)
    }
}

type CmdResult<T> = std::result::Result<T, Failure>;

fn usage<T>(msg: impl Into<String>) -> CmdResult<T> {
    Err(Failure::Usage(Usage(msg.into())))
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Domain(_) => EXIT_USAGE,
        Error::Resource(_) => EXIT_RESOURCE,
        Error::Malformed(_) | Error::Json(_) | Error::Io(_) => EXIT_MALFORMED,
        Error::NotTwoBodyReducible { .. } => EXIT_VIOLATION,
    }
}

impl ModelArgs {
    fn integrals(&self) -> CmdResult<IntegralSet> {
        let Some(model) = self.model else { return usage("--model is required") };
        Ok(match model {
            ModelKind::Pairing => {
                let eps = match (&self.eps, self.levels) {
                    (Some(e), Some(l)) if e.len() != l => {
                        return usage(format!("--levels {l} disagrees with {} values in --eps", e.len()))
                    }
                    (Some(e), _) => e.clone(),
                    (None, Some(l)) => vec![0.0; l],
                    (None, None) => return usage("pairing needs --levels or --eps"),
                };
                pairing(&eps, self.g)?
            }
            ModelKind::Hubbard => {
                let Some(sites) = self.sites else { return usage("hubbard needs --sites") };
                hubbard_chain(sites, self.t, self.u, self.periodic)?
            }
            ModelKind::Random => {
                let Some(r) = self.r else { return usage("random needs --r") };
                random_two_body(r, self.seed, self.scale)?
            }
            ModelKind::File => {
                let Some(path) = &self.integrals else { return usage("file needs --integrals") };
                IntegralSet::read(path)?
            }
        })
    }

    fn particles(&self) -> CmdResult<usize> {
        match self.n {
            Some(n) => Ok(n),
            None => usage("--n is required"),
        }
    }
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct OracleOutput {
    pub energy: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub r: usize,
    pub degenerate: bool,
    pub gap: Option<f64>,
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct BoundOutput {
    #[serde(rename = "N")]
    pub n: usize,
    pub r: usize,
    pub oracle: Option<f64>,
    pub monotone: bool,
    pub rows: Vec<SolverResult>,
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| v.to_string())
}

fn emit(output: &OutputArgs, json: String, table: String, stdout: &mut dyn Write) -> Result<()> {
    let text = match output.format {
        Format::Json => json,
        Format::Table => table,
    };
    match &output.out {
        Some(path) => std::fs::write(path, text + "\n")?,
        None => writeln!(stdout, "{text}")?,
    }
    Ok(())
}

fn cmd_oracle(args: &OracleArgs, stdout: &mut dyn Write) -> CmdResult<i32> {
    let ham = args.model.integrals()?;
    let n = args.model.particles()?;
    let gs = ground_state_capped(&ham, n, args.max_dim)?;
    let out = OracleOutput {
        energy: gs.energy,
        n,
        r: ham.r,
        degenerate: gs.degenerate,
        gap: gs.gap.is_finite().then_some(gs.gap),
    };
    let table = format!(
        "{:<22} {:>3} {:>3} {:<10} {}\n{:<22} {:>3} {:>3} {:<10} {}",
        "energy", "N", "r", "degenerate", "gap", out.energy, out.n, out.r, out.degenerate, fmt_opt(out.gap)
    );
    emit(&args.output, serde_json::to_string_pretty(&out).map_err(Error::from)?, table, stdout)?;
    Ok(EXIT_OK)
}

fn report_table(reports: &[ConditionReport]) -> String {
    let mut s = format!("{:<12} {:>9} {:>24} {}", "condition", "dimension", "minEigenvalue", "violated");
    for r in reports {
        let _ = write!(s, "\n{:<12} {:>9} {:>24} {}", r.kind, r.dimension, r.min_eigenvalue, r.violated);
    }
    s
}

fn cancel_table(reports: &[CancelReport]) -> String {
    let mut s = format!("{:<12} {:>3} {:>6} {:>24} {}", "condition", "r", "draws", "maxResidual", "passed");
    for r in reports {
        let _ = write!(s, "\n{:<12} {:>3} {:>6} {:>24} {}", r.condition, r.r, r.draws, r.max_residual, r.passed);
    }
    s
}

fn cmd_audit(args: &AuditArgs, stdout: &mut dyn Write) -> CmdResult<i32> {
    if args.cancel_check {
        let r = args.model.r.unwrap_or(4);
        let rows: Vec<usize> = match args.row {
            Some(row) => vec![row],
            None => (1..=8).collect(),
        };
        let conds = rows.into_iter().map(|i| TwoFourCondition::new(i, args.dual)).collect::<Result<Vec<_>>>()?;
        let reports = conds
            .par_iter()
            .map(|c| cancel_check(c, r, args.draws, args.model.seed))
            .collect::<Result<Vec<_>>>()?;
        let code = if reports.iter().all(|r| r.passed) { EXIT_OK } else { EXIT_VIOLATION };
        emit(&args.output, serde_json::to_string_pretty(&reports).map_err(Error::from)?, cancel_table(&reports), stdout)?;
        return Ok(code);
    }
    let d2 = match &args.rdm {
        Some(path) => {
            let d2 = RdmTensor::from_json(&std::fs::read_to_string(path).map_err(Error::from)?)?;
            if d2.p != 2 {
                return Err(Error::Malformed(format!("expected a 2-RDM, got p = {}", d2.p)).into());
            }
            if d2.n < 2 {
                return Err(Error::Malformed(format!("2-RDM needs N >= 2, got {}", d2.n)).into());
            }
            d2
        }
        None => {
            let ham = args.model.integrals()?;
            let n = args.model.particles()?;
            let gs = ground_state_capped(&ham, n, args.max_dim)?;
            compute_rdm(&gs.state, 2)?
        }
    };
    let mut reports = audit_metrics(&d2, &MetricKind::ALL, METRIC_TOL)?;
    if !args.metrics_only {
        reports.extend(audit_two_four(&d2, args.restarts, args.model.seed, TWO_FOUR_TOL)?);
    }
    let code = if reports.iter().any(|r| r.violated) { EXIT_VIOLATION } else { EXIT_OK };
    emit(&args.output, serde_json::to_string_pretty(&reports).map_err(Error::from)?, report_table(&reports), stdout)?;
    Ok(code)
}

/// True when consecutive energies never drop by more than the slack.
pub fn is_monotone(energies: &[f64]) -> bool {
    energies.windows(2).all(|w| w[1] >= w[0] - MONOTONE_SLACK)
}

fn cmd_bound(args: &BoundArgs, stdout: &mut dyn Write) -> CmdResult<i32> {
    let ham = args.model.integrals()?;
    let n = args.model.particles()?;
    if n < 2 {
        return usage("bounds need --n >= 2");
    }
    let sets: Vec<ConditionSet> = match &args.conditions {
        Some(s) => vec![ConditionSet::parse(s)?],
        None => ConditionSet::NESTED.to_vec(),
    };
    let opts = SolverOptions { max_iterations: args.max_iterations, psd_tol: args.tol, ..SolverOptions::default() };
    let rows = sets.par_iter().map(|&c| lower_bound(&ham, n, c, &opts)).collect::<Result<Vec<_>>>()?;
    let oracle = match ground_state_capped(&ham, n, args.max_dim) {
        Ok(gs) => Some(gs.energy),
        Err(Error::Resource(_)) => None,
        Err(e) => return Err(e.into()),
    };
    let mut energies: Vec<f64> = rows.iter().map(|r| r.energy).collect();
    energies.extend(oracle);
    let out = BoundOutput { n, r: ham.r, oracle, monotone: is_monotone(&energies), rows };
    if let Some(path) = &args.d2_out {
        if let Some(d2) = out.rows.last().and_then(|r| r.d2.as_ref()) {
            std::fs::write(path, d2.to_json()?).map_err(Error::from)?;
        }
    }
    let mut table = format!(
        "{:<14} {:>24} {:>24} {:>24} {:>10} {}",
        "conditions", "energy", "primalFeasibility", "conditionFeasibility", "iterations", "converged"
    );
    for r in &out.rows {
        let _ = write!(
            table,
            "\n{:<14} {:>24} {:>24} {:>24} {:>10} {}",
            r.conditions, r.energy, r.primal_feasibility, r.condition_feasibility, r.iterations, r.converged
        );
    }
    let _ = write!(table, "\n{:<14} {:>24}\nmonotone: {}", "oracle", fmt_opt(out.oracle), out.monotone);
    let code = if out.rows.iter().all(|r| r.converged) && out.monotone { EXIT_OK } else { EXIT_VIOLATION };
    emit(&args.output, serde_json::to_string_pretty(&out).map_err(Error::from)?, table, stdout)?;
    Ok(code)
}

/// Parses `args` (including the program name) and runs the command, writing
/// results to `stdout` and diagnostics to `stderr`. Returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let config = match RunConfig::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            let _ = if e.use_stderr() { write!(stderr, "{rendered}") } else { write!(stdout, "{rendered}") };
            return code;
        }
    };
    let result = match &config.command {
        Command::Oracle(a) => cmd_oracle(a, stdout),
        Command::Audit(a) => cmd_audit(a, stdout),
        Command::Bound(a) => cmd_bound(a, stdout),
    };
    match result {
        Ok(code) => code,
        Err(Failure::Usage(Usage(msg))) => {
            let _ = writeln!(stderr, "error: {msg}\n\nFor more information, try '--help'.");
            EXIT_USAGE
        }
        Err(Failure::Lib(e)) => {
            let _ = writeln!(stderr, "error: {e}");
            exit_code(&e)
        }
    }
}

/// Caps the global thread pool from `RDMKIT_THREADS`.
pub fn configure_threads() -> std::result::Result<(), String> {
    let Ok(value) = std::env::var("RDMKIT_THREADS") else { return Ok(()) };
    let threads: usize = value.trim().parse().map_err(|_| format!("RDMKIT_THREADS must be a positive integer, got '{value}'"))?;
    if threads == 0 {
        return Err("RDMKIT_THREADS must be positive".into());
    }
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().map_err(|e| e.to_string())
}
