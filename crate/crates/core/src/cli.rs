//! Command-line front end: TOML configuration, run/sweep/gamma/check
//! subcommands and CSV output.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checks::run_all;
use crate::diagnostics::{ConvergenceTable, DiagnosticsRecord};
use crate::error::PnpError;
use crate::forms::{gamma_of_beta1, superconvergent_beta1};
use crate::problems::UserProblem;
use crate::runner::{sweep_with, Beta1, DtRule, ErrorEntry, MethodKind, ProblemSource, RunConfig, Simulation, SCHEMA_VERSION};
use crate::time::{StepReport, TimeOrder};

/// Environment variable naming the directory relative output paths resolve
/// against.
pub const OUTPUT_ROOT_ENV: &str = "PNP_OUTPUT_ROOT";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("solver failure: {0}")]
    Solver(PnpError),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0} check(s) failed")]
    ChecksFailed(usize),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver(_) | CliError::Io { .. } => 3,
            CliError::ChecksFailed(_) => 4,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodName {
    Fem,
    Ddg,
}

const SUPERCONVERGENT: &str = "superconvergent";

fn is_superconvergent(token: &str) -> bool {
    token == SUPERCONVERGENT || token == "paper"
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Beta1Spec {
    Value(f64),
    /// `"superconvergent"` selects `1/(2k(k+1))`.
    Token(String),
}

impl Default for Beta1Spec {
    fn default() -> Self {
        Beta1Spec::Token(SUPERCONVERGENT.into())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DtSpec {
    pub absolute: Option<f64>,
    pub coefficient: Option<f64>,
    pub exponent: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default)]
    pub n: Vec<usize>,
}

fn default_beta0() -> f64 {
    4.0
}

fn default_order() -> u8 {
    1
}

/// On-disk configuration. Unknown keys are rejected.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    /// Built-in problem id, or `"user"` together with a `[user]` table.
    pub problem: String,
    pub method: MethodName,
    pub k: usize,
    #[serde(default = "default_beta0")]
    pub beta0: f64,
    #[serde(default)]
    pub beta1: Beta1Spec,
    pub n: usize,
    #[serde(default = "default_order")]
    pub order: u8,
    #[serde(default)]
    pub dt: DtSpec,
    pub end_time: Option<f64>,
    #[serde(default)]
    pub limiter: bool,
    #[serde(default)]
    pub record_every: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub dump_matrix: bool,
    #[serde(default)]
    pub output: OutputSpec,
    pub user: Option<UserProblem>,
    #[serde(default)]
    pub sweep: SweepSpec,
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Converts to a validated [`RunConfig`]; every error names the field.
    pub fn to_run_config(&self) -> Result<RunConfig, CliError> {
        let cfg_err = |field: &str, msg: String| CliError::Config(format!("field `{field}`: {msg}"));
        let problem = match (self.problem.as_str(), &self.user) {
            ("user", Some(u)) => ProblemSource::User(u.clone()),
            ("user", None) => return Err(cfg_err("user", "problem = \"user\" needs a [user] table".into())),
            (_, Some(_)) => return Err(cfg_err("user", "a [user] table requires problem = \"user\"".into())),
            (id, None) => ProblemSource::Builtin(id.to_string()),
        };
        let beta1 = match &self.beta1 {
            Beta1Spec::Value(v) => Beta1::Value(*v),
            Beta1Spec::Token(t) if is_superconvergent(t) => Beta1::Superconvergent,
            Beta1Spec::Token(t) => {
                return Err(cfg_err("beta1", format!("expected a number or \"{SUPERCONVERGENT}\", found {t:?}")))
            }
        };
        let order = match self.order {
            1 => TimeOrder::First,
            2 => TimeOrder::Second,
            o => return Err(cfg_err("order", format!("{o} is not 1 or 2"))),
        };
        let dt = match (self.dt.absolute, self.dt.coefficient, self.dt.exponent) {
            (None, None, None) => DtRule::Power { coefficient: 0.01, exponent: 3.0 },
            (Some(a), None, None) => DtRule::Absolute(a),
            (None, Some(c), Some(p)) => DtRule::Power { coefficient: c, exponent: p },
            _ => {
                return Err(cfg_err("dt", "give either `absolute` or both `coefficient` and `exponent`".into()));
            }
        };
        match dt {
            DtRule::Absolute(a) if !(a > 0.0 && a.is_finite()) => {
                return Err(cfg_err("dt.absolute", format!("{a} must be positive")))
            }
            DtRule::Power { coefficient, exponent } if !(coefficient > 0.0 && exponent.is_finite()) => {
                return Err(cfg_err("dt.coefficient", format!("{coefficient} must be positive")))
            }
            _ => {}
        }
        if self.k == 0 || self.k > 8 {
            return Err(cfg_err("k", format!("{} must be in 1..=8", self.k)));
        }
        if self.n == 0 {
            return Err(cfg_err("n", "must be at least 1".into()));
        }
        if !(self.beta0 > 0.0 && self.beta0.is_finite()) {
            return Err(cfg_err("beta0", format!("{} must be positive", self.beta0)));
        }
        if let Some(t) = self.end_time {
            if !(t > 0.0 && t.is_finite()) {
                return Err(cfg_err("end_time", format!("{t} must be positive")));
            }
        }
        let method = match self.method {
            MethodName::Fem => MethodKind::Fem,
            MethodName::Ddg => MethodKind::Ddg,
        };
        let cfg = RunConfig {
            problem,
            method,
            k: self.k,
            beta0: self.beta0,
            beta1,
            n: self.n,
            order,
            dt,
            end_time: self.end_time,
            limiter: self.limiter,
            record_every: self.record_every,
            seed: self.seed,
        };
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        cfg.build_problem().map_err(|e| cfg_err("problem", e.to_string()))?;
        Ok(cfg)
    }

    /// Output directory, resolved against [`OUTPUT_ROOT_ENV`] when relative.
    pub fn output_dir(&self) -> PathBuf {
        let method = match self.method {
            MethodName::Fem => "fem",
            MethodName::Ddg => "ddg",
        };
        let rel = self
            .output
            .dir
            .clone()
            .unwrap_or_else(|| format!("{}-{method}-k{}-n{}", self.problem, self.k, self.n));
        let rel = PathBuf::from(rel);
        if rel.is_absolute() {
            return rel;
        }
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) => PathBuf::from(root).join(rel),
            None => rel,
        }
    }
}

fn num(v: f64) -> String {
    // shortest round-trip representation
    format!("{v:?}")
}

pub fn write_diagnostics_csv(records: &[DiagnosticsRecord], mut w: impl Write) -> std::io::Result<()> {
    let ns = records.first().map_or(0, |r| r.mass.len());
    let mut header = vec!["t".to_string()];
    header.extend((1..=ns).map(|i| format!("mass_{i}")));
    header.push("energy_lumped".into());
    header.push("energy_exact".into());
    header.extend((1..=ns).map(|i| format!("min_cellavg_{i}")));
    header.extend((1..=ns).map(|i| format!("min_node_{i}")));
    header.push("newton_iters".into());
    header.push("limiter_hits".into());
    writeln!(w, "{}", header.join(","))?;
    for r in records {
        let mut row = vec![num(r.t)];
        row.extend(r.mass.iter().map(|&v| num(v)));
        row.push(num(r.energy.lumped));
        row.push(num(r.energy.exact));
        row.extend(r.min_cell_average.iter().map(|&v| num(v)));
        row.extend(r.min_node.iter().map(|&v| num(v)));
        row.push(r.newton_iterations.to_string());
        row.push(r.limiter_hits.to_string());
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn write_errors_csv(errors: &[ErrorEntry], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "variable,norm,value")?;
    for e in errors {
        writeln!(w, "{},{},{}", e.variable, e.norm, num(e.value))?;
    }
    Ok(())
}

/// `N, metric..., R_metric...`; the first row's rates are empty.
pub fn write_sweep_csv(table: &ConvergenceTable, mut w: impl Write) -> std::io::Result<()> {
    let mut header = vec!["N".to_string()];
    header.extend(table.metrics.iter().cloned());
    header.extend(table.metrics.iter().map(|m| format!("R_{m}")));
    writeln!(w, "{}", header.join(","))?;
    for (row, n) in table.n.iter().enumerate() {
        let mut cells = vec![n.to_string()];
        cells.extend(table.errors[row].iter().map(|&v| num(v)));
        cells.extend(table.rates[row].iter().map(|r| r.map(num).unwrap_or_default()));
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}

/// Written as `failure.toml` when a step fails.
#[derive(Debug, Clone, Serialize)]
pub struct FailureReport {
    pub schema_version: u32,
    pub step: usize,
    pub t: f64,
    pub error: String,
    /// Report of the last successful step, if any.
    pub last_report: Option<StepReport>,
}

fn write_file(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<(), CliError> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(io_err(path))?;
    fs::write(path, buf).map_err(io_err(path))
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub errors: Vec<ErrorEntry>,
    pub steps: usize,
}

/// Runs one configuration, writing `run.log`, `diagnostics.csv`,
/// `errors.csv` (and `failure.toml` on solver failure) into `dir`.
pub fn run_to_dir(cfg: RunConfig, dir: &Path, dump_matrix: bool) -> Result<RunOutcome, CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut sim = Simulation::new(cfg).map_err(CliError::Solver)?;
    let log_path = dir.join("run.log");
    fs::write(&log_path, sim.log()).map_err(io_err(&log_path))?;
    let mut last: Option<StepReport> = None;
    let failure = loop {
        if sim.is_finished() {
            break None;
        }
        match sim.step() {
            Ok(r) => last = Some(r),
            Err(e) => break Some(e),
        }
    };
    write_file(&dir.join("diagnostics.csv"), |b| write_diagnostics_csv(sim.records(), b))?;
    if let Some(e) = failure {
        let report = FailureReport {
            schema_version: SCHEMA_VERSION,
            step: sim.state().step + 1,
            t: sim.state().t + sim.dt(),
            error: e.to_string(),
            last_report: last,
        };
        let text = toml::to_string(&report).unwrap_or_else(|_| format!("error = {:?}\n", report.error));
        let path = dir.join("failure.toml");
        fs::write(&path, text).map_err(io_err(&path))?;
        return Err(CliError::Solver(e));
    }
    let errors = sim.errors().map_err(CliError::Solver)?;
    write_file(&dir.join("errors.csv"), |b| write_errors_csv(&errors, b))?;
    let m = sim.monitors();
    let mut summary = String::new();
    summary.push_str(&format!("max_mass_drift = {:?}\n", m.max_mass_drift));
    summary.push_str(&format!("max_energy_increase = {:?}\n", m.max_energy_increase));
    summary.push_str(&format!("max_dissipation_residual = {:?}\n", m.max_dissipation_residual));
    summary.push_str(&format!("min_cell_average = {:?}\n", m.min_cell_average));
    summary.push_str(&format!("min_node = {:?}\n", m.min_node));
    summary.push_str(&format!("max_newton_iterations = {}\n", m.max_newton_iterations));
    summary.push_str(&format!("limiter_hits = {}\n", m.limiter_hits));
    summary.push_str(&format!("mobility_floored = {}\n", m.mobility_floored));
    let mut log = fs::OpenOptions::new().append(true).open(&log_path).map_err(io_err(&log_path))?;
    log.write_all(summary.as_bytes()).map_err(io_err(&log_path))?;
    if dump_matrix {
        write_file(&dir.join("poisson.coo"), |b| sim.stepper().poisson().stiffness().write_coo(b))?;
        for (i, a) in sim.stepper().last_species_operators().iter().enumerate() {
            write_file(&dir.join(format!("species_{}.coo", i + 1)), |b| a.write_coo(b))?;
        }
    }
    Ok(RunOutcome { dir: dir.to_path_buf(), errors, steps: sim.n_steps() })
}

/// Runs every `n` into `dir/n{N}` and writes `dir/sweep.csv`. A failed
/// member leaves a NaN row and turns the result into an error after the
/// table is written.
pub fn sweep_to_dir(base: &RunConfig, ns: &[usize], dir: &Path) -> Result<ConvergenceTable, CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let result = sweep_with(base, ns, |cfg| {
        let sub = dir.join(format!("n{}", cfg.n));
        run_to_dir(cfg, &sub, false).map(|o| o.errors).map_err(|e| match e {
            CliError::Solver(e) => e,
            other => PnpError::InvalidArgument(other.to_string()),
        })
    })
    .map_err(|e| match e {
        PnpError::NonDoubling(_) => CliError::Config(format!("field `sweep.n`: {e}")),
        e => CliError::Solver(e),
    })?;
    write_file(&dir.join("sweep.csv"), |b| write_sweep_csv(&result.table, b))?;
    if !result.failures.is_empty() {
        let text: String = result.failures.iter().map(|(n, e)| format!("N = {n}: {e}\n")).collect();
        let path = dir.join("failures.txt");
        fs::write(&path, &text).map_err(io_err(&path))?;
        return Err(CliError::Solver(result.failures[0].1.clone()));
    }
    Ok(result.table)
}

/// Rows `(beta1, gamma, minimal beta0 for psi0 = psi1 = 1)`.
pub fn gamma_table(k: usize, beta1: &[f64]) -> Vec<(f64, f64, f64)> {
    beta1
        .iter()
        .map(|&b| {
            let g = gamma_of_beta1(k, b);
            (b, g, g)
        })
        .collect()
}

#[derive(Debug, Parser)]
#[command(name = "pnp", version, about = "Gauss-Lobatto FEM/DDG solver for the Poisson-Nernst-Planck system")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one configuration.
    Run {
        config: PathBuf,
        /// Overrides `output.dir`.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Write the final operators as coordinate-format text.
        #[arg(long)]
        dump_matrix: bool,
    },
    /// Run a refinement sweep and tabulate errors and observed orders.
    Sweep {
        config: PathBuf,
        /// Cells per axis; overrides `sweep.n`.
        #[arg(long, value_delimiter = ',')]
        n: Vec<usize>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Print the DDG stability constant and the minimal stable beta0.
    Gamma {
        #[arg(long)]
        k: usize,
        /// Values of beta1; `superconvergent` means 1/(2k(k+1)).
        #[arg(long, value_delimiter = ',', default_values_t = vec!["0".to_string(), SUPERCONVERGENT.to_string()])]
        beta1: Vec<String>,
    },
    /// Run the invariant suites.
    Check {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn resolve_output(cfg: &FileConfig, over: Option<PathBuf>) -> PathBuf {
    match over {
        Some(p) if p.is_relative() => match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) => PathBuf::from(root).join(p),
            None => p,
        },
        Some(p) => p,
        None => cfg.output_dir(),
    }
}

/// Executes a parsed command line, printing results to stdout.
pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, output, dump_matrix } => {
            let file = FileConfig::load(&config)?;
            let cfg = file.to_run_config()?;
            let dir = resolve_output(&file, output);
            let out = run_to_dir(cfg, &dir, dump_matrix || file.dump_matrix)?;
            println!("{} steps, output in {}", out.steps, out.dir.display());
            for e in out.errors.iter().filter(|e| e.norm == "l2") {
                println!("{} l2 {:e}", e.variable, e.value);
            }
            Ok(())
        }
        Command::Sweep { config, n, output } => {
            let file = FileConfig::load(&config)?;
            let cfg = file.to_run_config()?;
            let ns = if n.is_empty() { file.sweep.n.clone() } else { n };
            if ns.is_empty() {
                return Err(CliError::Config("field `sweep.n`: no refinement levels given".into()));
            }
            let dir = resolve_output(&file, output);
            let table = sweep_to_dir(&cfg, &ns, &dir)?;
            let mut out = std::io::stdout().lock();
            write_sweep_csv(&table, &mut out).map_err(io_err(Path::new("<stdout>")))?;
            Ok(())
        }
        Command::Gamma { k, beta1 } => {
            if k == 0 {
                return Err(CliError::Config("k must be at least 1".into()));
            }
            let values = beta1
                .iter()
                .map(|s| match s.as_str() {
                    s if is_superconvergent(s) => Ok(superconvergent_beta1(k)),
                    s => s.parse::<f64>().map_err(|_| CliError::Config(format!("beta1: cannot parse {s:?}"))),
                })
                .collect::<Result<Vec<_>, _>>()?;
            println!("k,beta1,gamma,min_beta0");
            for (b, g, m) in gamma_table(k, &values) {
                println!("{k},{},{},{}", num(b), num(g), num(m));
            }
            Ok(())
        }
        Command::Check { seed } => {
            let results = run_all(seed);
            let failed = results.iter().filter(|r| !r.passed).count();
            for r in &results {
                println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
            }
            if failed > 0 {
                Err(CliError::ChecksFailed(failed))
            } else {
                Ok(())
            }
        }
    }
}
