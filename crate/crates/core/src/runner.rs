//! Single-run and sweep drivers shared by the CLI, the acceptance suite and
//! the Python bindings.

use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;

use crate::diagnostics::{
    discrete_energy, error_energy_projection, error_l2, lumped_energy, metric_e_a, metric_e_g, positivity_report,
    rate_table, total_mass, ConvergenceTable, DiagnosticsRecord, EnergyForms,
};
use crate::error::{PnpError, Result};
use crate::forms::{check_stability, dirichlet_penalty, gamma_of_beta1, superconvergent_beta1, FormAssembler, Method, MobilityBounds};
use crate::mesh::{Mesh, Point};
use crate::problems::{builtin, ProblemSpec, UserProblem};
use crate::space::{interpolate, Field, Space};
use crate::time::{SchemeConfig, Stepper, StepReport, SystemState, TimeOrder};

/// Version of the CSV column layouts written by the CLI.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub enum ProblemSource {
    Builtin(String),
    User(UserProblem),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodKind {
    Fem,
    Ddg,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Beta1 {
    Value(f64),
    /// `1/(2k(k+1))`.
    Superconvergent,
}

impl Beta1 {
    pub fn resolve(self, k: usize) -> f64 {
        match self {
            Beta1::Value(v) => v,
            Beta1::Superconvergent => superconvergent_beta1(k),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DtRule {
    Absolute(f64),
    /// `coefficient * h^exponent`, `h` the largest cell edge length.
    Power { coefficient: f64, exponent: f64 },
}

impl DtRule {
    pub fn resolve(self, h: f64) -> f64 {
        match self {
            DtRule::Absolute(dt) => dt,
            DtRule::Power { coefficient, exponent } => coefficient * h.powf(exponent),
        }
    }

    fn describe(self) -> String {
        match self {
            DtRule::Absolute(dt) => format!("absolute {dt:e}"),
            DtRule::Power { coefficient, exponent } => format!("{coefficient} * h^{exponent}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub problem: ProblemSource,
    pub method: MethodKind,
    pub k: usize,
    pub beta0: f64,
    pub beta1: Beta1,
    /// Cells per axis.
    pub n: usize,
    pub order: TimeOrder,
    pub dt: DtRule,
    /// Overrides the problem's end time.
    pub end_time: Option<f64>,
    pub limiter: bool,
    /// Record diagnostics every this many steps (0: first and last only).
    pub record_every: usize,
    pub seed: u64,
}

impl RunConfig {
    pub fn new(problem: &str, method: MethodKind, k: usize, n: usize) -> Self {
        Self {
            problem: ProblemSource::Builtin(problem.to_string()),
            method,
            k,
            beta0: 4.0,
            beta1: Beta1::Superconvergent,
            n,
            order: TimeOrder::First,
            dt: DtRule::Power { coefficient: 0.01, exponent: 3.0 },
            end_time: None,
            limiter: false,
            record_every: 0,
            seed: 0,
        }
    }

    pub fn method(&self) -> Method {
        match self.method {
            MethodKind::Fem => Method::Fem,
            MethodKind::Ddg => Method::Ddg { beta0: self.beta0, beta1: self.beta1.resolve(self.k) },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k > 8 {
            return Err(PnpError::InvalidArgument(format!("k = {} must be in 1..=8", self.k)));
        }
        if self.n == 0 {
            return Err(PnpError::InvalidArgument("n must be positive".into()));
        }
        if let Some(t) = self.end_time {
            if !(t > 0.0 && t.is_finite()) {
                return Err(PnpError::InvalidArgument(format!("end time {t} must be positive")));
            }
        }
        if self.method == MethodKind::Ddg && !(self.beta0 > 0.0 && self.beta1.resolve(self.k).is_finite()) {
            return Err(PnpError::InvalidArgument("beta0 must be positive".into()));
        }
        Ok(())
    }

    pub fn build_problem(&self) -> Result<ProblemSpec> {
        match &self.problem {
            ProblemSource::Builtin(id) => builtin(id),
            ProblemSource::User(u) => u.build(),
        }
    }
}

/// One entry of the final error table.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorEntry {
    pub variable: String,
    pub norm: &'static str,
    pub value: f64,
}

/// Quantities tracked over every step of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Monitors {
    pub initial_mass: Vec<f64>,
    /// Largest `|M^m - M^0| / |M^0|` per species.
    pub max_mass_drift: Vec<f64>,
    /// Largest `E^{m+1} - E^m` of the lumped energy.
    pub max_energy_increase: f64,
    /// Largest `E^{m+1} - E^m + dt sum_i a_i(p_i, p_i)`.
    pub max_dissipation_residual: f64,
    /// Minima over all computed steps (the initial data excluded).
    pub min_cell_average: Vec<f64>,
    pub min_node: Vec<f64>,
    pub max_newton_iterations: usize,
    pub limiter_hits: usize,
    pub mobility_floored: bool,
}

/// A time loop for one configuration.
pub struct Simulation {
    config: RunConfig,
    problem: ProblemSpec,
    space: Arc<Space>,
    assembler: Arc<FormAssembler>,
    stepper: Stepper,
    energy: EnergyForms,
    state: SystemState,
    dt: f64,
    n_steps: usize,
    last_energy: f64,
    records: Vec<DiagnosticsRecord>,
    monitors: Monitors,
    log: String,
}

impl std::fmt::Debug for Simulation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Simulation")
            .field("problem", &self.problem.name)
            .field("step", &self.state.step)
            .field("n_steps", &self.n_steps)
            .finish()
    }
}

impl Simulation {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let problem = config.build_problem()?;
        let method = config.method();
        let counts = vec![config.n; problem.domain.dim()];
        let mesh = Mesh::new(problem.domain.clone(), &counts)?;
        let h = (0..mesh.dim()).map(|a| mesh.spacing(a)).fold(0.0, f64::max);
        let space = Space::new(mesh, config.k, method.continuity())?;
        let assembler = Arc::new(FormAssembler::new(&space, method)?);
        let end = config.end_time.unwrap_or(problem.end_time);
        let dt_target = config.dt.resolve(h);
        if !(dt_target > 0.0 && dt_target.is_finite()) {
            return Err(PnpError::InvalidArgument(format!("time step {dt_target} must be positive")));
        }
        // land exactly on the end time
        let n_steps = ((end / dt_target) - 1e-9).ceil().max(1.0) as usize;
        let dt = end / n_steps as f64;
        let mut scheme = SchemeConfig::new(config.order, dt);
        scheme.eps = problem.eps;
        scheme.limiter = config.limiter;
        let mut stepper =
            Stepper::new(&assembler, problem.species.clone(), problem.phi_bcs.clone(), scheme, problem.sources.clone())?;
        let c0 = problem
            .initial
            .iter()
            .map(|f| interpolate(&space, |x| f(0.0, x)))
            .collect::<Result<Vec<_>>>()?;
        let state = stepper.initial_state(c0, 0.0)?;
        let energy = EnergyForms::new(stepper.poisson(), &assembler)?;
        let last_energy = lumped_energy(&state.c, &state.phi, &energy)?;
        let initial_mass: Vec<f64> = state.c.iter().map(total_mass).collect();
        let ns = initial_mass.len();
        let monitors = Monitors {
            max_mass_drift: vec![0.0; ns],
            initial_mass,
            max_energy_increase: f64::NEG_INFINITY,
            max_dissipation_residual: f64::NEG_INFINITY,
            min_cell_average: vec![f64::INFINITY; ns],
            min_node: vec![f64::INFINITY; ns],
            max_newton_iterations: 0,
            limiter_hits: 0,
            mobility_floored: false,
        };
        let log = run_log(&config, &problem, &state, h, dt_target, dt, n_steps, end);
        let mut sim = Self {
            config,
            problem,
            space,
            assembler,
            stepper,
            energy,
            state,
            dt,
            n_steps,
            last_energy,
            records: Vec::new(),
            monitors,
            log,
        };
        sim.record(0, 0)?;
        Ok(sim)
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn problem(&self) -> &ProblemSpec {
        &self.problem
    }

    pub fn space(&self) -> &Arc<Space> {
        &self.space
    }

    pub fn assembler(&self) -> &Arc<FormAssembler> {
        &self.assembler
    }

    pub fn stepper(&self) -> &Stepper {
        &self.stepper
    }

    pub fn state(&self) -> &SystemState {
        &self.state
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn is_finished(&self) -> bool {
        self.state.step >= self.n_steps
    }

    pub fn records(&self) -> &[DiagnosticsRecord] {
        &self.records
    }

    pub fn monitors(&self) -> &Monitors {
        &self.monitors
    }

    pub fn log(&self) -> &str {
        &self.log
    }

    pub fn energy_forms(&self) -> &EnergyForms {
        &self.energy
    }

    fn record(&mut self, iterations: usize, hits: usize) -> Result<()> {
        let pos = positivity_report(&self.state.c);
        self.records.push(DiagnosticsRecord {
            t: self.state.t,
            mass: self.state.c.iter().map(total_mass).collect(),
            energy: discrete_energy(&self.state, &self.energy)?,
            min_cell_average: pos.min_cell_average,
            min_node: pos.min_node,
            newton_iterations: iterations,
            limiter_hits: hits,
        });
        Ok(())
    }

    /// Advances one step and updates the monitors.
    pub fn step(&mut self) -> Result<StepReport> {
        let (mut next, report) = self.stepper.advance(&self.state)?;
        // t = m dt exactly, without accumulated sums
        next.t = next.step as f64 * self.dt;
        let m = &mut self.monitors;
        for (i, c) in next.c.iter().enumerate() {
            let drift = (total_mass(c) - m.initial_mass[i]).abs() / m.initial_mass[i].abs().max(f64::MIN_POSITIVE);
            m.max_mass_drift[i] = m.max_mass_drift[i].max(drift);
        }
        let pos = positivity_report(&next.c);
        for i in 0..next.c.len() {
            m.min_cell_average[i] = m.min_cell_average[i].min(pos.min_cell_average[i]);
            m.min_node[i] = m.min_node[i].min(pos.min_node[i]);
        }
        let e = lumped_energy(&next.c, &next.phi, &self.energy)?;
        m.max_energy_increase = m.max_energy_increase.max(e - self.last_energy);
        m.max_dissipation_residual = m.max_dissipation_residual.max(e - self.last_energy + self.dt * report.dissipation);
        self.last_energy = e;
        m.max_newton_iterations = m.max_newton_iterations.max(report.iterations);
        let hits: usize = report.limiter_hits.iter().sum();
        m.limiter_hits += hits;
        m.mobility_floored |= report.mobility_floored;
        self.state = next;
        let every = self.config.record_every;
        if (every > 0 && self.state.step % every == 0) || self.is_finished() {
            if self.records.last().map(|r| r.t) != Some(self.state.t) {
                self.record(report.iterations, hits)?;
            }
        }
        Ok(report)
    }

    /// Steps until `t = m dt >= t_stop` (or the end).
    pub fn run_until(&mut self, t_stop: f64) -> Result<()> {
        while !self.is_finished() && (self.state.step as f64) * self.dt < t_stop - 0.5 * self.dt {
            self.step()?;
        }
        Ok(())
    }

    pub fn run(&mut self) -> Result<()> {
        while !self.is_finished() {
            self.step()?;
        }
        Ok(())
    }

    /// Errors of the current state against the exact solution (empty for
    /// problems without one).
    pub fn errors(&self) -> Result<Vec<ErrorEntry>> {
        let Some(exact) = &self.problem.exact else {
            return Ok(Vec::new());
        };
        let t = self.state.t;
        let mut out = Vec::new();
        let mut push = |name: String, vh: &Field, v: &dyn Fn(&Point) -> f64, g: &dyn Fn(&Point) -> [f64; 2]| -> Result<()> {
            out.push(ErrorEntry { variable: name.clone(), norm: "l2", value: error_l2(vh, v) });
            out.push(ErrorEntry {
                variable: name.clone(),
                norm: "energy_projection",
                value: error_energy_projection(&self.assembler, vh, v)?,
            });
            out.push(ErrorEntry { variable: name.clone(), norm: "e_a", value: metric_e_a(vh, g) });
            out.push(ErrorEntry { variable: name, norm: "e_g", value: metric_e_g(vh, g) });
            Ok(())
        };
        for (i, f) in exact.c.iter().enumerate() {
            push(format!("c{}", i + 1), &self.state.c[i], &|x| (f.value)(t, x), &|x| (f.grad)(t, x))?;
        }
        for (i, s) in self.problem.species.iter().enumerate() {
            let p = exact.potential(s.valence, i);
            let gp = exact.potential_grad(s.valence, i);
            push(format!("p{}", i + 1), &self.state.p[i], &|x| p(t, x), &|x| gp(t, x))?;
        }
        push("phi".into(), &self.state.phi, &|x| (exact.phi.value)(t, x), &|x| (exact.phi.grad)(t, x))?;
        Ok(out)
    }
}

#[allow(clippy::too_many_arguments)]
fn run_log(
    config: &RunConfig,
    problem: &ProblemSpec,
    state: &SystemState,
    h: f64,
    dt_target: f64,
    dt: f64,
    n_steps: usize,
    end: f64,
) -> String {
    let k = config.k;
    let mut s = String::new();
    let _ = writeln!(s, "schema_version = {SCHEMA_VERSION}");
    let _ = writeln!(s, "problem = {}", problem.name);
    let _ = writeln!(s, "dimension = {}", problem.domain.dim());
    let _ = writeln!(s, "cells_per_axis = {}", config.n);
    let _ = writeln!(s, "k = {k}");
    let order = match config.order {
        TimeOrder::First => "first (backward Euler, frozen mobility)",
        TimeOrder::Second => "second (BDF2, extrapolated mobility, first-order start)",
    };
    let _ = writeln!(s, "time_order = {order}");
    let _ = writeln!(s, "dt_rule = {} (h = {h:e} largest cell edge)", config.dt.describe());
    let _ = writeln!(s, "dt = {dt:e} (requested {dt_target:e}, adjusted to land on t = {end})");
    let _ = writeln!(s, "steps = {n_steps}");
    let _ = writeln!(s, "limiter = {}", if config.limiter { "on" } else { "off" });
    match config.method {
        MethodKind::Fem => {
            let _ = writeln!(s, "method = fem (continuous Q^k, Gauss-Lobatto collocation)");
            let _ = writeln!(s, "stability = unconditional (no penalty parameters)");
        }
        MethodKind::Ddg => {
            let b1 = config.beta1.resolve(k);
            let gamma = gamma_of_beta1(k, b1);
            let _ = writeln!(s, "method = ddg (discontinuous Q^k, Gauss-Lobatto collocation)");
            let _ = writeln!(s, "beta0 = {}", config.beta0);
            let _ = writeln!(s, "beta1 = {b1}");
            let _ = writeln!(s, "gamma(beta1) = {gamma}");
            let _ = writeln!(s, "dirichlet_penalty = 2 max(beta0, k^2) = {}", dirichlet_penalty(k, config.beta0));
            let unit = MobilityBounds { psi0: 1.0, psi1: 1.0 };
            let verdict = |ok: bool| if ok { "satisfied" } else { "violated" };
            let _ = writeln!(s, "stability (psi0 = psi1 = 1): beta0 >= gamma is {}", verdict(check_stability(config.beta0, b1, k, unit)));
            for (i, (c, spec)) in state.c.iter().zip(&problem.species).enumerate() {
                let (lo, hi) = (c.min() * spec.diffusion, c.max() * spec.diffusion);
                match MobilityBounds::new(lo, hi) {
                    Ok(b) => {
                        let _ = writeln!(
                            s,
                            "stability (species {} initial mobility in [{lo:e}, {hi:e}]): {}",
                            i + 1,
                            verdict(check_stability(config.beta0, b1, k, b))
                        );
                    }
                    Err(_) => {
                        let _ = writeln!(s, "stability (species {} initial mobility in [{lo:e}, {hi:e}]): not applicable, mobility touches zero", i + 1);
                    }
                }
            }
            let zero = b1 == 0.0;
            let sc = (b1 - superconvergent_beta1(k)).abs() <= 1e-15;
            let _ = writeln!(
                s,
                "hypotheses: beta1 = 0 {}; beta1 = 1/(2k(k+1)) {}",
                if zero { "holds" } else { "does not hold" },
                if sc { "holds" } else { "does not hold" }
            );
        }
    }
    let _ = writeln!(s, "energy = lumped entropy + a(phi,phi)/2 (exact-integral variant reported alongside)");
    let _ = writeln!(s, "e_a = M is the number of cells, Euclidean norm of the per-cell gradient-error integral");
    let _ = writeln!(s, "e_g = k-point Gauss grid per axis per cell, N is the total point count");
    let _ = writeln!(s, "seed = {}", config.seed);
    s
}

fn metric_name(e: &ErrorEntry) -> String {
    format!("{}_{}", e.variable, e.norm)
}

/// Result of a convergence sweep; failed runs leave NaN rows.
#[derive(Debug, Clone)]
pub struct SweepResult {
    pub table: ConvergenceTable,
    pub failures: Vec<(usize, PnpError)>,
}

/// Runs `base` at every `n` in parallel and tabulates the final errors.
pub fn sweep(base: &RunConfig, ns: &[usize]) -> Result<SweepResult> {
    sweep_with(base, ns, |cfg| {
        let mut sim = Simulation::new(cfg)?;
        sim.run()?;
        sim.errors()
    })
}

/// As [`sweep`], with a caller-supplied driver per member configuration.
pub fn sweep_with<F>(base: &RunConfig, ns: &[usize], run: F) -> Result<SweepResult>
where
    F: Fn(RunConfig) -> Result<Vec<ErrorEntry>> + Sync,
{
    if ns.is_empty() {
        return Err(PnpError::InvalidArgument("empty refinement list".into()));
    }
    for w in ns.windows(2) {
        if w[1] != 2 * w[0] {
            return Err(PnpError::NonDoubling(format!("{} followed by {}", w[0], w[1])));
        }
    }
    let outcomes: Vec<Result<Vec<ErrorEntry>>> = ns
        .par_iter()
        .map(|&n| {
            let mut cfg = base.clone();
            cfg.n = n;
            run(cfg)
        })
        .collect();
    let metrics: Vec<String> = match outcomes.iter().find_map(|o| o.as_ref().ok()) {
        Some(e) => e.iter().map(metric_name).collect(),
        None => {
            let err = outcomes.into_iter().next().and_then(|o| o.err()).expect("non-empty");
            return Err(err);
        }
    };
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (&n, o) in ns.iter().zip(outcomes) {
        match o {
            Ok(e) => rows.push((n, e.iter().map(|e| e.value).collect())),
            Err(err) => {
                rows.push((n, vec![f64::NAN; metrics.len()]));
                failures.push((n, err));
            }
        }
    }
    Ok(SweepResult { table: rate_table(metrics, rows)?, failures })
}
