//! Semi-implicit time stepping: first order (backward Euler in `c` with
//! frozen mobility `c^m`) and second order (BDF2 difference with
//! extrapolated mobility `2c^m - c^{m-1}`), both solved by a damped Newton
//! method that keeps every nodal concentration positive.

use std::collections::BTreeSet;
use std::sync::Arc;

use crate::error::{PnpError, Result};
use crate::forms::{FormAssembler, Method, Mobility, PoissonOperator};
use crate::mesh::{BoundaryConditions, ScalarFn};
use crate::space::{Continuity, Field, Space};
use crate::sparse::{DirectSolver, SparseOperator, SparsityPattern};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeciesSpec {
    pub valence: f64,
    pub diffusion: f64,
}

impl SpeciesSpec {
    pub fn new(valence: f64, diffusion: f64) -> Result<Self> {
        if !(diffusion > 0.0) || !valence.is_finite() {
            return Err(PnpError::InvalidArgument(format!("species with valence {valence}, diffusion {diffusion}")));
        }
        Ok(Self { valence, diffusion })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub c: Vec<Field>,
    pub phi: Field,
    /// Chemical potentials `q_i phi + log c_i + 1` at the collocation points.
    pub p: Vec<Field>,
    pub t: f64,
    pub step: usize,
    /// Concentrations of the previous step (used by the second-order scheme).
    pub previous: Option<Vec<Field>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonConfig {
    /// Tolerance on the scaled residual infinity norm.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Fraction-to-boundary factor in (0, 1).
    pub fraction: f64,
    /// Smallest damping accepted before giving up.
    pub min_alpha: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self { tolerance: 1e-12, max_iterations: 50, fraction: 0.95, min_alpha: 1e-12 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeOrder {
    First,
    Second,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeConfig {
    pub order: TimeOrder,
    pub dt: f64,
    pub eps: f64,
    pub newton: NewtonConfig,
    pub limiter: bool,
    /// Positive floor applied where the mobility field is not positive.
    pub mobility_floor: f64,
}

impl SchemeConfig {
    pub fn new(order: TimeOrder, dt: f64) -> Self {
        Self { order, dt, eps: 1.0, newton: NewtonConfig::default(), limiter: false, mobility_floor: 1e-12 }
    }

    fn validate(&self) -> Result<()> {
        let n = &self.newton;
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(PnpError::InvalidArgument(format!("time step {} must be positive", self.dt)));
        }
        if !(n.fraction > 0.0 && n.fraction < 1.0) {
            return Err(PnpError::InvalidArgument(format!("fraction-to-boundary factor {} not in (0,1)", n.fraction)));
        }
        if !(n.tolerance > 0.0) || n.max_iterations == 0 || !(self.mobility_floor > 0.0) || !(self.eps > 0.0) {
            return Err(PnpError::InvalidArgument("invalid solver settings".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, serde::Serialize)]
pub struct StepReport {
    pub iterations: usize,
    pub residual: f64,
    pub residual_history: Vec<f64>,
    pub min_c: Vec<f64>,
    /// Number of cells rescaled by the limiter, per species.
    pub limiter_hits: Vec<usize>,
    pub mobility_floored: bool,
    /// `sum_i a_{D_i psi_i}(p_i^{m+1}, p_i^{m+1})`.
    pub dissipation: f64,
}

/// Source terms of manufactured problems, evaluated at `t^{m+1}`.
#[derive(Clone, Default)]
pub struct Sources {
    pub species: Vec<Option<ScalarFn>>,
    pub poisson: Option<ScalarFn>,
}

impl std::fmt::Debug for Sources {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let n = self.species.iter().filter(|s| s.is_some()).count();
        write!(f, "Sources {{ species: {n}, poisson: {} }}", self.poisson.is_some())
    }
}

// ---------------------------------------------------------------------------
// Newton

/// A nonlinear system solved by [`newton_solve`].
pub trait NewtonProblem {
    fn residual(&self, x: &[f64]) -> Vec<f64>;
    /// Norm used for convergence and damping (may scale rows).
    fn norm(&self, r: &[f64]) -> f64 {
        r.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
    fn jacobian(&self, x: &[f64]) -> SparseOperator;
    /// Components that must stay positive.
    fn positive_components(&self) -> Vec<usize> {
        Vec::new()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub history: Vec<f64>,
}

/// Largest `alpha` with `x + alpha dx > 0` on the given components
/// (infinite if no component decreases).
pub fn max_positive_step(x: &[f64], dx: &[f64], components: &[usize]) -> f64 {
    components
        .iter()
        .filter(|&&i| dx[i] < 0.0)
        .map(|&i| -x[i] / dx[i])
        .fold(f64::INFINITY, f64::min)
}

/// `min(1, factor * alpha_max)`.
pub fn fraction_to_boundary(x: &[f64], dx: &[f64], components: &[usize], factor: f64) -> f64 {
    (factor * max_positive_step(x, dx, components)).min(1.0)
}

/// Damped Newton iteration. Each step is first cut back by the
/// fraction-to-boundary rule, then halved until the residual norm decreases.
/// The returned errors carry `recommended_dt = NaN`; callers fill it in.
pub fn newton_solve<P: NewtonProblem>(
    problem: &P,
    x0: Vec<f64>,
    config: &NewtonConfig,
    solver: &mut DirectSolver,
) -> Result<NewtonOutcome> {
    let positive = problem.positive_components();
    let mut x = x0;
    let mut r = problem.residual(&x);
    let mut norm = problem.norm(&r);
    let mut history = vec![norm];
    let mut iterations = 0;
    while !(norm <= config.tolerance) {
        if iterations == config.max_iterations || !norm.is_finite() {
            return Err(PnpError::NewtonDiverged { iterations, residual: norm, recommended_dt: f64::NAN });
        }
        iterations += 1;
        let j = problem.jacobian(&x);
        let minus_r: Vec<f64> = r.iter().map(|v| -v).collect();
        let dx = solver.solve(&j, &minus_r)?;
        let mut alpha = fraction_to_boundary(&x, &dx, &positive, config.fraction);
        loop {
            if alpha < config.min_alpha {
                return Err(PnpError::SafeguardExhausted { iterations, alpha, recommended_dt: f64::NAN });
            }
            let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| a + alpha * d).collect();
            let r_trial = problem.residual(&trial);
            let n_trial = problem.norm(&r_trial);
            if n_trial <= (1.0 - 1e-4 * alpha) * norm || n_trial <= config.tolerance {
                x = trial;
                r = r_trial;
                norm = n_trial;
                break;
            }
            alpha *= 0.5;
        }
        history.push(norm);
    }
    Ok(NewtonOutcome { x, iterations, residual: norm, history })
}

// ---------------------------------------------------------------------------
// Limiter

/// Lower-bound estimate of the minimum of a field over one cell: a
/// `4(k+1)`-point grid per axis plus the critical points of the 1D
/// restrictions along grid lines, located by bisection on derivative sign
/// changes.
pub fn cell_minimum(c: &Field, cell: usize) -> f64 {
    let space = c.space();
    let k = space.order();
    let dim = space.dim();
    let n = 4 * (k + 1);
    let grid: Vec<f64> = (0..n).map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64).collect();
    let eval = |xi: [f64; 2]| c.eval(cell, &xi[..dim]);
    let mut m = f64::INFINITY;
    let lines: Vec<f64> = if dim == 1 { vec![0.0] } else { grid.clone() };
    for axis in 0..dim {
        for &fixed in &lines {
            let at = |s: f64| {
                let mut xi = [fixed, fixed];
                xi[axis] = s;
                xi
            };
            let deriv = |s: f64| {
                let (_, g) = c.eval_with_gradient(cell, &at(s)[..dim]);
                g[axis]
            };
            for &s in &grid {
                m = m.min(eval(at(s)));
            }
            for w in grid.windows(2) {
                let (mut a, mut b) = (w[0], w[1]);
                let (da, db) = (deriv(a), deriv(b));
                if da < 0.0 && db > 0.0 {
                    for _ in 0..60 {
                        let mid = 0.5 * (a + b);
                        if deriv(mid) < 0.0 {
                            a = mid;
                        } else {
                            b = mid;
                        }
                    }
                    m = m.min(eval(at(0.5 * (a + b))));
                }
            }
        }
    }
    m
}

/// Scaling limiter `c~ = cbar + theta (c - cbar)` with
/// `theta = min(1, cbar / (cbar - min_K c))`. Returns the limited field and
/// the number of rescaled cells; cells with `theta = 1` are left untouched.
pub fn apply_limiter(c: &Field) -> Result<(Field, usize)> {
    let space = c.space();
    if space.continuity() != Continuity::CellLocal {
        return Err(PnpError::LimiterNeedsCellLocal);
    }
    let mut out = c.clone();
    let mut hits = 0;
    for cell in 0..space.mesh().n_cells() {
        let mean = c.cell_average(cell);
        if !(mean > 0.0) {
            return Err(PnpError::NonPositiveCellAverage { cell, value: mean });
        }
        let m = cell_minimum(c, cell);
        if m >= 0.0 {
            continue;
        }
        let theta = (mean / (mean - m)).min(1.0);
        hits += 1;
        for &g in space.layout().cell_dofs(cell) {
            out.values_mut()[g] = mean + theta * (c.values()[g] - mean);
        }
    }
    Ok((out, hits))
}

// ---------------------------------------------------------------------------
// Coupled step

/// Residual and Jacobian of one time step in the unknowns
/// `(c_1..c_n, phi)` interleaved per dof, plus a trailing multiplier when
/// the potential is only determined up to a constant.
struct StepSystem<'a> {
    ns: usize,
    n: usize,
    tau: f64,
    alpha: f64,
    valence: Vec<f64>,
    species_ops: Vec<SparseOperator>,
    history: Vec<Vec<f64>>,
    /// Lumped species sources `W f_i`.
    species_load: Vec<Vec<f64>>,
    poisson: &'a SparseOperator,
    /// `W f_phi + boundary load`.
    poisson_load: Vec<f64>,
    strong: Vec<(usize, f64)>,
    is_strong: Vec<bool>,
    mean_constraint: bool,
    w: &'a [f64],
    measure: f64,
    pattern: &'a Arc<SparsityPattern>,
}

impl StepSystem<'_> {
    fn nv(&self) -> usize {
        self.ns + 1
    }

    fn idx(&self, dof: usize, var: usize) -> usize {
        dof * self.nv() + var
    }

    fn size(&self) -> usize {
        self.n * self.nv() + usize::from(self.mean_constraint)
    }

    fn potentials(&self, x: &[f64], i: usize) -> Vec<f64> {
        (0..self.n)
            .map(|j| self.valence[i] * x[self.idx(j, self.ns)] + x[self.idx(j, i)].ln() + 1.0)
            .collect()
    }

    fn jacobian_pattern(&self) -> SparsityPattern {
        let nv = self.nv();
        let mut rows = vec![BTreeSet::new(); self.size()];
        for j in 0..self.n {
            let cols = self.pattern.row(j);
            for i in 0..self.ns {
                let r = &mut rows[j * nv + i];
                r.insert(j * nv + i);
                for &l in cols {
                    r.insert(l * nv + i);
                    r.insert(l * nv + self.ns);
                }
            }
            let r = &mut rows[j * nv + self.ns];
            for i in 0..self.ns {
                r.insert(j * nv + i);
            }
            for &l in cols {
                r.insert(l * nv + self.ns);
            }
            if self.mean_constraint {
                r.insert(self.n * nv);
            }
        }
        if self.mean_constraint {
            rows[self.n * nv].extend((0..self.n).map(|j| j * nv + self.ns));
        }
        SparsityPattern::from_rows(self.size(), &rows)
    }
}

struct StepProblem<'a> {
    sys: StepSystem<'a>,
    jac_pattern: Arc<SparsityPattern>,
}

impl NewtonProblem for StepProblem<'_> {
    fn residual(&self, x: &[f64]) -> Vec<f64> {
        let s = &self.sys;
        let mut r = vec![0.0; s.size()];
        let lambda = if s.mean_constraint { x[s.n * s.nv()] } else { 0.0 };
        for i in 0..s.ns {
            let p = s.potentials(x, i);
            let ap = s.species_ops[i].matvec(&p);
            for j in 0..s.n {
                let c = x[s.idx(j, i)];
                r[s.idx(j, i)] = s.w[j] * (s.alpha * c - s.history[i][j]) / s.tau + ap[j] - s.species_load[i][j];
            }
        }
        let phi: Vec<f64> = (0..s.n).map(|j| x[s.idx(j, s.ns)]).collect();
        let aphi = s.poisson.matvec(&phi);
        for j in 0..s.n {
            let rho: f64 = (0..s.ns).map(|i| s.valence[i] * x[s.idx(j, i)]).sum();
            r[s.idx(j, s.ns)] = aphi[j] - s.w[j] * rho - s.poisson_load[j] + lambda * s.w[j];
        }
        for &(dof, g) in &s.strong {
            r[s.idx(dof, s.ns)] = phi[dof] - g;
        }
        if s.mean_constraint {
            r[s.n * s.nv()] = (0..s.n).map(|j| s.w[j] * phi[j]).sum();
        }
        r
    }

    fn norm(&self, r: &[f64]) -> f64 {
        let s = &self.sys;
        let mut m = 0.0f64;
        for j in 0..s.n {
            for i in 0..s.ns {
                m = m.max((r[s.idx(j, i)] * s.tau / s.w[j]).abs());
            }
            let rp = r[s.idx(j, s.ns)];
            m = m.max(if s.is_strong[j] { rp.abs() } else { (rp / s.w[j]).abs() });
        }
        if s.mean_constraint {
            m = m.max((r[s.n * s.nv()] / s.measure).abs());
        }
        if m.is_nan() {
            f64::INFINITY
        } else {
            m
        }
    }

    fn jacobian(&self, x: &[f64]) -> SparseOperator {
        let s = &self.sys;
        let nv = s.nv();
        let mut jac = SparseOperator::zeros(Arc::clone(&self.jac_pattern));
        for i in 0..s.ns {
            let a = &s.species_ops[i];
            for j in 0..s.n {
                let row = j * nv + i;
                jac.add(row, row, s.alpha * s.w[j] / s.tau);
                for (l, v) in a.row(j) {
                    jac.add(row, l * nv + i, v / x[l * nv + i]);
                    jac.add(row, l * nv + s.ns, s.valence[i] * v);
                }
            }
        }
        for j in 0..s.n {
            let row = j * nv + s.ns;
            for i in 0..s.ns {
                jac.add(row, j * nv + i, -s.valence[i] * s.w[j]);
            }
            for (l, v) in s.poisson.row(j) {
                jac.add(row, l * nv + s.ns, v);
            }
            if s.mean_constraint {
                jac.add(row, s.n * nv, s.w[j]);
                jac.add(s.n * nv, row, s.w[j]);
            }
        }
        for &(dof, _) in &s.strong {
            jac.set_identity_row(dof * nv + s.ns);
        }
        jac
    }

    fn positive_components(&self) -> Vec<usize> {
        let s = &self.sys;
        (0..s.n).flat_map(|j| (0..s.ns).map(move |i| j * (s.ns + 1) + i)).collect()
    }
}

/// Advances PNP states on one discretization.
pub struct Stepper {
    assembler: Arc<FormAssembler>,
    poisson: PoissonOperator,
    species: Vec<SpeciesSpec>,
    config: SchemeConfig,
    sources: Sources,
    solver: DirectSolver,
    jac_pattern: Option<Arc<SparsityPattern>>,
    /// Operators `D_i a_{psi_i}` of the last step, kept for diagnostics.
    last_species_ops: Vec<SparseOperator>,
}

impl std::fmt::Debug for Stepper {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stepper").field("species", &self.species).field("config", &self.config).finish()
    }
}

impl Stepper {
    pub fn new(
        assembler: &Arc<FormAssembler>,
        species: Vec<SpeciesSpec>,
        phi_bcs: BoundaryConditions,
        config: SchemeConfig,
        sources: Sources,
    ) -> Result<Self> {
        config.validate()?;
        if species.is_empty() {
            return Err(PnpError::InvalidArgument("at least one species required".into()));
        }
        if config.limiter && assembler.method() == Method::Fem {
            return Err(PnpError::LimiterNeedsCellLocal);
        }
        if !sources.species.is_empty() && sources.species.len() != species.len() {
            return Err(PnpError::InvalidArgument("one source slot per species required".into()));
        }
        let poisson = PoissonOperator::new(assembler, phi_bcs, config.eps)?;
        Ok(Self {
            assembler: Arc::clone(assembler),
            poisson,
            species,
            config,
            sources,
            solver: DirectSolver::new(),
            jac_pattern: None,
            last_species_ops: Vec::new(),
        })
    }

    pub fn space(&self) -> &Arc<Space> {
        self.assembler.space()
    }

    pub fn assembler(&self) -> &Arc<FormAssembler> {
        &self.assembler
    }

    pub fn poisson(&self) -> &PoissonOperator {
        &self.poisson
    }

    pub fn config(&self) -> &SchemeConfig {
        &self.config
    }

    pub fn species(&self) -> &[SpeciesSpec] {
        &self.species
    }

    /// Species operators `D_i a_{psi_i}` used by the most recent step.
    pub fn last_species_operators(&self) -> &[SparseOperator] {
        &self.last_species_ops
    }

    fn nodal(&self, f: &Option<ScalarFn>, t: f64) -> Vec<f64> {
        let pts = self.space().layout().points();
        match f {
            Some(f) => pts.iter().map(|x| f(t, x)).collect(),
            None => vec![0.0; pts.len()],
        }
    }

    fn species_source(&self, i: usize, t: f64) -> Vec<f64> {
        let s = self.sources.species.get(i).cloned().flatten();
        self.nodal(&s, t)
    }

    /// Builds the state at `t0` from nodal initial concentrations: solves
    /// the Poisson equation and evaluates the chemical potentials. Initial
    /// data may touch zero; the potentials there use the smallest positive
    /// double in place of `c`.
    pub fn initial_state(&mut self, c: Vec<Field>, t0: f64) -> Result<SystemState> {
        if c.len() != self.species.len() {
            return Err(PnpError::InvalidArgument("one initial field per species required".into()));
        }
        for f in &c {
            f.check_space(self.space())?;
            if let Some((dof, &value)) = f.values().iter().enumerate().find(|(_, v)| **v < 0.0) {
                return Err(PnpError::NonPositiveConcentration { dof, value });
            }
        }
        let phi = self.solve_potential(&c, t0)?;
        let p = self.potentials(&c, &phi);
        Ok(SystemState { c, phi, p, t: t0, step: 0, previous: None })
    }

    fn solve_potential(&mut self, c: &[Field], t: f64) -> Result<Field> {
        let mut rho = self.nodal(&self.sources.poisson.clone(), t);
        for (spec, f) in self.species.iter().zip(c) {
            for (r, v) in rho.iter_mut().zip(f.values()) {
                *r += spec.valence * v;
            }
        }
        self.poisson.solve(&mut self.solver, &rho, t)
    }

    fn potentials(&self, c: &[Field], phi: &Field) -> Vec<Field> {
        self.species
            .iter()
            .zip(c)
            .map(|(spec, f)| {
                let v = f
                    .values()
                    .iter()
                    .zip(phi.values())
                    .map(|(&c, &ph)| spec.valence * ph + c.max(f64::MIN_POSITIVE).ln() + 1.0)
                    .collect();
                Field::from_raw(self.space(), v)
            })
            .collect()
    }

    /// One step of the configured order; a second-order run without a
    /// previous level takes a first-order step.
    pub fn advance(&mut self, state: &SystemState) -> Result<(SystemState, StepReport)> {
        match (self.config.order, &state.previous) {
            (TimeOrder::Second, Some(_)) => self.step_second_order(state),
            _ => self.step_first_order(state),
        }
    }

    pub fn step_first_order(&mut self, state: &SystemState) -> Result<(SystemState, StepReport)> {
        let hist: Vec<Vec<f64>> = state.c.iter().map(|f| f.values().to_vec()).collect();
        let mob: Vec<Vec<f64>> = hist.clone();
        self.step(state, 1.0, hist, mob)
    }

    pub fn step_second_order(&mut self, state: &SystemState) -> Result<(SystemState, StepReport)> {
        let prev = state
            .previous
            .as_ref()
            .ok_or_else(|| PnpError::InvalidArgument("second-order step needs the previous level".into()))?;
        let mut hist = Vec::new();
        let mut mob = Vec::new();
        for (c, cp) in state.c.iter().zip(prev) {
            hist.push(c.values().iter().zip(cp.values()).map(|(a, b)| 2.0 * a - 0.5 * b).collect());
            mob.push(c.values().iter().zip(cp.values()).map(|(a, b)| 2.0 * a - b).collect());
        }
        self.step(state, 1.5, hist, mob)
    }

    fn step(&mut self, state: &SystemState, alpha: f64, history: Vec<Vec<f64>>, mobility: Vec<Vec<f64>>) -> Result<(SystemState, StepReport)> {
        let space = Arc::clone(self.space());
        let n = space.n_dofs();
        let ns = self.species.len();
        let tau = self.config.dt;
        let t1 = state.t + tau;
        let mut report = StepReport::default();

        let mut species_ops = Vec::with_capacity(ns);
        for (spec, m) in self.species.iter().zip(&mobility) {
            let mut psi = m.clone();
            for v in psi.iter_mut() {
                if !(*v > 0.0) {
                    *v = self.config.mobility_floor;
                    report.mobility_floored = true;
                }
            }
            let psi = Field::from_raw(&space, psi.into_iter().map(|v| v * spec.diffusion).collect());
            species_ops.push(self.assembler.assemble(Mobility::Nodal(&psi))?);
        }
        let w = space.lumped_mass();
        let species_load: Vec<Vec<f64>> = (0..ns)
            .map(|i| self.species_source(i, t1).iter().zip(w).map(|(f, w)| f * w).collect())
            .collect();
        let bd = self.poisson.boundary_data(t1)?;
        let fphi = self.nodal(&self.sources.poisson.clone(), t1);
        let poisson_load: Vec<f64> = (0..n).map(|j| w[j] * fphi[j] + bd.load[j]).collect();
        let mut is_strong = vec![false; n];
        for &(d, _) in &bd.strong {
            is_strong[d] = true;
        }
        let sys = StepSystem {
            ns,
            n,
            tau,
            alpha,
            valence: self.species.iter().map(|s| s.valence).collect(),
            species_ops,
            history,
            species_load,
            poisson: self.poisson.stiffness(),
            poisson_load,
            strong: bd.strong,
            is_strong,
            mean_constraint: self.poisson.needs_mean_constraint(),
            w,
            measure: space.mesh().domain().measure(),
            pattern: self.assembler.pattern(),
        };
        let jac_pattern = match &self.jac_pattern {
            Some(p) => Arc::clone(p),
            None => {
                let p = Arc::new(sys.jacobian_pattern());
                self.jac_pattern = Some(Arc::clone(&p));
                p
            }
        };

        // Initial iterate: previous level, lifted off zero where the data touches it.
        let mut x0 = vec![0.0; sys.size()];
        for (i, c) in state.c.iter().enumerate() {
            let mean = c.values().iter().zip(w).map(|(v, w)| v * w).sum::<f64>() / sys.measure;
            let floor = 1e-8 * mean.max(f64::MIN_POSITIVE);
            for j in 0..n {
                x0[sys.idx(j, i)] = c.values()[j].max(floor);
            }
        }
        for j in 0..n {
            x0[sys.idx(j, ns)] = state.phi.values()[j];
        }

        let problem = StepProblem { sys, jac_pattern };
        let outcome = newton_solve(&problem, x0, &self.config.newton, &mut self.solver).map_err(|e| match e {
            PnpError::NewtonDiverged { iterations, residual, .. } => {
                PnpError::NewtonDiverged { iterations, residual, recommended_dt: 0.25 * tau }
            }
            PnpError::SafeguardExhausted { iterations, alpha, .. } => {
                PnpError::SafeguardExhausted { iterations, alpha, recommended_dt: 0.25 * tau }
            }
            other => other,
        })?;
        let sys = &problem.sys;
        let x = &outcome.x;
        let mut c: Vec<Field> =
            (0..ns).map(|i| Field::from_raw(&space, (0..n).map(|j| x[sys.idx(j, i)]).collect())).collect();
        let phi = Field::from_raw(&space, (0..n).map(|j| x[sys.idx(j, ns)]).collect());
        let mut p: Vec<Field> = (0..ns).map(|i| Field::from_raw(&space, sys.potentials(x, i))).collect();
        report.dissipation = (0..ns).map(|i| sys.species_ops[i].bilinear(p[i].values(), p[i].values())).sum();
        report.iterations = outcome.iterations;
        report.residual = outcome.residual;
        report.residual_history = outcome.history;

        report.limiter_hits = vec![0; ns];
        if self.config.limiter {
            for i in 0..ns {
                let (limited, hits) = apply_limiter(&c[i])?;
                if hits > 0 {
                    report.limiter_hits[i] = hits;
                    let q = self.species[i].valence;
                    let pv = p[i].values_mut();
                    for (j, &v) in limited.values().iter().enumerate() {
                        if v > 0.0 {
                            pv[j] = q * phi.values()[j] + v.ln() + 1.0;
                        }
                    }
                    c[i] = limited;
                }
            }
        }
        report.min_c = c.iter().map(|f| f.min()).collect();
        self.last_species_ops = problem.sys.species_ops;

        let next = SystemState { c, phi, p, t: t1, step: state.step + 1, previous: Some(state.c.clone()) };
        Ok((next, report))
    }
}
