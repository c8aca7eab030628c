//! Self-checks run by `pnp check`: quadrature exactness, the stability
//! constant, form invariants, `L_psi`, the limiter, the Newton step rule,
//! manufactured sources and a short conservation run. Every check is seeded and deterministic.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::basis::{gauss_lobatto_rule, gauss_rule};
use crate::error::Result;
use crate::forms::{gamma_of_beta1, solve_lpsi, FormAssembler, Method, Mobility, MobilityBounds};
use crate::mesh::{Domain, Mesh, Point};
use crate::problems::{builtin, ProblemSpec};
use crate::runner::{DtRule, MethodKind, RunConfig, Simulation};
use crate::space::{Continuity, Field, Space};
use crate::sparse::DirectSolver;
use crate::time::{apply_limiter, fraction_to_boundary, max_positive_step};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, detail: detail.into() }
    }
}

/// Largest moment error of a rule over monomials up to `degree`.
fn moment_error(nodes: &[f64], weights: &[f64], degree: usize) -> f64 {
    (0..=degree)
        .map(|d| {
            let q: f64 = nodes.iter().zip(weights).map(|(x, w)| w * x.powi(d as i32)).sum();
            let exact = if d % 2 == 1 { 0.0 } else { 2.0 / (d + 1) as f64 };
            (q - exact).abs()
        })
        .fold(0.0, f64::max)
}

pub fn check_quadrature() -> CheckResult {
    let mut worst: f64 = 0.0;
    for n in 2..=8 {
        let gl = gauss_lobatto_rule(n).expect("n >= 2");
        worst = worst.max(moment_error(&gl.nodes, &gl.weights, 2 * n - 3));
        let g = gauss_rule(n).expect("n >= 1");
        worst = worst.max(moment_error(&g.nodes, &g.weights, 2 * n - 1));
    }
    CheckResult::new("quadrature moments", worst < 1e-13, format!("max moment error {worst:e}"))
}

/// `(P_n(x), P_n'(x))` for `n < k` by the three-term recurrences.
fn legendre(k: usize, x: f64) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(k);
    for n in 0..k {
        let v = match n {
            0 => (1.0, 0.0),
            1 => (x, 1.0),
            _ => {
                let m = (n - 1) as f64;
                let (p1, _) = out[n - 1];
                let (p0, d0) = out[n - 2];
                let p = ((2.0 * m + 1.0) * x * p1 - m * p0) / (m + 1.0);
                // P'_{m+1} = P'_{m-1} + (2m+1) P_m
                (p, d0 + (2.0 * m + 1.0) * p1)
            }
        };
        out.push(v);
    }
    out
}

/// Rayleigh quotient `2 (v(1) - 2 beta1 v'(1))^2 / int v^2` of
/// `v = sum_n a_n P_n`, the integral taken with a Gauss rule.
fn gamma_quotient(a: &[f64], beta1: f64) -> f64 {
    let k = a.len();
    let at_one = legendre(k, 1.0);
    let v1: f64 = a.iter().zip(&at_one).map(|(c, p)| c * p.0).sum();
    let dv1: f64 = a.iter().zip(&at_one).map(|(c, p)| c * p.1).sum();
    let rule = gauss_rule(k + 1).expect("n >= 1");
    let norm: f64 = rule
        .nodes
        .iter()
        .zip(&rule.weights)
        .map(|(&x, w)| {
            let v: f64 = a.iter().zip(legendre(k, x)).map(|(c, p)| c * p.0).sum();
            w * v * v
        })
        .sum();
    2.0 * (v1 - 2.0 * beta1 * dv1).powi(2) / norm
}

/// Best quotient over `samples` random polynomials of degree `k - 1`,
/// drawn isotropically in the L^2-orthonormal Legendre coordinates.
pub fn sampled_gamma(k: usize, beta1: f64, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: f64 = 0.0;
    let mut a = vec![0.0; k];
    for _ in 0..samples {
        for (n, c) in a.iter_mut().enumerate() {
            // Box-Muller
            let (u1, u2): (f64, f64) = (rng.gen_range(f64::MIN_POSITIVE..1.0), rng.gen());
            let g = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            *c = g * ((2 * n + 1) as f64 / 2.0).sqrt();
        }
        best = best.max(gamma_quotient(&a, beta1));
    }
    best
}

pub fn check_gamma(seed: u64) -> CheckResult {
    let mut worst: f64 = 0.0;
    let mut upper_ok = true;
    for k in 1..=3 {
        for beta1 in [0.0, 1.0 / (2.0 * (k * (k + 1)) as f64), 0.25] {
            let closed = gamma_of_beta1(k, beta1);
            let sampled = sampled_gamma(k, beta1, 10_000, seed);
            upper_ok &= sampled <= closed * (1.0 + 1e-12);
            worst = worst.max((closed - sampled) / closed);
        }
    }
    CheckResult::new(
        "stability constant vs sampling",
        upper_ok && worst < 1e-3,
        format!("largest relative gap {worst:e}, sampled <= closed form: {upper_ok}"),
    )
}

fn random_field(space: &Arc<Space>, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Field {
    let v = (0..space.n_dofs()).map(|_| rng.gen_range(lo..hi)).collect();
    Field::new(space, v).expect("finite values")
}

/// Symmetry (at `beta1 = 0`), `a(1, v) = 0` and coercivity of `a_psi` on
/// random data.
pub fn check_forms(seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_sym: f64 = 0.0;
    let mut worst_const: f64 = 0.0;
    let mut min_ratio = f64::INFINITY;
    for dim in 1..=2 {
        for k in 1..=3 {
            for method in [Method::Fem, Method::Ddg { beta0: 0.0, beta1: 1.0 / (2.0 * (k * (k + 1)) as f64) }] {
                let domain = if dim == 1 {
                    Domain::interval(0.0, 1.0, false)?
                } else {
                    Domain::rectangle([0.0, 1.0], [0.0, 2.0], [true, false])?
                };
                let counts = if dim == 1 { vec![5] } else { vec![3, 3] };
                let space = Space::new(Mesh::new(domain, &counts)?, k, method.continuity())?;
                let psi = random_field(&space, &mut rng, 0.5, 2.0);
                let bounds = MobilityBounds::of_field(&psi)?;
                // smallest stable penalty with a margin
                let method = match method {
                    Method::Ddg { beta1, .. } => {
                        Method::Ddg { beta0: 1.05 * bounds.psi1 / bounds.psi0 * gamma_of_beta1(k, beta1), beta1 }
                    }
                    m => m,
                };
                let asm = FormAssembler::new(&space, method)?;
                let a = asm.assemble(Mobility::Nodal(&psi))?;
                let scale = a.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
                // the second-derivative jump term breaks symmetry, so check it at beta1 = 0
                let sym = match method {
                    Method::Ddg { beta0, .. } => {
                        FormAssembler::new(&space, Method::Ddg { beta0, beta1: 0.0 })?.assemble(Mobility::Nodal(&psi))?
                    }
                    Method::Fem => a.clone(),
                };
                worst_sym = worst_sym.max(sym.asymmetry() / scale);
                let ones = vec![1.0; space.n_dofs()];
                let r = a.matvec(&ones);
                worst_const = worst_const.max(r.iter().fold(0.0f64, |m, v| m.max(v.abs())) / scale);
                for _ in 0..20 {
                    let v = random_field(&space, &mut rng, -1.0, 1.0);
                    let e = asm.energy_norm_sq(&v)?;
                    if e > 1e-14 {
                        min_ratio = min_ratio.min(a.bilinear(v.values(), v.values()) / e);
                    }
                }
            }
        }
    }
    let passed = worst_sym < 1e-13 && worst_const < 1e-12 && min_ratio > 0.0;
    Ok(CheckResult::new(
        "form symmetry, constants, coercivity",
        passed,
        format!("asymmetry {worst_sym:e}, |a(1,.)| {worst_const:e}, min a(v,v)/|v|_E^2 {min_ratio:e}"),
    ))
}

/// Mean preservation and nonnegativity of the limiter on random cells.
pub fn check_limiter(seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_mean: f64 = 0.0;
    let mut worst_min = f64::INFINITY;
    for dim in 1..=2 {
        for k in 1..=3 {
            let domain = if dim == 1 { Domain::interval(0.0, 1.0, false)? } else { Domain::rectangle([0.0, 1.0], [0.0, 1.0], [false, false])? };
            let counts = if dim == 1 { vec![8] } else { vec![3, 3] };
            let space = Space::new(Mesh::new(domain, &counts)?, k, Continuity::CellLocal)?;
            let mut c = random_field(&space, &mut rng, -0.5, 1.0);
            // lift every cell to a positive mean
            for cell in 0..space.mesh().n_cells() {
                let m = c.cell_average(cell);
                if m <= 0.05 {
                    for &g in space.layout().cell_dofs(cell) {
                        c.values_mut()[g] += 0.1 - m;
                    }
                }
            }
            let (l, _) = apply_limiter(&c)?;
            for cell in 0..space.mesh().n_cells() {
                worst_mean = worst_mean.max((l.cell_average(cell) - c.cell_average(cell)).abs());
            }
            worst_min = worst_min.min(l.min());
        }
    }
    Ok(CheckResult::new(
        "limiter",
        worst_mean < 1e-14 && worst_min >= -1e-14,
        format!("mean change {worst_mean:e}, min nodal value {worst_min:e}"),
    ))
}

/// `L_psi` on random data at `beta1 = 0`: zero mean, the weak residual,
/// symmetry, linearity and the central difference of `s -> |f + s v|^2_L`.
pub fn check_lpsi(seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut mean, mut resid, mut sym, mut lin, mut deriv) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for dim in 1..=2 {
        for k in 1..=2 {
            for method in [Method::Fem, Method::Ddg { beta0: 8.0, beta1: 0.0 }] {
                let domain = if dim == 1 { Domain::interval(0.0, 1.0, true)? } else { Domain::rectangle([0.0, 1.0], [0.0, 1.0], [true, false])? };
                let counts = if dim == 1 { vec![6] } else { vec![3, 3] };
                let space = Space::new(Mesh::new(domain, &counts)?, k, method.continuity())?;
                let asm = FormAssembler::new(&space, method)?;
                let psi = random_field(&space, &mut rng, 0.5, 2.0);
                let m = asm.mass_exact();
                let w = space.lumped_mass();
                let measure = space.mesh().domain().measure();
                let mut solver = DirectSolver::new();
                let mut lpsi = |f: &Field| solve_lpsi(&asm, Mobility::Nodal(&psi), f, &mut solver);
                let inner = |a: &Field, b: &Field| m.bilinear(a.values(), b.values());
                let f = random_field(&space, &mut rng, -1.0, 1.0);
                let g = random_field(&space, &mut rng, -1.0, 1.0);
                let lf = lpsi(&f)?;
                let lg = lpsi(&g)?;

                mean = mean.max(lf.values().iter().zip(w).map(|(v, w)| v * w).sum::<f64>().abs());
                let a = asm.assemble(Mobility::Nodal(&psi))?;
                let fbar = f.values().iter().zip(w).map(|(v, w)| v * w).sum::<f64>() / measure;
                let centered: Vec<f64> = f.values().iter().map(|v| v - fbar).collect();
                let load = m.matvec(&centered);
                let scale = load.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                let r = a.matvec(lf.values()).iter().zip(&load).fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs()));
                resid = resid.max(r / scale);

                // symmetry on mean-zero data
                let gbar = g.values().iter().zip(w).map(|(v, w)| v * w).sum::<f64>() / measure;
                let f0 = f.map(|v| v - fbar);
                let g0 = g.map(|v| v - gbar);
                sym = sym.max((inner(&lf, &g0) - inner(&lg, &f0)).abs());

                let alpha: f64 = rng.gen_range(-2.0..2.0);
                let mut comb = g.clone();
                comb.axpy(alpha, &f);
                let mut expect = lg.clone();
                expect.axpy(alpha, &lf);
                let lc = lpsi(&comb)?;
                lin = lin.max(lc.values().iter().zip(expect.values()).fold(0.0f64, |a, (x, y)| a.max((x - y).abs())));

                let h = 1e-4;
                let mut norm_sq = |s: f64| -> Result<f64> {
                    let mut x = f0.clone();
                    x.axpy(s, &g0);
                    let lx = lpsi(&x)?;
                    Ok(inner(&lx, &x))
                };
                let fd = (norm_sq(h)? - norm_sq(-h)?) / (2.0 * h);
                deriv = deriv.max((fd - 2.0 * inner(&lf, &g0)).abs());
            }
        }
    }
    let passed = mean < 1e-11 && resid < 1e-11 && sym < 1e-11 && lin < 1e-11 && deriv < 1e-6;
    Ok(CheckResult::new(
        "L_psi residual, symmetry, linearity, directional derivative",
        passed,
        format!("mean {mean:e}, residual {resid:e}, symmetry {sym:e}, linearity {lin:e}, derivative {deriv:e}"),
    ))
}

/// Fraction-to-boundary step lengths against hand-computed values.
pub fn check_fraction_to_boundary() -> CheckResult {
    let cases: [(&[f64], &[f64], &[usize], f64); 4] = [
        // x + 0.1 dx hits zero at alpha = 1/6
        (&[0.1], &[-0.6], &[0], 0.95 / 6.0),
        (&[0.1], &[0.6], &[0], 1.0),
        // only component 1 is constrained: alpha_max = 2
        (&[1.0, 2.0], &[-4.0, -1.0], &[1], 1.0),
        (&[1.0, 2.0], &[-4.0, -1.0], &[0, 1], 0.95 * 0.25),
    ];
    let worst = cases.iter().map(|(x, dx, c, e)| (fraction_to_boundary(x, dx, c, 0.95) - e).abs()).fold(0.0f64, f64::max);
    let unconstrained = max_positive_step(&[1.0], &[1.0], &[0]) == f64::INFINITY;
    CheckResult::new(
        "fraction to boundary",
        worst < 1e-15 && unconstrained,
        format!("worst step error {worst:e}, increasing components unconstrained: {unconstrained}"),
    )
}

/// Finite-difference residual of the manufactured identity for one problem.
pub fn manufactured_residual(problem: &ProblemSpec, seed: u64) -> f64 {
    let Some(exact) = &problem.exact else {
        return 0.0;
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = problem.domain.dim();
    let (h1, h2) = (1e-6, 1e-4);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let t = rng.gen_range(0.0..problem.end_time);
        let mut x: Point = [0.0; 2];
        for (a, xa) in x.iter_mut().enumerate().take(dim) {
            let (lo, hi) = (problem.domain.lower(a), problem.domain.upper(a));
            *xa = rng.gen_range(lo + 0.05 * (hi - lo)..hi - 0.05 * (hi - lo));
        }
        let shift = |a: usize, d: f64| {
            let mut y = x;
            y[a] += d;
            y
        };
        let grad = |f: &dyn Fn(f64, &Point) -> f64| -> [f64; 2] {
            let mut g = [0.0; 2];
            for (a, ga) in g.iter_mut().enumerate().take(dim) {
                *ga = (f(t, &shift(a, h1)) - f(t, &shift(a, -h1))) / (2.0 * h1);
            }
            g
        };
        let lap = |f: &dyn Fn(f64, &Point) -> f64| -> f64 {
            (0..dim).map(|a| (f(t, &shift(a, h2)) - 2.0 * f(t, &x) + f(t, &shift(a, -h2))) / (h2 * h2)).sum()
        };
        let phi = &*exact.phi.value;
        let gphi = grad(phi);
        let lphi = lap(phi);
        let mut rho = 0.0;
        for (i, s) in problem.species.iter().enumerate() {
            let c = &*exact.c[i].value;
            let dt = (c(t + h1, &x) - c(t - h1, &x)) / (2.0 * h1);
            let gc = grad(c);
            let f = dt - s.diffusion * (lap(c) + s.valence * (gc[0] * gphi[0] + gc[1] * gphi[1] + c(t, &x) * lphi));
            let given = problem.sources.species.get(i).cloned().flatten().map_or(0.0, |g| g(t, &x));
            worst = worst.max((f - given).abs());
            rho += s.valence * c(t, &x);
        }
        let fphi = -problem.eps * problem.eps * lphi - rho;
        let given = problem.sources.poisson.as_ref().map_or(0.0, |g| g(t, &x));
        worst = worst.max((fphi - given).abs());
    }
    worst
}

pub fn check_manufactured(seed: u64) -> Result<CheckResult> {
    let mut detail = Vec::new();
    let mut passed = true;
    for id in ["manufactured-1d", "manufactured-2d"] {
        let r = manufactured_residual(&builtin(id)?, seed);
        passed &= r < 1e-8;
        detail.push(format!("{id} {r:e}"));
    }
    Ok(CheckResult::new("manufactured identity", passed, detail.join(", ")))
}

/// A short source-free run: mass to 1e-11, positivity and energy decay.
pub fn check_relaxation_run() -> Result<CheckResult> {
    let mut cfg = RunConfig::new("relaxation-2d", MethodKind::Ddg, 1, 8);
    cfg.dt = DtRule::Absolute(1e-3);
    cfg.end_time = Some(0.02);
    let mut sim = Simulation::new(cfg)?;
    sim.run()?;
    let m = sim.monitors();
    let drift = m.max_mass_drift.iter().fold(0.0f64, |a, &b| a.max(b));
    let positive = m.min_node.iter().chain(&m.min_cell_average).all(|&v| v > 0.0);
    Ok(CheckResult::new(
        "relaxation run",
        drift < 1e-11 && m.max_energy_increase <= 1e-12 && positive,
        format!("mass drift {drift:e}, max energy increase {:e}", m.max_energy_increase),
    ))
}

pub fn run_all(seed: u64) -> Vec<CheckResult> {
    let wrap = |name: &str, r: Result<CheckResult>| r.unwrap_or_else(|e| CheckResult::new(name, false, e.to_string()));
    vec![
        check_quadrature(),
        check_gamma(seed),
        wrap("form symmetry, constants, coercivity", check_forms(seed)),
        wrap("limiter", check_limiter(seed)),
        wrap("L_psi residual, symmetry, linearity, directional derivative", check_lpsi(seed)),
        check_fraction_to_boundary(),
        wrap("manufactured identity", check_manufactured(seed)),
        wrap("relaxation run", check_relaxation_run()),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        for r in run_all(7) {
            assert!(r.passed, "{}: {}", r.name, r.detail);
        }
    }

    #[test]
    fn gamma_quotient_of_constant() {
        // v = 1: 2 * 1 / 2 = 1
        assert!((gamma_quotient(&[1.0], 0.3) - 1.0).abs() < 1e-15);
    }
}
