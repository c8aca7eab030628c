//! Mass, discrete energy, positivity, error norms, gradient
//! superconvergence metrics and convergence tables.

use std::sync::Arc;

use crate::basis::{gauss_rule, QuadRule};
use crate::error::{PnpError, Result};
use crate::forms::{FormAssembler, Mobility, PoissonOperator, Quadrature};
use crate::mesh::Point;
use crate::space::{interpolate, Field, Space};
use crate::sparse::SparseOperator;
use crate::time::SystemState;

/// Tensor Gauss points of a reference cell with their reference weights.
fn cell_rule(dim: usize, rule: &QuadRule) -> Vec<([f64; 2], f64)> {
    let mut out = Vec::new();
    if dim == 1 {
        for (x, w) in rule.nodes.iter().zip(&rule.weights) {
            out.push(([*x, 0.0], *w));
        }
    } else {
        for (y, wy) in rule.nodes.iter().zip(&rule.weights) {
            for (x, wx) in rule.nodes.iter().zip(&rule.weights) {
                out.push(([*x, *y], wx * wy));
            }
        }
    }
    out
}

/// Sum over cells and reference points of `weight * jac * f(cell, xi, x)`.
fn integrate(space: &Space, rule: &QuadRule, mut f: impl FnMut(usize, &[f64], &Point) -> f64) -> f64 {
    let pts = cell_rule(space.dim(), rule);
    let dim = space.dim();
    let mut total = 0.0;
    for cell in space.mesh().cells() {
        let jac = space.cell_jacobian(cell.id);
        for (xi, w) in &pts {
            let x = cell.map_to_physical(&xi[..dim]);
            total += w * jac * f(cell.id, &xi[..dim], &x);
        }
    }
    total
}

/// Exact integral of a piecewise Q^k field. The (k+1)-point Gauss-Lobatto
/// rule is exact to degree 2k-1 >= k per axis, so the lumped weights suffice.
pub fn total_mass(c: &Field) -> f64 {
    c.values().iter().zip(c.space().lumped_mass()).map(|(v, w)| v * w).sum()
}

/// `int c` with a (k+1)-point Gauss rule, an independent route to
/// [`total_mass`].
pub fn total_mass_gauss(c: &Field) -> f64 {
    let space = c.space();
    let rule = gauss_rule(space.order() + 1).expect("n >= 1");
    integrate(space, &rule, |cell, xi, _| c.eval(cell, xi))
}

fn entropy(c: f64) -> f64 {
    if c == 0.0 {
        0.0
    } else {
        c * c.ln()
    }
}

/// Discrete energy `sum_i <c_i log c_i, 1> + (eps^2/2) a(phi, phi)` with the
/// lumped entropy, and its exactly integrated counterpart
/// `sum_i int c_i log c_i + (eps^2/2) a~(phi, phi)`. Nodal zeros contribute
/// `0 log 0 = 0`; the exact variant is NaN if some `c_i` is not positive at a
/// quadrature point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Energy {
    pub lumped: f64,
    pub exact: f64,
}

/// The two quadratic forms of the potential energy: the scheme's Poisson
/// stiffness and its exactly integrated counterpart.
#[derive(Debug, Clone)]
pub struct EnergyForms {
    pub lumped: SparseOperator,
    pub exact: SparseOperator,
}

impl EnergyForms {
    pub fn new(poisson: &PoissonOperator, assembler: &FormAssembler) -> Result<Self> {
        let eps2 = Mobility::Constant(poisson.eps2());
        let mut exact = assembler.assemble_exact(eps2)?;
        // only the bilinear part is kept, which does not depend on t
        assembler.add_boundary_with(&mut exact, eps2, poisson.boundary_conditions(), 0.0, Quadrature::Exact)?;
        Ok(Self { lumped: poisson.stiffness().clone(), exact })
    }
}

/// Lumped energy only (cheap enough to evaluate every step).
pub fn lumped_energy(c: &[Field], phi: &Field, forms: &EnergyForms) -> Result<f64> {
    let w = phi.space().lumped_mass();
    let mut e = 0.0;
    for f in c {
        if let Some((dof, &value)) = f.values().iter().enumerate().find(|(_, v)| **v < 0.0) {
            return Err(PnpError::NonPositiveConcentration { dof, value });
        }
        e += f.values().iter().zip(w).map(|(v, w)| w * entropy(*v)).sum::<f64>();
    }
    let phi = phi.values();
    Ok(e + 0.5 * forms.lumped.bilinear(phi, phi))
}

pub fn discrete_energy(state: &SystemState, forms: &EnergyForms) -> Result<Energy> {
    let lumped = lumped_energy(&state.c, &state.phi, forms)?;
    let space = state.phi.space();
    let rule = gauss_rule(space.order() + 3).expect("n >= 1");
    let mut exact = 0.0;
    for f in &state.c {
        exact += integrate(space, &rule, |cell, xi, _| {
            let v = f.eval(cell, xi);
            if v > 0.0 {
                v * v.ln()
            } else {
                f64::NAN
            }
        });
    }
    let phi = state.phi.values();
    exact += 0.5 * forms.exact.bilinear(phi, phi);
    Ok(Energy { lumped, exact })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositivityReport {
    pub min_cell_average: Vec<f64>,
    pub min_node: Vec<f64>,
}

impl PositivityReport {
    pub fn all_positive(&self) -> bool {
        self.min_cell_average.iter().chain(&self.min_node).all(|&v| v > 0.0)
    }
}

pub fn positivity_report(c: &[Field]) -> PositivityReport {
    let mut out = PositivityReport { min_cell_average: Vec::new(), min_node: Vec::new() };
    for f in c {
        let n = f.space().mesh().n_cells();
        out.min_cell_average.push((0..n).map(|k| f.cell_average(k)).fold(f64::INFINITY, f64::min));
        out.min_node.push(f.min());
    }
    out
}

/// `||v - v_h||_0` with a (k+3)-point Gauss rule per axis.
pub fn error_l2(vh: &Field, v: impl Fn(&Point) -> f64) -> f64 {
    let space = vh.space();
    let rule = gauss_rule(space.order() + 3).expect("n >= 1");
    integrate(space, &rule, |cell, xi, x| (v(x) - vh.eval(cell, xi)).powi(2)).sqrt()
}

/// `||I_h v - v_h||_E`.
pub fn error_energy_projection(assembler: &FormAssembler, vh: &Field, v: impl Fn(&Point) -> f64) -> Result<f64> {
    let space: &Arc<Space> = assembler.space();
    let mut d = interpolate(space, v)?;
    d.axpy(-1.0, vh);
    Ok(assembler.energy_norm_sq(&d)?.sqrt())
}

/// `e_A = ((1/M) sum_K |int_K grad(v - v_h)|^2)^{1/2}` with `M` the number
/// of cells.
pub fn metric_e_a(vh: &Field, grad: impl Fn(&Point) -> [f64; 2]) -> f64 {
    let space = vh.space();
    let dim = space.dim();
    let rule = gauss_rule(space.order() + 3).expect("n >= 1");
    let pts = cell_rule(dim, &rule);
    let mut sum = 0.0;
    for cell in space.mesh().cells() {
        let jac = space.cell_jacobian(cell.id);
        let mut acc = [0.0; 2];
        for (xi, w) in &pts {
            let x = cell.map_to_physical(&xi[..dim]);
            let (_, gh) = vh.eval_with_gradient(cell.id, &xi[..dim]);
            let g = grad(&x);
            for a in 0..dim {
                acc[a] += w * jac * (g[a] - gh[a]);
            }
        }
        sum += acc[0] * acc[0] + acc[1] * acc[1];
    }
    (sum / space.mesh().n_cells() as f64).sqrt()
}

/// `e_G = ((1/N) sum_K sum_{z in G_K} |grad(v - v_h)(z)|^2)^{1/2}` over the
/// k-point Gauss grid of every cell, `N` the total number of points.
pub fn metric_e_g(vh: &Field, grad: impl Fn(&Point) -> [f64; 2]) -> f64 {
    let space = vh.space();
    let dim = space.dim();
    let rule = gauss_rule(space.order()).expect("k >= 1");
    let pts = cell_rule(dim, &rule);
    let mut sum = 0.0;
    let mut count = 0usize;
    for cell in space.mesh().cells() {
        for (xi, _) in &pts {
            let x = cell.map_to_physical(&xi[..dim]);
            let (_, gh) = vh.eval_with_gradient(cell.id, &xi[..dim]);
            let g = grad(&x);
            sum += (0..dim).map(|a| (g[a] - gh[a]).powi(2)).sum::<f64>();
            count += 1;
        }
    }
    (sum / count as f64).sqrt()
}

/// Per-step record of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub mass: Vec<f64>,
    pub energy: Energy,
    pub min_cell_average: Vec<f64>,
    pub min_node: Vec<f64>,
    pub newton_iterations: usize,
    pub limiter_hits: usize,
}

/// Errors against refinement level with observed orders
/// `R = log2(e_N / e_2N)` between consecutive rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTable {
    pub metrics: Vec<String>,
    pub n: Vec<usize>,
    /// `errors[row][metric]`.
    pub errors: Vec<Vec<f64>>,
    /// `rates[row][metric]`, `None` on the first row.
    pub rates: Vec<Vec<Option<f64>>>,
}

impl ConvergenceTable {
    /// Order over the last interval of a metric.
    pub fn final_rate(&self, metric: &str) -> Option<f64> {
        let m = self.metrics.iter().position(|s| s == metric)?;
        self.rates.last()?[m]
    }

    pub fn column(&self, metric: &str) -> Option<Vec<f64>> {
        let m = self.metrics.iter().position(|s| s == metric)?;
        Some(self.errors.iter().map(|r| r[m]).collect())
    }
}

pub fn rate_table(metrics: Vec<String>, rows: Vec<(usize, Vec<f64>)>) -> Result<ConvergenceTable> {
    for w in rows.windows(2) {
        if w[1].0 != 2 * w[0].0 {
            return Err(PnpError::NonDoubling(format!("{} followed by {}", w[0].0, w[1].0)));
        }
    }
    if rows.iter().any(|r| r.1.len() != metrics.len()) {
        return Err(PnpError::InvalidArgument("row length does not match metric count".into()));
    }
    let mut rates = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        if i == 0 {
            rates.push(vec![None; metrics.len()]);
        } else {
            let prev = &rows[i - 1].1;
            rates.push(prev.iter().zip(&row.1).map(|(a, b)| Some((a / b).log2())).collect());
        }
    }
    Ok(ConvergenceTable {
        metrics,
        n: rows.iter().map(|r| r.0).collect(),
        errors: rows.into_iter().map(|r| r.1).collect(),
        rates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rates() {
        let t = rate_table(vec!["a".into()], vec![(10, vec![1e-2]), (20, vec![2.5e-3])]).unwrap();
        assert!((t.final_rate("a").unwrap() - 2.0).abs() < 1e-14);
        let t = rate_table(vec!["a".into()], vec![(10, vec![1e-3]), (20, vec![1.25e-4])]).unwrap();
        assert!((t.final_rate("a").unwrap() - 3.0).abs() < 1e-14);
        let t = rate_table(vec!["a".into()], vec![(10, vec![1e-3]), (20, vec![1e-3])]).unwrap();
        assert_eq!(t.final_rate("a").unwrap(), 0.0);
        assert!(rate_table(vec!["a".into()], vec![(10, vec![1.0]), (30, vec![1.0])]).is_err());
        let single = rate_table(vec!["a".into()], vec![(10, vec![1.0])]).unwrap();
        assert_eq!(single.final_rate("a"), None);
    }

    #[test]
    fn mass_routes_agree() {
        use crate::mesh::{Domain, Mesh};
        use crate::space::Continuity;
        for k in 1..=3 {
            let m = Mesh::new(Domain::rectangle([0.0, 1.0], [0.0, 2.0], [false, false]).unwrap(), &[3, 2]).unwrap();
            let s = Space::new(m, k, Continuity::CellLocal).unwrap();
            let f = interpolate(&s, |x| (3.0 * x[0]).exp() * (x[1] * x[1] + 0.5)).unwrap();
            assert!((total_mass(&f) - total_mass_gauss(&f)).abs() < 1e-13 * total_mass(&f).abs());
        }
    }
}
