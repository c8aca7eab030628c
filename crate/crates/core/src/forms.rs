//! Bilinear forms `a_psi` (lumped) and their exactly integrated counterparts,
//! the DDG numerical flux, the Poisson operator and `L_psi`.

use std::collections::BTreeSet;
use std::sync::Arc;

use crate::basis::{gauss_lobatto_rule, gauss_rule, BasisTabulation, QuadRule};
use crate::error::{PnpError, Result};
use crate::mesh::{BoundaryCondition, BoundaryConditions, Edge, Point, Side};
use crate::space::{Continuity, Field, Space};
use crate::sparse::{DirectSolver, SparseOperator, SparsityPattern};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    Fem,
    Ddg { beta0: f64, beta1: f64 },
}

impl Method {
    pub fn continuity(&self) -> Continuity {
        match self {
            Method::Fem => Continuity::Continuous,
            Method::Ddg { .. } => Continuity::CellLocal,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Method::Fem => "fem",
            Method::Ddg { .. } => "ddg",
        }
    }

    pub fn beta1(&self) -> f64 {
        match self {
            Method::Fem => 0.0,
            Method::Ddg { beta1, .. } => *beta1,
        }
    }
}

/// The value `beta1 = 1 / (2k(k+1))` under which the error estimates hold.
pub fn superconvergent_beta1(k: usize) -> f64 {
    1.0 / (2.0 * (k * (k + 1)) as f64)
}

/// Penalty on weakly imposed Dirichlet faces: `2 max(beta0, k^2)`. A
/// one-sided face is coercive only for a penalty above
/// `sup_{P_{k-1}} v(1)^2 / (int v^2 / 2) = k^2`; the factor 2 matches the
/// margin an interior face gets from averaging two traces.
pub fn dirichlet_penalty(k: usize, beta0: f64) -> f64 {
    2.0 * beta0.max((k * k) as f64)
}

/// Coefficient `psi` of a form: a constant or a nodal field on the form's space.
#[derive(Debug, Clone, Copy)]
pub enum Mobility<'a> {
    Constant(f64),
    Nodal(&'a Field),
}

impl Mobility<'_> {
    fn check(&self, space: &Arc<Space>) -> Result<()> {
        match self {
            Mobility::Constant(v) => {
                if !(*v > 0.0) {
                    return Err(PnpError::NonPositiveMobility { dof: 0, value: *v });
                }
            }
            Mobility::Nodal(f) => {
                f.check_space(space)?;
                if let Some((dof, &value)) = f.values().iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
                    return Err(PnpError::NonPositiveMobility { dof, value });
                }
            }
        }
        Ok(())
    }

    fn eval(&self, dofs: &[usize], tab: &BasisTabulation) -> f64 {
        match self {
            Mobility::Constant(v) => *v,
            Mobility::Nodal(f) => {
                let vals = f.values();
                dofs.iter().zip(&tab.values).map(|(&g, &b)| vals[g] * b).sum()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MobilityBounds {
    pub psi0: f64,
    pub psi1: f64,
}

impl MobilityBounds {
    pub fn new(psi0: f64, psi1: f64) -> Result<Self> {
        if !(psi0 > 0.0 && psi0 <= psi1 && psi1.is_finite()) {
            return Err(PnpError::InvalidArgument(format!("mobility bounds ({psi0}, {psi1}) invalid")));
        }
        Ok(Self { psi0, psi1 })
    }

    /// Nodal minimum and maximum of a mobility field.
    pub fn of_field(f: &Field) -> Result<Self> {
        Self::new(f.min(), f.max())
    }
}

/// `Gamma(beta1)`: supremum over P_{k-1} on [-1,1] of
/// `2 (v(1) - 2 beta1 v'(1))^2 / int v^2`. In the Legendre basis the Gram
/// matrix is diagonal, `P_n(1) = 1` and `P_n'(1) = n(n+1)/2`.
pub fn gamma_of_beta1(k: usize, beta1: f64) -> f64 {
    (0..k)
        .map(|n| {
            let b = 1.0 - beta1 * (n * (n + 1)) as f64;
            (2 * n + 1) as f64 * b * b
        })
        .sum()
}

/// `psi0 * beta0 >= psi1 * Gamma(beta1)`.
pub fn check_stability(beta0: f64, beta1: f64, k: usize, bounds: MobilityBounds) -> bool {
    bounds.psi0 * beta0 >= bounds.psi1 * gamma_of_beta1(k, beta1)
}

/// `<f, v>`: sum of `W_j f_j v_j` over global dofs.
pub fn lumped_inner(f: &Field, v: &Field) -> Result<f64> {
    if !f.same_space(v) {
        return Err(PnpError::LayoutMismatch);
    }
    let w = f.space().lumped_mass();
    Ok(f.values().iter().zip(v.values()).zip(w).map(|((a, b), w)| a * b * w).sum())
}

/// `<f, v>` for a point function `f`, sampled at the collocation points.
pub fn lumped_inner_fn(f: impl Fn(&Point) -> f64, v: &Field) -> f64 {
    let space = v.space();
    let w = space.lumped_mass();
    let pts = space.layout().points();
    (0..space.n_dofs()).map(|j| f(&pts[j]) * v.values()[j] * w[j]).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quadrature {
    /// (k+1)-point Gauss-Lobatto rule at the collocation points.
    Lumped,
    /// Gauss rule exact for `psi grad u . grad v` with `psi, u, v` in Q^k.
    Exact,
}

#[derive(Debug, Clone)]
struct RefPoint {
    xi: [f64; 2],
    weight: f64,
    tab: BasisTabulation,
}

#[derive(Debug, Clone)]
struct RefTables {
    volume: Vec<RefPoint>,
    /// Indexed by `2 * axis + (side == Upper)`.
    faces: [Vec<RefPoint>; 4],
}

fn face_index(axis: usize, side: Side) -> usize {
    2 * axis + usize::from(side == Side::Upper)
}

impl RefTables {
    fn new(space: &Space, rule: &QuadRule) -> Self {
        let basis = space.basis();
        let dim = space.dim();
        let mut volume = Vec::new();
        if dim == 1 {
            for (x, w) in rule.nodes.iter().zip(&rule.weights) {
                let xi = [*x, 0.0];
                volume.push(RefPoint { xi, weight: *w, tab: basis.eval_unchecked(&xi) });
            }
        } else {
            for (y, wy) in rule.nodes.iter().zip(&rule.weights) {
                for (x, wx) in rule.nodes.iter().zip(&rule.weights) {
                    let xi = [*x, *y];
                    volume.push(RefPoint { xi, weight: wx * wy, tab: basis.eval_unchecked(&xi) });
                }
            }
        }
        let mut faces: [Vec<RefPoint>; 4] = Default::default();
        for axis in 0..dim {
            for side in [Side::Lower, Side::Upper] {
                let f = &mut faces[face_index(axis, side)];
                if dim == 1 {
                    let xi = [side.reference_coordinate(), 0.0];
                    f.push(RefPoint { xi, weight: 1.0, tab: basis.eval_unchecked(&xi) });
                } else {
                    for (t, w) in rule.nodes.iter().zip(&rule.weights) {
                        let mut xi = [*t, *t];
                        xi[axis] = side.reference_coordinate();
                        f.push(RefPoint { xi, weight: *w, tab: basis.eval_unchecked(&xi) });
                    }
                }
            }
        }
        Self { volume, faces }
    }
}

/// Traces of one side of an edge at a face quadrature point.
struct SideTrace<'a> {
    dofs: &'a [usize],
    tab: &'a BasisTabulation,
    /// Physical derivative scale along the edge axis.
    scale: f64,
}

/// Flux data of a field at one face quadrature point of an interior edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluxSample {
    pub point: Point,
    pub weight: f64,
    pub average: f64,
    pub jump: f64,
    pub average_normal_derivative: f64,
    pub jump_second_normal_derivative: f64,
    /// `beta0 [w]/h_e + {d_n w} + beta1 h_e [d_n^2 w]`.
    pub flux: f64,
}

/// Boundary data of a form: DDG Dirichlet load, or FEM strongly imposed values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BoundaryData {
    pub load: Vec<f64>,
    pub strong: Vec<(usize, f64)>,
}

/// Assembles the forms of one method on one space. The sparsity pattern is
/// shared by every operator it produces.
#[derive(Debug, Clone)]
pub struct FormAssembler {
    space: Arc<Space>,
    method: Method,
    pattern: Arc<SparsityPattern>,
    lumped: RefTables,
    exact: RefTables,
}

impl FormAssembler {
    pub fn new(space: &Arc<Space>, method: Method) -> Result<Self> {
        if space.continuity() != method.continuity() {
            return Err(PnpError::InvalidArgument(format!(
                "{} requires a {:?} layout",
                method.name(),
                method.continuity()
            )));
        }
        if let Method::Ddg { beta0, beta1 } = method {
            if !(beta0 >= 0.0 && beta1 >= 0.0) {
                return Err(PnpError::InvalidArgument(format!("penalty coefficients ({beta0}, {beta1}) must be nonnegative")));
            }
        }
        let k = space.order();
        let lumped = RefTables::new(space, &gauss_lobatto_rule(k + 1)?);
        let exact = RefTables::new(space, &gauss_rule(3 * k / 2 + 2)?);
        let pattern = Arc::new(Self::build_pattern(space, method));
        Ok(Self { space: Arc::clone(space), method, pattern, lumped, exact })
    }

    fn build_pattern(space: &Space, method: Method) -> SparsityPattern {
        let n = space.n_dofs();
        let layout = space.layout();
        let mut rows = vec![BTreeSet::new(); n];
        let mut couple = |a: &[usize], b: &[usize]| {
            for &i in a {
                rows[i].extend(b.iter().copied());
            }
        };
        for c in 0..space.mesh().n_cells() {
            let d = layout.cell_dofs(c);
            couple(d, d);
        }
        if let Method::Ddg { .. } = method {
            for e in space.mesh().interior_edges() {
                let a = layout.cell_dofs(e.minus.cell);
                let b = layout.cell_dofs(e.plus.expect("interior edge").cell);
                couple(a, b);
                couple(b, a);
            }
        }
        SparsityPattern::from_rows(n, &rows)
    }

    pub fn space(&self) -> &Arc<Space> {
        &self.space
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn pattern(&self) -> &Arc<SparsityPattern> {
        &self.pattern
    }

    fn tables(&self, q: Quadrature) -> &RefTables {
        match q {
            Quadrature::Lumped => &self.lumped,
            Quadrature::Exact => &self.exact,
        }
    }

    /// `a_psi` with no boundary terms (zero flux on every boundary face).
    pub fn assemble(&self, psi: Mobility) -> Result<SparseOperator> {
        self.assemble_with(psi, Quadrature::Lumped)
    }

    /// `a~_psi`: the same form with exactly integrated volume and face terms.
    pub fn assemble_exact(&self, psi: Mobility) -> Result<SparseOperator> {
        self.assemble_with(psi, Quadrature::Exact)
    }

    pub fn assemble_with(&self, psi: Mobility, q: Quadrature) -> Result<SparseOperator> {
        psi.check(&self.space)?;
        let mut a = SparseOperator::zeros(Arc::clone(&self.pattern));
        self.add_volume(&mut a, psi, q);
        if let Method::Ddg { beta0, beta1 } = self.method {
            for e in self.space.mesh().interior_edges() {
                self.add_interior_edge(&mut a, e, psi, q, beta0, beta1);
            }
        }
        Ok(a)
    }

    fn add_volume(&self, a: &mut SparseOperator, psi: Mobility, q: Quadrature) {
        let space = &self.space;
        let dim = space.dim();
        let nl = space.basis().n_local();
        let tables = self.tables(q);
        let mut local = vec![0.0; nl * nl];
        let mut grads = vec![[0.0; 2]; nl];
        for c in 0..space.mesh().n_cells() {
            let dofs = space.layout().cell_dofs(c);
            let s = space.derivative_scale(c);
            let jac = space.cell_jacobian(c);
            local.iter_mut().for_each(|v| *v = 0.0);
            for p in &tables.volume {
                let w = p.weight * jac * psi.eval(dofs, &p.tab);
                for (g, r) in grads.iter_mut().zip(&p.tab.gradients) {
                    *g = [r[0] * s[0], r[1] * s[1]];
                }
                for i in 0..nl {
                    let gi = grads[i];
                    if gi[0] == 0.0 && gi[1] == 0.0 {
                        continue;
                    }
                    for j in 0..nl {
                        let gj = grads[j];
                        let dot = if dim == 1 { gi[0] * gj[0] } else { gi[0] * gj[0] + gi[1] * gj[1] };
                        local[i * nl + j] += w * dot;
                    }
                }
            }
            for i in 0..nl {
                for j in 0..nl {
                    a.add(dofs[i], dofs[j], local[i * nl + j]);
                }
            }
        }
    }

    /// Physical weight of a face quadrature point on an edge.
    fn face_weight(&self, edge: &Edge, ref_weight: f64) -> f64 {
        if self.space.dim() == 1 {
            1.0
        } else {
            ref_weight * 0.5 * edge.diameter
        }
    }

    fn edge_sides(&self, edge: &Edge) -> (usize, usize, usize, Option<(usize, usize)>) {
        let axis = edge.axis;
        let f1 = face_index(axis, edge.minus.face.side);
        let c1 = edge.minus.cell;
        let plus = edge.plus.map(|p| (p.cell, face_index(axis, p.face.side)));
        (axis, c1, f1, plus)
    }

    fn add_interior_edge(&self, a: &mut SparseOperator, edge: &Edge, psi: Mobility, q: Quadrature, beta0: f64, beta1: f64) {
        let space = &self.space;
        let nl = space.basis().n_local();
        let tables = self.tables(q);
        let (axis, c1, f1, plus) = self.edge_sides(edge);
        let (c2, f2) = plus.expect("interior edge");
        let d1 = space.layout().cell_dofs(c1);
        let d2 = space.layout().cell_dofs(c2);
        let s1 = space.derivative_scale(c1)[axis] * edge.normal_sign;
        let s2 = space.derivative_scale(c2)[axis] * edge.normal_sign;
        let h = edge.h_e;
        // combined local numbering: K1 dofs then K2 dofs
        let mut jump = vec![0.0; 2 * nl];
        let mut avg_dn = vec![0.0; 2 * nl];
        let mut jump_d2 = vec![0.0; 2 * nl];
        let mut local = vec![0.0; 4 * nl * nl];
        for (p1, p2) in tables.faces[f1].iter().zip(&tables.faces[f2]) {
            let w = self.face_weight(edge, p1.weight);
            let psi_avg = 0.5 * (psi.eval(d1, &p1.tab) + psi.eval(d2, &p2.tab));
            for l in 0..nl {
                jump[l] = -p1.tab.values[l];
                avg_dn[l] = 0.5 * p1.tab.gradients[l][axis] * s1;
                jump_d2[l] = -p1.tab.second[l][axis] * s1 * s1;
                jump[nl + l] = p2.tab.values[l];
                avg_dn[nl + l] = 0.5 * p2.tab.gradients[l][axis] * s2;
                jump_d2[nl + l] = p2.tab.second[l][axis] * s2 * s2;
            }
            let wp = w * psi_avg;
            for i in 0..2 * nl {
                for j in 0..2 * nl {
                    let flux_j = beta0 * jump[j] / h + avg_dn[j] + beta1 * h * jump_d2[j];
                    local[i * 2 * nl + j] += wp * (flux_j * jump[i] + jump[j] * avg_dn[i]);
                }
            }
        }
        let g = |l: usize| if l < nl { d1[l] } else { d2[l - nl] };
        for i in 0..2 * nl {
            for j in 0..2 * nl {
                let v = local[i * 2 * nl + j];
                if v != 0.0 {
                    a.add(g(i), g(j), v);
                }
            }
        }
    }

    /// Adds the boundary terms of `bcs` at time `t` to an assembled `a_psi`.
    /// DDG: weak Dirichlet terms go into `a` and the returned load. FEM: the
    /// Dirichlet values are returned for strong imposition; `a` is unchanged.
    pub fn add_boundary(&self, a: &mut SparseOperator, psi: Mobility, bcs: &BoundaryConditions, t: f64) -> Result<BoundaryData> {
        self.add_boundary_with(a, psi, bcs, t, Quadrature::Lumped)
    }

    pub fn add_boundary_with(
        &self,
        a: &mut SparseOperator,
        psi: Mobility,
        bcs: &BoundaryConditions,
        t: f64,
        q: Quadrature,
    ) -> Result<BoundaryData> {
        let space = &self.space;
        bcs.validate(space.mesh())?;
        psi.check(space)?;
        let n = space.n_dofs();
        let mut data = BoundaryData { load: vec![0.0; n], strong: Vec::new() };
        let basis = space.basis();
        let k = space.order();
        let nl = basis.n_local();
        let tables = self.tables(q);
        for edge in space.mesh().boundary_edges() {
            let crate::mesh::EdgeKind::Boundary(side) = edge.kind else { continue };
            let BoundaryCondition::Dirichlet(g) = bcs.get(side) else { continue };
            let (axis, c, f, _) = self.edge_sides(edge);
            let cell = space.mesh().cell(c);
            let dofs = space.layout().cell_dofs(c);
            match self.method {
                Method::Fem => {
                    let target = if edge.minus.face.side == Side::Upper { k } else { 0 };
                    for (l, &dof) in dofs.iter().enumerate() {
                        if basis.split(l)[axis] == target {
                            data.strong.push((dof, g(t, &space.layout().point(dof))));
                        }
                    }
                }
                Method::Ddg { beta0, .. } => {
                    let beta0 = dirichlet_penalty(k, beta0);
                    let s = space.derivative_scale(c)[axis] * edge.normal_sign;
                    let h = edge.h_e;
                    for p in &tables.faces[f] {
                        let w = self.face_weight(edge, p.weight) * psi.eval(dofs, &p.tab);
                        let x = cell.map_to_physical(&p.xi[..space.dim()]);
                        let gv = g(t, &x);
                        if !gv.is_finite() {
                            return Err(PnpError::NonFiniteSample { point: x.to_vec(), value: gv });
                        }
                        for i in 0..nl {
                            let vi = p.tab.values[i];
                            let dni = p.tab.gradients[i][axis] * s;
                            data.load[dofs[i]] += w * (beta0 * gv * vi / h - gv * dni);
                            for j in 0..nl {
                                let vj = p.tab.values[j];
                                let dnj = p.tab.gradients[j][axis] * s;
                                let v = w * (beta0 * vi * vj / h - dnj * vi - vj * dni);
                                if v != 0.0 {
                                    a.add(dofs[i], dofs[j], v);
                                }
                            }
                        }
                    }
                }
            }
        }
        data.strong.sort_by_key(|e| e.0);
        data.strong.dedup_by_key(|e| e.0);
        Ok(data)
    }

    /// DDG flux data of `w` at the face quadrature points of an interior edge.
    pub fn flux_terms(&self, edge_id: usize, w: &Field) -> Result<Vec<FluxSample>> {
        let Method::Ddg { beta0, beta1 } = self.method else {
            return Err(PnpError::InvalidArgument("flux terms are defined for ddg only".into()));
        };
        w.check_space(&self.space)?;
        let mesh = self.space.mesh();
        let edge = mesh.edges().get(edge_id).ok_or(PnpError::ForeignEdge(edge_id))?;
        if !edge.is_interior() {
            return Err(PnpError::MissingBoundaryCondition(edge_id));
        }
        let (axis, c1, f1, plus) = self.edge_sides(edge);
        let (c2, f2) = plus.expect("interior edge");
        let sides = [
            (c1, f1, self.space.derivative_scale(c1)[axis] * edge.normal_sign),
            (c2, f2, self.space.derivative_scale(c2)[axis] * edge.normal_sign),
        ];
        let mut out = Vec::new();
        for qi in 0..self.lumped.faces[f1].len() {
            let mut tr = [(0.0, 0.0, 0.0); 2];
            for (s, &(c, f, scale)) in sides.iter().enumerate() {
                let side = SideTrace { dofs: self.space.layout().cell_dofs(c), tab: &self.lumped.faces[f][qi].tab, scale };
                tr[s] = trace_of(w.values(), &side, axis);
            }
            let p = &self.lumped.faces[f1][qi];
            let point = mesh.cell(c1).map_to_physical(&p.xi[..self.space.dim()]);
            let average = 0.5 * (tr[0].0 + tr[1].0);
            let jump = tr[1].0 - tr[0].0;
            let avg_dn = 0.5 * (tr[0].1 + tr[1].1);
            let jump_d2 = tr[1].2 - tr[0].2;
            out.push(FluxSample {
                point,
                weight: self.face_weight(edge, p.weight),
                average,
                jump,
                average_normal_derivative: avg_dn,
                jump_second_normal_derivative: jump_d2,
                flux: beta0 * jump / edge.h_e + avg_dn + beta1 * edge.h_e * jump_d2,
            });
        }
        Ok(out)
    }

    /// Exact consistent mass matrix `(u, v)`.
    pub fn mass_exact(&self) -> SparseOperator {
        let space = &self.space;
        let nl = space.basis().n_local();
        let mut m = SparseOperator::zeros(Arc::clone(&self.pattern));
        for c in 0..space.mesh().n_cells() {
            let dofs = space.layout().cell_dofs(c);
            let jac = space.cell_jacobian(c);
            for p in &self.exact.volume {
                let w = p.weight * jac;
                for i in 0..nl {
                    for j in 0..nl {
                        m.add(dofs[i], dofs[j], w * p.tab.values[i] * p.tab.values[j]);
                    }
                }
            }
        }
        m
    }

    /// `||v||_E^2`: broken H^1 seminorm plus `h_e^{-1}`-weighted squared
    /// jumps over interior edges, all integrated exactly.
    pub fn energy_norm_sq(&self, v: &Field) -> Result<f64> {
        v.check_space(&self.space)?;
        let space = &self.space;
        let mut total = 0.0;
        for c in 0..space.mesh().n_cells() {
            let dofs = space.layout().cell_dofs(c);
            let s = space.derivative_scale(c);
            let jac = space.cell_jacobian(c);
            for p in &self.exact.volume {
                let mut g = [0.0; 2];
                for (l, &d) in dofs.iter().enumerate() {
                    g[0] += v.values()[d] * p.tab.gradients[l][0] * s[0];
                    g[1] += v.values()[d] * p.tab.gradients[l][1] * s[1];
                }
                total += p.weight * jac * (g[0] * g[0] + g[1] * g[1]);
            }
        }
        for e in space.mesh().interior_edges() {
            let (_, c1, f1, plus) = self.edge_sides(e);
            let (c2, f2) = plus.expect("interior edge");
            for (p1, p2) in self.exact.faces[f1].iter().zip(&self.exact.faces[f2]) {
                let u1 = Mobility::Nodal(v).eval(space.layout().cell_dofs(c1), &p1.tab);
                let u2 = Mobility::Nodal(v).eval(space.layout().cell_dofs(c2), &p2.tab);
                total += self.face_weight(e, p1.weight) * (u2 - u1).powi(2) / e.h_e;
            }
        }
        Ok(total)
    }
}

/// (value, d_n, d_n^2) of a field trace.
fn trace_of(values: &[f64], side: &SideTrace, axis: usize) -> (f64, f64, f64) {
    let mut t = (0.0, 0.0, 0.0);
    for (l, &d) in side.dofs.iter().enumerate() {
        let c = values[d];
        t.0 += c * side.tab.values[l];
        t.1 += c * side.tab.gradients[l][axis] * side.scale;
        t.2 += c * side.tab.second[l][axis] * side.scale * side.scale;
    }
    t
}

/// Replaces the rows of strongly imposed dofs by identity rows and sets the
/// right-hand side to the prescribed values.
pub fn apply_strong(a: &mut SparseOperator, rhs: &mut [f64], strong: &[(usize, f64)]) {
    for &(dof, v) in strong {
        a.set_identity_row(dof);
        rhs[dof] = v;
    }
}

/// `A` augmented by one Lagrange multiplier enforcing `W^T u = 0`: returns
/// the `(n+1) x (n+1)` operator `[A W; W^T 0]`.
pub fn augment_mean_constraint(a: &SparseOperator, w: &[f64]) -> SparseOperator {
    let n = a.n_rows();
    let mut t = Vec::with_capacity(a.nnz() + 2 * n);
    for i in 0..n {
        t.extend(a.row(i).map(|(j, v)| (i, j, v)));
        t.push((i, n, w[i]));
        t.push((n, i, w[i]));
    }
    t.push((n, n, 0.0));
    SparseOperator::from_triplets(n + 1, n + 1, &t).expect("indices in range")
}

/// The Poisson operator `eps^2 a(phi, w) = <rho, w>` with its boundary
/// conditions. Pure Neumann/periodic problems are solved on the mean-zero
/// complement through one Lagrange multiplier.
#[derive(Debug, Clone)]
pub struct PoissonOperator {
    assembler: Arc<FormAssembler>,
    bcs: BoundaryConditions,
    eps2: f64,
    /// `eps^2 a` including the weak DDG boundary terms.
    stiffness: SparseOperator,
    mean_constraint: bool,
}

impl PoissonOperator {
    pub fn new(assembler: &Arc<FormAssembler>, bcs: BoundaryConditions, eps: f64) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(PnpError::InvalidArgument(format!("dielectric coefficient {eps} must be positive")));
        }
        let eps2 = eps * eps;
        let mut stiffness = assembler.assemble(Mobility::Constant(eps2))?;
        assembler.add_boundary(&mut stiffness, Mobility::Constant(eps2), &bcs, 0.0)?;
        let mean_constraint = !bcs.has_dirichlet();
        Ok(Self { assembler: Arc::clone(assembler), bcs, eps2, stiffness, mean_constraint })
    }

    pub fn stiffness(&self) -> &SparseOperator {
        &self.stiffness
    }

    pub fn eps2(&self) -> f64 {
        self.eps2
    }

    pub fn needs_mean_constraint(&self) -> bool {
        self.mean_constraint
    }

    pub fn boundary_conditions(&self) -> &BoundaryConditions {
        &self.bcs
    }

    /// Boundary load and strong values at time `t`.
    pub fn boundary_data(&self, t: f64) -> Result<BoundaryData> {
        let mut scratch = SparseOperator::zeros(Arc::clone(self.assembler.pattern()));
        self.assembler.add_boundary(&mut scratch, Mobility::Constant(self.eps2), &self.bcs, t)
    }

    /// Checks that a nodal charge density is compatible with a pure
    /// Neumann/periodic problem: `|<rho, 1>| <= 1e-10 <|rho|, 1>`.
    pub fn check_compatible(&self, rho: &[f64]) -> Result<()> {
        if !self.mean_constraint {
            return Ok(());
        }
        let w = self.assembler.space().lumped_mass();
        let net: f64 = rho.iter().zip(w).map(|(r, w)| r * w).sum();
        let scale: f64 = rho.iter().zip(w).map(|(r, w)| r.abs() * w).sum();
        if net.abs() > 1e-10 * scale.max(f64::MIN_POSITIVE) && net.abs() > 1e-300 {
            return Err(PnpError::IncompatibleRhs { net, relative: net / scale });
        }
        Ok(())
    }

    /// Solves for `phi` given the nodal charge density `rho` at time `t`.
    pub fn solve(&self, solver: &mut DirectSolver, rho: &[f64], t: f64) -> Result<Field> {
        let space = self.assembler.space();
        let n = space.n_dofs();
        if rho.len() != n {
            return Err(PnpError::LayoutMismatch);
        }
        self.check_compatible(rho)?;
        let w = space.lumped_mass();
        let bd = self.boundary_data(t)?;
        let mut rhs: Vec<f64> = (0..n).map(|j| w[j] * rho[j] + bd.load[j]).collect();
        let phi = if self.mean_constraint {
            let a = augment_mean_constraint(&self.stiffness, w);
            rhs.push(0.0);
            let mut x = solver.solve(&a, &rhs)?;
            x.truncate(n);
            x
        } else {
            let mut a = self.stiffness.clone();
            apply_strong(&mut a, &mut rhs, &bd.strong);
            solver.solve(&a, &rhs)?
        };
        Field::new(space, phi)
    }
}

/// `L_psi(f)`: the mean-zero `u` with `a_psi(u, v) = (f - mean(f), v)` for
/// every `v`, with `(.,.)` the exact L^2 product.
pub fn solve_lpsi(assembler: &FormAssembler, psi: Mobility, f: &Field, solver: &mut DirectSolver) -> Result<Field> {
    let space = assembler.space();
    f.check_space(space)?;
    let a = assembler.assemble(psi)?;
    let m = assembler.mass_exact();
    let w = space.lumped_mass();
    let mean = f.values().iter().zip(w).map(|(v, w)| v * w).sum::<f64>() / space.mesh().domain().measure();
    let centered: Vec<f64> = f.values().iter().map(|v| v - mean).collect();
    let mut rhs = m.matvec(&centered);
    rhs.push(0.0);
    let aug = augment_mean_constraint(&a, w);
    let mut u = solver.solve(&aug, &rhs)?;
    u.truncate(space.n_dofs());
    Field::new(space, u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{Domain, Mesh};
    use crate::space::interpolate;

    fn periodic_1d(n: usize, k: usize, method: Method) -> Arc<FormAssembler> {
        let m = Mesh::new(Domain::interval(0.0, 1.0, true).unwrap(), &[n]).unwrap();
        let s = Space::new(m, k, method.continuity()).unwrap();
        Arc::new(FormAssembler::new(&s, method).unwrap())
    }

    #[test]
    fn gamma_values() {
        assert_eq!(gamma_of_beta1(1, 0.25), 1.0);
        assert!((gamma_of_beta1(2, 0.0) - 4.0).abs() < 1e-15);
        assert!((gamma_of_beta1(2, 1.0 / 12.0) - 37.0 / 12.0).abs() < 1e-14);
        let ones = MobilityBounds::new(1.0, 1.0).unwrap();
        assert!(check_stability(4.0, 0.25, 1, ones));
        assert!(check_stability(4.0, 1.0 / 12.0, 2, ones));
        assert!(!check_stability(1.0, 0.0, 2, ones));
        assert!(MobilityBounds::new(0.0, 1.0).is_err());
    }

    #[test]
    fn k1_fem_stiffness_entries() {
        let a = periodic_1d(4, 1, Method::Fem).assemble_exact(Mobility::Constant(1.0)).unwrap();
        // element stiffness (1/h) [1 -1; -1 1] with h = 1/4
        assert!((a.get(1, 1) - 8.0).abs() < 1e-12);
        assert!((a.get(1, 2) + 4.0).abs() < 1e-12);
        assert!((a.get(0, 3) + 4.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_layout_mismatch_and_bad_mobility() {
        let m = Mesh::new(Domain::interval(0.0, 1.0, true).unwrap(), &[3]).unwrap();
        let s = Space::new(m, 1, Continuity::Continuous).unwrap();
        assert!(FormAssembler::new(&s, Method::Ddg { beta0: 1.0, beta1: 0.0 }).is_err());
        let f = FormAssembler::new(&s, Method::Fem).unwrap();
        assert!(f.assemble(Mobility::Constant(0.0)).is_err());
        let mut psi = Field::constant(&s, 1.0);
        psi.values_mut()[1] = -1.0;
        assert!(matches!(f.assemble(Mobility::Nodal(&psi)), Err(PnpError::NonPositiveMobility { dof: 1, .. })));
    }

    #[test]
    fn periodic_poisson_sine() {
        let asm = periodic_1d(16, 3, Method::Ddg { beta0: 4.0, beta1: 0.0 });
        let s = asm.space().clone();
        let p = PoissonOperator::new(&asm, BoundaryConditions::zero_flux(), 1.0).unwrap();
        let rho: Vec<f64> = s.layout().points().iter().map(|x| (2.0 * std::f64::consts::PI * x[0]).sin()).collect();
        let phi = p.solve(&mut DirectSolver::new(), &rho, 0.0).unwrap();
        let exact = |x: f64| (2.0 * std::f64::consts::PI * x).sin() / (4.0 * std::f64::consts::PI.powi(2));
        let mut err: f64 = 0.0;
        for (x, v) in s.layout().points().iter().zip(phi.values()) {
            err = err.max((exact(x[0]) - v).abs());
        }
        assert!(err < 1e-6, "{err}");
        assert!(p.solve(&mut DirectSolver::new(), &vec![1.0; s.n_dofs()], 0.0).is_err());
    }

    #[test]
    fn flux_of_continuous_field() {
        let asm = periodic_1d(4, 2, Method::Ddg { beta0: 4.0, beta1: 1.0 / 12.0 });
        let f = interpolate(asm.space(), |x| x[0] * x[0]).unwrap();
        let e = asm.space().mesh().interior_edges().find(|e| (e.position - 0.5).abs() < 1e-12).unwrap().id;
        let t = asm.flux_terms(e, &f).unwrap();
        assert_eq!(t.len(), 1);
        assert!(t[0].jump.abs() < 1e-14);
        assert!((t[0].flux - 1.0).abs() < 1e-12);
        assert!((t[0].average - 0.25).abs() < 1e-14);
    }

    #[test]
    fn interpolate_sine_rate() {
        for k in [2] {
            let mut errs = Vec::new();
            for n in [8, 16, 32] {
                let asm = periodic_1d(n, k, Method::Ddg { beta0: 4.0, beta1: 0.0 });
                let f = interpolate(asm.space(), |x| (2.0 * std::f64::consts::PI * x[0]).sin()).unwrap();
                let mut e2 = 0.0;
                for c in 0..n {
                    let cell = asm.space().mesh().cell(c);
                    let g = gauss_rule(8).unwrap();
                    for (xi, w) in g.nodes.iter().zip(&g.weights) {
                        let x = cell.map_to_physical(&[*xi]);
                        let d = f.eval(c, &[*xi]) - (2.0 * std::f64::consts::PI * x[0]).sin();
                        e2 += w * 0.5 * cell.width(0) * d * d;
                    }
                }
                errs.push(e2.sqrt());
            }
            for p in errs.windows(2) {
                let r = (p[0] / p[1]).log2();
                assert!((r - 3.0).abs() < 0.1, "rate {r}");
            }
        }
    }
}
