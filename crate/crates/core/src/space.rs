//! Discrete spaces V_h: a mesh, a Q^k nodal basis at the Gauss-Lobatto
//! points, and a global numbering (continuous or cell-local).

use std::sync::Arc;

use crate::basis::TensorBasis;
use crate::error::{PnpError, Result};
use crate::mesh::{Mesh, Point};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Continuity {
    /// C^0 elements: nodes shared by neighbouring cells (and periodic images)
    /// carry one global index.
    Continuous,
    /// Discontinuous elements: every cell owns its nodes.
    CellLocal,
}

/// Map `(cell, local node) -> global dof`.
#[derive(Debug, Clone, PartialEq)]
pub struct DofLayout {
    continuity: Continuity,
    n_local: usize,
    n_dofs: usize,
    map: Vec<usize>,
    points: Vec<Point>,
}

impl DofLayout {
    pub fn new(mesh: &Mesh, basis: &TensorBasis, continuity: Continuity) -> Self {
        let n_local = basis.n_local();
        let k = basis.order();
        let dim = mesh.dim();
        let mut map = Vec::with_capacity(mesh.n_cells() * n_local);
        let n_dofs;
        match continuity {
            Continuity::CellLocal => {
                map.extend(0..mesh.n_cells() * n_local);
                n_dofs = map.len();
            }
            Continuity::Continuous => {
                let per_axis: Vec<usize> = (0..dim)
                    .map(|a| {
                        let n = mesh.counts()[a] * k;
                        if mesh.domain().is_periodic(a) {
                            n
                        } else {
                            n + 1
                        }
                    })
                    .collect();
                for cell in mesh.cells() {
                    for l in 0..n_local {
                        let idx = basis.split(l);
                        let mut g = [0usize; 2];
                        for a in 0..dim {
                            g[a] = (cell.index[a] * k + idx[a]) % per_axis[a];
                        }
                        map.push(g[0] + if dim == 2 { per_axis[0] * g[1] } else { 0 });
                    }
                }
                n_dofs = per_axis.iter().product();
            }
        }
        let mut points = vec![[f64::NAN; 2]; n_dofs];
        for cell in mesh.cells() {
            for l in 0..n_local {
                let g = map[cell.id * n_local + l];
                if points[g][0].is_nan() {
                    points[g] = cell.map_to_physical(&basis.node(l)[..dim]);
                }
            }
        }
        Self { continuity, n_local, n_dofs, map, points }
    }

    pub fn continuity(&self) -> Continuity {
        self.continuity
    }

    pub fn n_dofs(&self) -> usize {
        self.n_dofs
    }

    pub fn n_local(&self) -> usize {
        self.n_local
    }

    pub fn global(&self, cell: usize, local: usize) -> usize {
        self.map[cell * self.n_local + local]
    }

    pub fn cell_dofs(&self, cell: usize) -> &[usize] {
        &self.map[cell * self.n_local..(cell + 1) * self.n_local]
    }

    /// Physical collocation point of a global dof (first image for
    /// periodic duplicates).
    pub fn point(&self, dof: usize) -> Point {
        self.points[dof]
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }
}

/// A discrete space: mesh, basis and layout, plus the lumped (Gauss-Lobatto)
/// mass of every global dof.
#[derive(Debug, Clone, PartialEq)]
pub struct Space {
    mesh: Mesh,
    basis: TensorBasis,
    layout: DofLayout,
    lumped: Vec<f64>,
}

impl Space {
    pub fn new(mesh: Mesh, k: usize, continuity: Continuity) -> Result<Arc<Self>> {
        let basis = TensorBasis::new(mesh.dim(), k)?;
        let layout = DofLayout::new(&mesh, &basis, continuity);
        let mut lumped = vec![0.0; layout.n_dofs()];
        for cell in mesh.cells() {
            let scale = Self::jacobian(&mesh, cell.id);
            for l in 0..basis.n_local() {
                lumped[layout.global(cell.id, l)] += basis.node_weight(l) * scale;
            }
        }
        Ok(Arc::new(Self { mesh, basis, layout, lumped }))
    }

    fn jacobian(mesh: &Mesh, cell: usize) -> f64 {
        let c = mesh.cell(cell);
        (0..mesh.dim()).map(|a| 0.5 * c.width(a)).product()
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn basis(&self) -> &TensorBasis {
        &self.basis
    }

    pub fn layout(&self) -> &DofLayout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.mesh.dim()
    }

    pub fn order(&self) -> usize {
        self.basis.order()
    }

    pub fn n_dofs(&self) -> usize {
        self.layout.n_dofs()
    }

    pub fn continuity(&self) -> Continuity {
        self.layout.continuity()
    }

    /// Lumped mass `<1, l_j>` of every global dof.
    pub fn lumped_mass(&self) -> &[f64] {
        &self.lumped
    }

    /// Determinant of the reference-to-physical map of a cell.
    pub fn cell_jacobian(&self, cell: usize) -> f64 {
        Self::jacobian(&self.mesh, cell)
    }

    /// Physical quadrature weight of a local node of a cell.
    pub fn node_weight(&self, cell: usize, local: usize) -> f64 {
        self.basis.node_weight(local) * self.cell_jacobian(cell)
    }

    /// Per-axis factor `2 / width` converting reference to physical derivatives.
    pub fn derivative_scale(&self, cell: usize) -> [f64; 2] {
        let c = self.mesh.cell(cell);
        let mut s = [0.0; 2];
        for (a, v) in s.iter_mut().enumerate().take(self.dim()) {
            *v = 2.0 / c.width(a);
        }
        s
    }
}

/// Coefficient vector of one scalar unknown: its values at the global
/// collocation points of a [`Space`].
#[derive(Debug, Clone)]
pub struct Field {
    space: Arc<Space>,
    values: Vec<f64>,
}

impl PartialEq for Field {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.space, &other.space) && self.values == other.values
    }
}

impl Field {
    pub fn new(space: &Arc<Space>, values: Vec<f64>) -> Result<Self> {
        if values.len() != space.n_dofs() {
            return Err(PnpError::LayoutMismatch);
        }
        if let Some((dof, &v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(PnpError::NonFiniteSample { point: space.layout().point(dof).to_vec(), value: v });
        }
        Ok(Self { space: Arc::clone(space), values })
    }

    pub fn constant(space: &Arc<Space>, value: f64) -> Self {
        Self { space: Arc::clone(space), values: vec![value; space.n_dofs()] }
    }

    pub fn zeros(space: &Arc<Space>) -> Self {
        Self::constant(space, 0.0)
    }

    pub(crate) fn from_raw(space: &Arc<Space>, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), space.n_dofs());
        Self { space: Arc::clone(space), values }
    }

    pub fn space(&self) -> &Arc<Space> {
        &self.space
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_space(&self, other: &Field) -> bool {
        Arc::ptr_eq(&self.space, &other.space)
    }

    pub fn check_space(&self, space: &Arc<Space>) -> Result<()> {
        if Arc::ptr_eq(&self.space, space) {
            Ok(())
        } else {
            Err(PnpError::LayoutMismatch)
        }
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Nodal values of one cell in local order.
    pub fn cell_values(&self, cell: usize) -> Vec<f64> {
        self.space.layout().cell_dofs(cell).iter().map(|&g| self.values[g]).collect()
    }

    /// Value of the piecewise polynomial at a reference point of a cell.
    pub fn eval(&self, cell: usize, xi: &[f64]) -> f64 {
        let tab = self.space.basis().eval_unchecked(xi);
        let dofs = self.space.layout().cell_dofs(cell);
        dofs.iter().zip(&tab.values).map(|(&g, &b)| self.values[g] * b).sum()
    }

    /// Value and physical gradient at a reference point of a cell.
    pub fn eval_with_gradient(&self, cell: usize, xi: &[f64]) -> (f64, [f64; 2]) {
        let tab = self.space.basis().eval_unchecked(xi);
        let dofs = self.space.layout().cell_dofs(cell);
        let s = self.space.derivative_scale(cell);
        let mut v = 0.0;
        let mut g = [0.0; 2];
        for (j, &dof) in dofs.iter().enumerate() {
            let c = self.values[dof];
            v += c * tab.values[j];
            g[0] += c * tab.gradients[j][0] * s[0];
            g[1] += c * tab.gradients[j][1] * s[1];
        }
        (v, g)
    }

    /// Value at a physical point.
    pub fn eval_at(&self, x: &[f64]) -> Option<f64> {
        let cell = self.space.mesh().locate(x)?;
        let xi = self.space.mesh().cell(cell).map_to_reference(x);
        Some(self.eval(cell, &xi[..self.space.dim()]))
    }

    /// Cell average `(1/|K|) * sum_j w_j c(g_j)`. The (k+1)-point
    /// Gauss-Lobatto rule is exact for Q^k, so this is the exact mean.
    pub fn cell_average(&self, cell: usize) -> f64 {
        let space = &self.space;
        let dofs = space.layout().cell_dofs(cell);
        let s: f64 = dofs
            .iter()
            .enumerate()
            .map(|(l, &g)| space.node_weight(cell, l) * self.values[g])
            .sum();
        s / space.mesh().cell(cell).measure
    }

    pub fn axpy(&mut self, alpha: f64, x: &Field) {
        for (y, &v) in self.values.iter_mut().zip(&x.values) {
            *y += alpha * v;
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field::from_raw(&self.space, self.values.iter().map(|&v| f(v)).collect())
    }
}

/// Gauss-Lobatto interpolation `I_h f`: samples `f` at every collocation
/// point (shared nodes of a continuous layout once).
pub fn interpolate(space: &Arc<Space>, f: impl Fn(&Point) -> f64) -> Result<Field> {
    let values: Vec<f64> = space.layout().points().iter().map(&f).collect();
    Field::new(space, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Domain;

    fn space_1d(n: usize, k: usize, periodic: bool, c: Continuity) -> Arc<Space> {
        let m = Mesh::new(Domain::interval(0.0, 1.0, periodic).unwrap(), &[n]).unwrap();
        Space::new(m, k, c).unwrap()
    }

    #[test]
    fn continuous_counts() {
        assert_eq!(space_1d(4, 2, false, Continuity::Continuous).n_dofs(), 9);
        assert_eq!(space_1d(4, 2, true, Continuity::Continuous).n_dofs(), 8);
        assert_eq!(space_1d(4, 2, true, Continuity::CellLocal).n_dofs(), 12);
        let d = Domain::rectangle([0.0, 1.0], [0.0, 1.0], [false, true]).unwrap();
        let s = Space::new(Mesh::new(d, &[3, 2]).unwrap(), 2, Continuity::Continuous).unwrap();
        assert_eq!(s.n_dofs(), 7 * 4);
    }

    #[test]
    fn shared_nodes_map_to_one_index() {
        let s = space_1d(3, 2, true, Continuity::Continuous);
        let l = s.layout();
        assert_eq!(l.global(0, 2), l.global(1, 0));
        assert_eq!(l.global(2, 2), l.global(0, 0));
        let s = space_1d(3, 2, false, Continuity::CellLocal);
        let mut all: Vec<usize> = (0..3).flat_map(|c| s.layout().cell_dofs(c).to_vec()).collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 9);
    }

    #[test]
    fn lumped_mass_partitions_measure() {
        for c in [Continuity::Continuous, Continuity::CellLocal] {
            let d = Domain::rectangle([0.0, 2.0], [0.0, 3.0], [false, true]).unwrap();
            let s = Space::new(Mesh::new(d, &[3, 4]).unwrap(), 3, c).unwrap();
            let total: f64 = s.lumped_mass().iter().sum();
            assert!((total - 6.0).abs() < 1e-13);
        }
    }

    #[test]
    fn interpolation_reproduces_polynomials() {
        let d = Domain::rectangle([0.0, 1.0], [0.0, 1.0], [false, false]).unwrap();
        let s = Space::new(Mesh::new(d, &[3, 2]).unwrap(), 2, Continuity::Continuous).unwrap();
        let f = |p: &Point| 1.0 + p[0] * p[0] * p[1] - 2.0 * p[1] * p[1];
        let fh = interpolate(&s, f).unwrap();
        for x in [[0.13, 0.71], [0.5, 0.5], [0.99, 0.02]] {
            assert!((fh.eval_at(&x).unwrap() - f(&x)).abs() < 1e-13);
        }
        let one = interpolate(&s, |_| 1.0).unwrap();
        assert!(one.values().iter().all(|&v| v == 1.0));
        assert!(interpolate(&s, |p| 1.0 / p[0]).is_err());
    }

    #[test]
    fn interpolation_is_a_projection() {
        let s = space_1d(5, 3, false, Continuity::CellLocal);
        let f = interpolate(&s, |p| (3.0 * p[0]).sin()).unwrap();
        let g = interpolate(&s, |p| f.eval_at(p).unwrap()).unwrap();
        for (a, b) in f.values().iter().zip(g.values()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn cell_average_of_linear_cell() {
        let s = space_1d(1, 1, false, Continuity::CellLocal);
        let f = Field::new(&s, vec![-0.1, 0.5]).unwrap();
        assert!((f.cell_average(0) - 0.2).abs() < 1e-15);
    }
}
