//! Uniform tensor-product meshes on intervals and rectangles.
//!
//! Cells are enumerated lexicographically with the x index running fastest.
//! Every face shared by two cells, including the wrap-around faces of a
//! periodic axis, is stored once as an interior [`Edge`] whose normal points
//! from its `minus` cell (K1) to its `plus` cell (K2). Faces on a
//! non-periodic boundary are stored as boundary edges with the single cell
//! as `minus` and the normal pointing out of the domain.

use std::fmt;
use std::sync::Arc;

use crate::error::{PnpError, Result};

/// Physical point; unused coordinates are zero in 1D.
pub type Point = [f64; 2];

#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    lower: Vec<f64>,
    upper: Vec<f64>,
    periodic: Vec<bool>,
}

impl Domain {
    pub fn new(lower: &[f64], upper: &[f64], periodic: &[bool]) -> Result<Self> {
        let dim = lower.len();
        if !(1..=2).contains(&dim) {
            return Err(PnpError::InvalidDomain(format!("dimension {dim} not in {{1, 2}}")));
        }
        if upper.len() != dim || periodic.len() != dim {
            return Err(PnpError::InvalidDomain(
                "bounds and periodic flags must have one entry per axis".into(),
            ));
        }
        for axis in 0..dim {
            let (a, b) = (lower[axis], upper[axis]);
            if !(a.is_finite() && b.is_finite() && b > a) {
                return Err(PnpError::InvalidDomain(format!(
                    "axis {axis}: upper bound {b} must exceed lower bound {a}"
                )));
            }
        }
        Ok(Self {
            lower: lower.to_vec(),
            upper: upper.to_vec(),
            periodic: periodic.to_vec(),
        })
    }

    pub fn interval(a: f64, b: f64, periodic: bool) -> Result<Self> {
        Self::new(&[a], &[b], &[periodic])
    }

    pub fn rectangle(x: [f64; 2], y: [f64; 2], periodic: [bool; 2]) -> Result<Self> {
        Self::new(&[x[0], y[0]], &[x[1], y[1]], &periodic)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self, axis: usize) -> f64 {
        self.lower[axis]
    }

    pub fn upper(&self, axis: usize) -> f64 {
        self.upper[axis]
    }

    pub fn length(&self, axis: usize) -> f64 {
        self.upper[axis] - self.lower[axis]
    }

    pub fn is_periodic(&self, axis: usize) -> bool {
        self.periodic[axis]
    }

    pub fn measure(&self) -> f64 {
        (0..self.dim()).map(|a| self.length(a)).product()
    }
}

/// Lower or upper end of an axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    Lower,
    Upper,
}

impl Side {
    /// Sign of the outward normal of a cell face on this side.
    pub fn sign(self) -> f64 {
        match self {
            Side::Lower => -1.0,
            Side::Upper => 1.0,
        }
    }

    /// Reference coordinate of this side on [-1, 1].
    pub fn reference_coordinate(self) -> f64 {
        self.sign()
    }
}

/// A face of a cell, identified by its normal axis and side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LocalFace {
    pub axis: usize,
    pub side: Side,
}

/// One face of the domain boundary, e.g. `x = lower`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BoundarySide {
    pub axis: usize,
    pub side: Side,
}

impl fmt::Display for BoundarySide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let axis = ["x", "y"][self.axis];
        let side = match self.side {
            Side::Lower => "lower",
            Side::Upper => "upper",
        };
        write!(f, "{axis}_{side}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub id: usize,
    /// Per-axis cell index; the second entry is zero in 1D.
    pub index: [usize; 2],
    pub lower: Point,
    pub upper: Point,
    pub measure: f64,
}

impl Cell {
    pub fn width(&self, axis: usize) -> f64 {
        self.upper[axis] - self.lower[axis]
    }

    /// Affine map from the reference cell [-1,1]^d.
    pub fn map_to_physical(&self, xi: &[f64]) -> Point {
        let mut p = [0.0; 2];
        for (axis, &r) in xi.iter().enumerate() {
            p[axis] = self.lower[axis] + 0.5 * (r + 1.0) * self.width(axis);
        }
        p
    }

    pub fn map_to_reference(&self, x: &[f64]) -> Point {
        let mut r = [0.0; 2];
        for (axis, &v) in x.iter().enumerate() {
            r[axis] = 2.0 * (v - self.lower[axis]) / self.width(axis) - 1.0;
        }
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeKind {
    Interior,
    Boundary(BoundarySide),
}

/// A cell together with which of its faces an edge is.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellFace {
    pub cell: usize,
    pub face: LocalFace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub id: usize,
    /// Axis the normal is aligned with.
    pub axis: usize,
    /// +1 or -1: the normal is `normal_sign * e_axis`, oriented minus -> plus
    /// (outward for boundary edges).
    pub normal_sign: f64,
    /// Coordinate of the face along the normal axis (taken on the minus side).
    pub position: f64,
    /// Tangential extent in 2D; empty range in 1D.
    pub tangential: [f64; 2],
    /// Face diameter (segment length in 2D, zero for a 1D point face).
    pub diameter: f64,
    /// Length scale used by the interior-penalty terms: the cell width
    /// normal to the face. Equals the face length on square cells.
    pub h_e: f64,
    pub minus: CellFace,
    pub plus: Option<CellFace>,
    pub kind: EdgeKind,
}

impl Edge {
    pub fn normal(&self) -> Point {
        let mut n = [0.0; 2];
        n[self.axis] = self.normal_sign;
        n
    }

    pub fn is_interior(&self) -> bool {
        matches!(self.kind, EdgeKind::Interior)
    }
}

/// Result of [`Mesh::edge_trace`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeTrace {
    /// K1: its face on this edge and the sign of the edge normal relative to
    /// that face's outward normal (+1: the edge normal is outward for K1).
    pub minus: TraceSide,
    /// K2 (absent on a boundary edge).
    pub plus: Option<TraceSide>,
    pub boundary: Option<BoundarySide>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceSide {
    pub cell: usize,
    pub face: LocalFace,
    /// Sign relating the edge normal to the cell's outward normal on this face.
    pub orientation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    domain: Domain,
    counts: Vec<usize>,
    cells: Vec<Cell>,
    edges: Vec<Edge>,
    /// cell -> [x_lower, x_upper, y_lower, y_upper] edge ids
    cell_edges: Vec<[Option<usize>; 4]>,
}

impl Mesh {
    pub fn new(domain: Domain, counts: &[usize]) -> Result<Self> {
        let dim = domain.dim();
        if counts.len() != dim {
            return Err(PnpError::InvalidMesh(format!(
                "expected {dim} cell counts, got {}",
                counts.len()
            )));
        }
        for (axis, &n) in counts.iter().enumerate() {
            if n == 0 {
                return Err(PnpError::InvalidMesh(format!("axis {axis}: cell count must be >= 1")));
            }
            if domain.is_periodic(axis) && n < 2 {
                return Err(PnpError::InvalidMesh(format!(
                    "axis {axis}: a periodic axis needs at least 2 cells"
                )));
            }
        }
        let nx = counts[0];
        let ny = if dim == 2 { counts[1] } else { 1 };
        let spacing: Vec<f64> = (0..dim).map(|a| domain.length(a) / counts[a] as f64).collect();

        let mut cells = Vec::with_capacity(nx * ny);
        for iy in 0..ny {
            for ix in 0..nx {
                let idx = [ix, iy];
                let mut lower = [0.0; 2];
                let mut upper = [0.0; 2];
                for axis in 0..dim {
                    let i = idx[axis] as f64;
                    lower[axis] = domain.lower(axis) + i * spacing[axis];
                    upper[axis] = if idx[axis] + 1 == counts[axis] {
                        domain.upper(axis)
                    } else {
                        domain.lower(axis) + (i + 1.0) * spacing[axis]
                    };
                }
                let measure = (0..dim).map(|a| upper[a] - lower[a]).product();
                cells.push(Cell { id: cells.len(), index: idx, lower, upper, measure });
            }
        }

        let cell_id = |ix: usize, iy: usize| ix + nx * iy;
        let mut edges = Vec::new();
        let mut cell_edges = vec![[None; 4]; cells.len()];
        for axis in 0..dim {
            let n_axis = counts[axis];
            let periodic = domain.is_periodic(axis);
            let other = 1 - axis;
            let n_other = if dim == 2 { counts[other] } else { 1 };
            for j in 0..n_other {
                // faces 0..=n_axis along this axis
                for i in 0..=n_axis {
                    let at = |a: usize| -> usize {
                        let mut idx = [0usize; 2];
                        idx[axis] = a;
                        if dim == 2 {
                            idx[other] = j;
                        }
                        cell_id(idx[0], idx[1])
                    };
                    let (minus, plus, kind, sign) = if i > 0 && i < n_axis {
                        (at(i - 1), Some(at(i)), EdgeKind::Interior, 1.0)
                    } else if periodic {
                        if i == n_axis {
                            continue; // the wrap face is emitted once, at i == 0
                        }
                        (at(n_axis - 1), Some(at(0)), EdgeKind::Interior, 1.0)
                    } else if i == 0 {
                        (at(0), None, EdgeKind::Boundary(BoundarySide { axis, side: Side::Lower }), -1.0)
                    } else {
                        (
                            at(n_axis - 1),
                            None,
                            EdgeKind::Boundary(BoundarySide { axis, side: Side::Upper }),
                            1.0,
                        )
                    };
                    let minus_side = if sign > 0.0 { Side::Upper } else { Side::Lower };
                    let mc = &cells[minus];
                    let position = match minus_side {
                        Side::Upper => mc.upper[axis],
                        Side::Lower => mc.lower[axis],
                    };
                    let (tangential, diameter) = if dim == 2 {
                        ([mc.lower[other], mc.upper[other]], mc.width(other))
                    } else {
                        ([0.0, 0.0], 0.0)
                    };
                    let id = edges.len();
                    let minus_face = CellFace { cell: minus, face: LocalFace { axis, side: minus_side } };
                    let plus_face = plus.map(|c| CellFace { cell: c, face: LocalFace { axis, side: Side::Lower } });
                    let h_e = match plus {
                        Some(p) => 0.5 * (mc.width(axis) + cells[p].width(axis)),
                        None => mc.width(axis),
                    };
                    cell_edges[minus][2 * axis + side_slot(minus_side)] = Some(id);
                    if let Some(pf) = plus_face {
                        cell_edges[pf.cell][2 * axis] = Some(id);
                    }
                    edges.push(Edge {
                        id,
                        axis,
                        normal_sign: sign,
                        position,
                        tangential,
                        diameter,
                        h_e,
                        minus: minus_face,
                        plus: plus_face,
                        kind,
                    });
                }
            }
        }

        Ok(Self { domain, counts: counts.to_vec(), cells, edges, cell_edges })
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn cell(&self, id: usize) -> &Cell {
        &self.cells[id]
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn interior_edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(|e| e.is_interior())
    }

    pub fn boundary_edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(|e| !e.is_interior())
    }

    /// Edge ids bounding a cell, indexed `2 * axis + (0 lower | 1 upper)`.
    pub fn cell_edges(&self, cell: usize) -> &[Option<usize>; 4] {
        &self.cell_edges[cell]
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.domain.length(axis) / self.counts[axis] as f64
    }

    /// Mesh size: the largest cell diameter.
    pub fn h(&self) -> f64 {
        self.cells
            .iter()
            .map(|c| (0..self.dim()).map(|a| c.width(a).powi(2)).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// Cell containing a physical point (upper faces belong to the last cell).
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        let mut idx = [0usize; 2];
        for axis in 0..self.dim() {
            let t = (x[axis] - self.domain.lower(axis)) / self.spacing(axis);
            if !(t >= -1e-12 && t <= self.counts[axis] as f64 + 1e-12) {
                return None;
            }
            idx[axis] = (t.floor().max(0.0) as usize).min(self.counts[axis] - 1);
        }
        Some(idx[0] + self.counts[0] * idx[1])
    }

    /// Which local face of K1 (and K2) an edge is, oriented so that
    /// `[w] = w|K2 - w|K1` and `{w} = (w|K1 + w|K2) / 2`.
    pub fn edge_trace(&self, edge: &Edge) -> Result<EdgeTrace> {
        match self.edges.get(edge.id) {
            Some(e) if e == edge => {}
            _ => return Err(PnpError::ForeignEdge(edge.id)),
        }
        let minus = TraceSide {
            cell: edge.minus.cell,
            face: edge.minus.face,
            orientation: edge.minus.face.side.sign() * edge.normal_sign,
        };
        let plus = edge.plus.map(|p| TraceSide {
            cell: p.cell,
            face: p.face,
            orientation: p.face.side.sign() * edge.normal_sign,
        });
        let boundary = match edge.kind {
            EdgeKind::Boundary(b) => Some(b),
            EdgeKind::Interior => None,
        };
        Ok(EdgeTrace { minus, plus, boundary })
    }

    /// Non-periodic boundary faces of the domain.
    pub fn boundary_sides(&self) -> Vec<BoundarySide> {
        let mut out = Vec::new();
        for axis in 0..self.dim() {
            if !self.domain.is_periodic(axis) {
                out.push(BoundarySide { axis, side: Side::Lower });
                out.push(BoundarySide { axis, side: Side::Upper });
            }
        }
        out
    }
}

fn side_slot(side: Side) -> usize {
    match side {
        Side::Lower => 0,
        Side::Upper => 1,
    }
}

/// Space-time scalar function `g(t, x)`.
pub type ScalarFn = Arc<dyn Fn(f64, &Point) -> f64 + Send + Sync>;

/// Boundary condition of one variable on one boundary face.
#[derive(Clone)]
pub enum BoundaryCondition {
    /// Homogeneous natural condition (zero normal flux).
    ZeroFlux,
    Dirichlet(ScalarFn),
}

impl fmt::Debug for BoundaryCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundaryCondition::ZeroFlux => write!(f, "ZeroFlux"),
            BoundaryCondition::Dirichlet(_) => write!(f, "Dirichlet(..)"),
        }
    }
}

/// Boundary conditions of one variable on every non-periodic boundary face.
/// Faces without an entry default to zero flux.
#[derive(Clone, Debug, Default)]
pub struct BoundaryConditions {
    faces: Vec<(BoundarySide, BoundaryCondition)>,
}

impl BoundaryConditions {
    pub fn zero_flux() -> Self {
        Self::default()
    }

    pub fn with(mut self, side: BoundarySide, bc: BoundaryCondition) -> Self {
        self.faces.retain(|(s, _)| *s != side);
        self.faces.push((side, bc));
        self
    }

    pub fn dirichlet(self, side: BoundarySide, g: ScalarFn) -> Self {
        self.with(side, BoundaryCondition::Dirichlet(g))
    }

    pub fn get(&self, side: BoundarySide) -> &BoundaryCondition {
        self.faces
            .iter()
            .find(|(s, _)| *s == side)
            .map(|(_, bc)| bc)
            .unwrap_or(&BoundaryCondition::ZeroFlux)
    }

    pub fn has_dirichlet(&self) -> bool {
        self.faces.iter().any(|(_, bc)| matches!(bc, BoundaryCondition::Dirichlet(_)))
    }

    /// Checks that every tagged face exists (is not on a periodic axis).
    pub fn validate(&self, mesh: &Mesh) -> Result<()> {
        let sides = mesh.boundary_sides();
        for (s, _) in &self.faces {
            if !sides.contains(s) {
                return Err(PnpError::InvalidArgument(format!(
                    "boundary condition on {s}, which is not a boundary face of this mesh"
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn periodic_interval_has_no_boundary() {
        let m = Mesh::new(Domain::interval(0.0, 1.0, true).unwrap(), &[4]).unwrap();
        assert_eq!(m.n_cells(), 4);
        assert_eq!(m.interior_edges().count(), 4);
        assert_eq!(m.boundary_edges().count(), 0);
    }

    #[test]
    fn square_two_by_two_counts() {
        let d = Domain::rectangle([0.0, 1.0], [0.0, 1.0], [false, false]).unwrap();
        let m = Mesh::new(d, &[2, 2]).unwrap();
        assert_eq!(m.n_cells(), 4);
        assert_eq!(m.interior_edges().count(), 4);
        assert_eq!(m.boundary_edges().count(), 8);
    }

    #[test]
    fn measures_partition_domain() {
        let pi = std::f64::consts::PI;
        let d = Domain::rectangle([0.0, pi], [0.0, pi], [false, false]).unwrap();
        let m = Mesh::new(d, &[5, 5]).unwrap();
        let total: f64 = m.cells().iter().map(|c| c.measure).sum();
        assert!((total - pi * pi).abs() / (pi * pi) < 1e-14);
        assert!((m.h() - (2.0f64).sqrt() * pi / 5.0).abs() < 1e-14);
    }

    #[test]
    fn wrap_edge_orientation() {
        let m = Mesh::new(Domain::interval(0.0, 1.0, true).unwrap(), &[4]).unwrap();
        let wrap = m.edges().iter().find(|e| e.minus.cell == 3 && e.plus.unwrap().cell == 0).unwrap();
        let tr = m.edge_trace(wrap).unwrap();
        assert_eq!(tr.minus.face, LocalFace { axis: 0, side: Side::Upper });
        assert_eq!(tr.plus.unwrap().face, LocalFace { axis: 0, side: Side::Lower });
        assert_eq!(tr.minus.orientation, 1.0);
        assert_eq!(tr.plus.unwrap().orientation, -1.0);
    }

    #[test]
    fn interior_vertical_edge_in_2d() {
        let d = Domain::rectangle([0.0, 1.0], [0.0, 1.0], [false, false]).unwrap();
        let m = Mesh::new(d, &[2, 2]).unwrap();
        let e = m.interior_edges().find(|e| e.axis == 0).unwrap();
        let tr = m.edge_trace(e).unwrap();
        assert_eq!(e.normal(), [1.0, 0.0]);
        assert_eq!(tr.minus.face.side, Side::Upper);
        assert_eq!(tr.plus.unwrap().face.side, Side::Lower);
        let (k1, k2) = (m.cell(tr.minus.cell), m.cell(tr.plus.unwrap().cell));
        assert!(k1.lower[0] < k2.lower[0]);
    }

    #[test]
    fn boundary_edge_is_single_sided() {
        let m = Mesh::new(Domain::interval(0.0, 1.0, false).unwrap(), &[3]).unwrap();
        let e = m.boundary_edges().next().unwrap();
        let tr = m.edge_trace(e).unwrap();
        assert!(tr.plus.is_none());
        assert_eq!(tr.boundary, Some(BoundarySide { axis: 0, side: Side::Lower }));
        assert_eq!(e.normal(), [-1.0, 0.0]);
        assert_eq!(tr.minus.orientation, 1.0);
    }

    #[test]
    fn foreign_edge_rejected() {
        let a = Mesh::new(Domain::interval(0.0, 1.0, false).unwrap(), &[3]).unwrap();
        let b = Mesh::new(Domain::interval(0.0, 2.0, false).unwrap(), &[3]).unwrap();
        let e = b.edges()[1].clone();
        assert!(matches!(a.edge_trace(&e), Err(PnpError::ForeignEdge(_))));
    }

    #[test]
    fn every_cell_face_is_covered_once() {
        let d = Domain::rectangle([0.0, 1.0], [0.0, 2.0], [true, false]).unwrap();
        let m = Mesh::new(d, &[3, 4]).unwrap();
        let mut hits = vec![0usize; m.n_cells() * 4];
        for e in m.edges() {
            hits[e.minus.cell * 4 + 2 * e.axis + side_slot(e.minus.face.side)] += 1;
            if let Some(p) = e.plus {
                hits[p.cell * 4 + 2 * e.axis + side_slot(p.face.side)] += 1;
                assert_ne!(p.cell, e.minus.cell);
            }
        }
        assert!(hits.iter().all(|&h| h == 1));
        // periodic x contributes no boundary edges
        assert!(m.boundary_edges().all(|e| e.axis == 1));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Domain::interval(1.0, 1.0, false).is_err());
        assert!(Domain::new(&[0.0], &[1.0, 2.0], &[false]).is_err());
        let d = Domain::interval(0.0, 1.0, false).unwrap();
        assert!(Mesh::new(d.clone(), &[0]).is_err());
        assert!(Mesh::new(d, &[2, 2]).is_err());
    }
}
