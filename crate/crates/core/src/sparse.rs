//! Compressed sparse row operators with a fixed pattern, and a direct solver
//! that reuses the symbolic factorization while the pattern stays the same.

use std::collections::BTreeSet;
use std::io::Write;
use std::sync::Arc;

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};

use crate::error::{PnpError, Result};

/// Row pointers and sorted column indices. Explicitly stored zeros are kept
/// so operators built from different coefficients can share one pattern.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparsityPattern {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
}

impl SparsityPattern {
    pub fn from_rows(n_cols: usize, rows: &[BTreeSet<usize>]) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for r in rows {
            col_idx.extend(r.iter().copied());
            row_ptr.push(col_idx.len());
        }
        Self { n_rows: rows.len(), n_cols, row_ptr, col_idx }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    /// Storage position of entry `(i, j)`, if it is in the pattern.
    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let start = self.row_ptr[i];
        self.row(i).binary_search(&j).ok().map(|p| start + p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator {
    pattern: Arc<SparsityPattern>,
    values: Vec<f64>,
}

impl SparseOperator {
    pub fn zeros(pattern: Arc<SparsityPattern>) -> Self {
        let values = vec![0.0; pattern.nnz()];
        Self { pattern, values }
    }

    /// Builds an operator from `(row, col, value)` triplets; duplicates are
    /// summed and every listed position is kept, even when it sums to zero.
    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut rows = vec![BTreeSet::new(); n_rows];
        for &(i, j, _) in triplets {
            if i >= n_rows || j >= n_cols {
                return Err(PnpError::InvalidArgument(format!("entry ({i}, {j}) outside {n_rows}x{n_cols}")));
            }
            rows[i].insert(j);
        }
        let mut op = Self::zeros(Arc::new(SparsityPattern::from_rows(n_cols, &rows)));
        for &(i, j, v) in triplets {
            op.add(i, j, v);
        }
        Ok(op)
    }

    pub fn pattern(&self) -> &Arc<SparsityPattern> {
        &self.pattern
    }

    pub fn n_rows(&self) -> usize {
        self.pattern.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.pattern.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Adds `v` to entry `(i, j)`. Panics if the entry is not in the pattern.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let p = self
            .pattern
            .position(i, j)
            .unwrap_or_else(|| panic!("entry ({i}, {j}) not in sparsity pattern"));
        self.values[p] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.pattern.position(i, j).map_or(0.0, |p| self.values[p])
    }

    /// Entries of row `i` as `(col, value)` pairs.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let s = self.pattern.row_ptr[i];
        let e = self.pattern.row_ptr[i + 1];
        self.pattern.col_idx[s..e].iter().copied().zip(self.values[s..e].iter().copied())
    }

    pub fn set_zero(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
    }

    /// Replaces row `i` by the identity row (Dirichlet elimination). The
    /// diagonal must be in the pattern.
    pub fn set_identity_row(&mut self, i: usize) {
        let s = self.pattern.row_ptr[i];
        let e = self.pattern.row_ptr[i + 1];
        self.values[s..e].iter_mut().for_each(|v| *v = 0.0);
        self.add(i, i, 1.0);
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_rows()];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n_cols());
        assert_eq!(y.len(), self.n_rows());
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = self.row(i).map(|(j, v)| v * x[j]).sum();
        }
    }

    /// `y^T A x`.
    pub fn bilinear(&self, y: &[f64], x: &[f64]) -> f64 {
        (0..self.n_rows()).map(|i| y[i] * self.row(i).map(|(j, v)| v * x[j]).sum::<f64>()).sum()
    }

    pub fn transpose(&self) -> Self {
        let mut triplets = Vec::with_capacity(self.nnz());
        for i in 0..self.n_rows() {
            triplets.extend(self.row(i).map(|(j, v)| (j, i, v)));
        }
        Self::from_triplets(self.n_cols(), self.n_rows(), &triplets).expect("indices in range")
    }

    /// Largest `|A_ij - A_ji|` relative to the largest entry.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let mut worst = 0.0f64;
        for i in 0..self.n_rows() {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst / scale
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n_cols()]; self.n_rows()];
        for (i, row) in d.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] += v;
            }
        }
        d
    }

    /// Writes the stored entries in coordinate format, one `row col value`
    /// line per entry, preceded by a `rows cols nnz` header.
    pub fn write_coo(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "{} {} {}", self.n_rows(), self.n_cols(), self.nnz())?;
        for i in 0..self.n_rows() {
            for (j, v) in self.row(i) {
                writeln!(w, "{i} {j} {v:e}")?;
            }
        }
        Ok(())
    }
}

/// Sparse LU with partial pivoting. The symbolic analysis is cached and
/// reused for every operator sharing the same pattern.
#[derive(Default)]
pub struct DirectSolver {
    symbolic: Option<(Arc<SparsityPattern>, Analysis)>,
}

enum Analysis {
    Sparse(SymbolicLu<usize>),
    Banded { kl: usize, ku: usize },
    Bordered(Box<BorderAnalysis>),
}

/// A matrix `[B u; v^T d]` whose last row and column are dense (a Lagrange
/// multiplier). `B` may be singular, so the block `B + gamma e_p e_p^T` is
/// factored instead and the two scalars `lambda = x_n`, `mu = x_p` are
/// recovered from a 2x2 system.
struct BorderAnalysis {
    inner: DirectSolver,
    block: Arc<SparsityPattern>,
    shift: usize,
}

impl std::fmt::Debug for DirectSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DirectSolver").field("cached", &self.symbolic.is_some()).finish()
    }
}

/// Matrices whose band (after the natural ordering) is at most this wide on
/// either side of the diagonal are factored densely within the band.
const MAX_BANDED_HALF_WIDTH: usize = 48;

/// A numeric factorization, ready for repeated solves.
pub struct Factorization {
    kind: FactorKind,
    n: usize,
}

enum FactorKind {
    /// LU of the transpose: the CSR arrays of A are read as CSC of A^T.
    Sparse(Lu<usize, f64>),
    Banded(BandedLu),
    Bordered(Box<BorderedLu>),
}

struct BorderedLu {
    block: Factorization,
    v: Vec<f64>,
    shift: usize,
    /// `B~^{-1} u` and `gamma B~^{-1} e_p`.
    zu: Vec<f64>,
    ze: Vec<f64>,
    /// Inverse of the 2x2 system for `(lambda, mu)`.
    inv: [[f64; 2]; 2],
}

impl BorderedLu {
    fn factor(a: &SparseOperator, analysis: &mut BorderAnalysis) -> Result<Self> {
        let m = a.n_rows() - 1;
        let p = analysis.shift;
        let mut b = SparseOperator::zeros(Arc::clone(&analysis.block));
        let mut u = vec![0.0; m];
        let mut v = vec![0.0; m];
        for i in 0..m {
            for (j, x) in a.row(i) {
                if j == m {
                    u[i] = x;
                } else {
                    b.add(i, j, x);
                }
            }
        }
        let mut d = 0.0;
        for (j, x) in a.row(m) {
            if j == m {
                d = x;
            } else {
                v[j] = x;
            }
        }
        let gamma = b.row(p).fold(0.0f64, |g, (_, x)| g.max(x.abs()));
        let gamma = if gamma > 0.0 { gamma } else { 1.0 };
        b.add(p, p, gamma);
        let block = analysis.inner.factor(&b)?;
        let zu = block.solve(&u)?;
        let mut e = vec![0.0; m];
        e[p] = gamma;
        let ze = block.solve(&e)?;
        let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
        // [d - v.zu, v.ze; -zu_p, ze_p - 1] [lambda; mu] = [r2 - v.x0; -x0_p]
        let m2 = [[d - dot(&v, &zu), dot(&v, &ze)], [-zu[p], ze[p] - 1.0]];
        let det = m2[0][0] * m2[1][1] - m2[0][1] * m2[1][0];
        let scale = m2.iter().flatten().fold(0.0f64, |s, x| s.max(x.abs()));
        if !(det.abs() > 1e-14 * scale * scale) || !det.is_finite() {
            return Err(PnpError::Singular("bordered system is singular".into()));
        }
        let inv = [[m2[1][1] / det, -m2[0][1] / det], [-m2[1][0] / det, m2[0][0] / det]];
        Ok(Self { block, v, shift: p, zu, ze, inv })
    }

    fn solve_in_place(&self, x: &mut [f64]) -> Result<()> {
        let m = self.v.len();
        let x0 = self.block.solve(&x[..m])?;
        let r1 = x[m] - self.v.iter().zip(&x0).map(|(a, b)| a * b).sum::<f64>();
        let r2 = -x0[self.shift];
        let lambda = self.inv[0][0] * r1 + self.inv[0][1] * r2;
        let mu = self.inv[1][0] * r1 + self.inv[1][1] * r2;
        for i in 0..m {
            x[i] = x0[i] - lambda * self.zu[i] + mu * self.ze[i];
        }
        x[m] = lambda;
        Ok(())
    }
}

/// Detects a dense last row and column and returns the leading block's
/// pattern (with the shift diagonal ensured) and the shift index.
fn dense_border(p: &SparsityPattern) -> Option<(SparsityPattern, usize)> {
    let n = p.n_rows();
    if n < 16 {
        return None;
    }
    let m = n - 1;
    let widest = (0..m).map(|i| p.row(i).len()).max().unwrap_or(0);
    let last = p.row(m).len();
    let col = (0..m).filter(|&i| p.row(i).last() == Some(&m)).count();
    if last <= 8 || last <= 2 * widest || col <= 8 || col <= 2 * widest {
        return None;
    }
    let shift = p.row(m).iter().copied().find(|&i| i < m && p.row(i).last() == Some(&m))?;
    let rows: Vec<BTreeSet<usize>> = (0..m)
        .map(|i| {
            let mut r: BTreeSet<usize> = p.row(i).iter().copied().filter(|&j| j < m).collect();
            if i == shift {
                r.insert(i);
            }
            r
        })
        .collect();
    Some((SparsityPattern::from_rows(m, &rows), shift))
}

/// Band LU with partial pivoting. Row `i` stores columns
/// `i - kl ..= i + ku + kl`; the extra `kl` columns hold pivoting fill.
struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    ab: Vec<f64>,
    pivots: Vec<usize>,
}

impl BandedLu {
    fn width(&self) -> usize {
        2 * self.kl + self.ku + 1
    }

    fn at(&self, i: usize, j: usize) -> usize {
        i * self.width() + (j + self.kl - i)
    }

    fn factor(a: &SparseOperator, kl: usize, ku: usize) -> Result<Self> {
        let n = a.n_rows();
        let mut lu = BandedLu { n, kl, ku, ab: Vec::new(), pivots: vec![0; n] };
        lu.ab = vec![0.0; n * lu.width()];
        for i in 0..n {
            for (j, v) in a.row(i) {
                let at = lu.at(i, j);
                lu.ab[at] = v;
            }
        }
        let reach = kl + ku;
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = lu.ab[lu.at(k, k)].abs();
            for i in k + 1..=last {
                let v = lu.ab[lu.at(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if !(best > 0.0) || !best.is_finite() {
                return Err(PnpError::Singular("zero pivot".into()));
            }
            lu.pivots[k] = p;
            let jmax = (k + reach).min(n - 1);
            if p != k {
                for j in k..=jmax {
                    let (x, y) = (lu.at(k, j), lu.at(p, j));
                    lu.ab.swap(x, y);
                }
            }
            let pivot = lu.ab[lu.at(k, k)];
            for i in k + 1..=last {
                let ik = lu.at(i, k);
                let l = lu.ab[ik] / pivot;
                lu.ab[ik] = l;
                if l == 0.0 {
                    continue;
                }
                let (ri, rk) = (lu.at(i, k + 1), lu.at(k, k + 1));
                for off in 0..jmax - k {
                    lu.ab[ri + off] -= l * lu.ab[rk + off];
                }
            }
        }
        Ok(lu)
    }

    fn solve_in_place(&self, x: &mut [f64]) {
        let n = self.n;
        for k in 0..n {
            x.swap(k, self.pivots[k]);
            let xk = x[k];
            if xk != 0.0 {
                for i in k + 1..=(k + self.kl).min(n - 1) {
                    x[i] -= self.ab[self.at(i, k)] * xk;
                }
            }
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..=(i + self.kl + self.ku).min(n - 1) {
                s -= self.ab[self.at(i, j)] * x[j];
            }
            x[i] = s / self.ab[self.at(i, i)];
        }
    }
}

/// Lower and upper half-bandwidths of a pattern.
fn bandwidths(p: &SparsityPattern) -> (usize, usize) {
    let (mut kl, mut ku) = (0, 0);
    for i in 0..p.n_rows() {
        for &j in p.row(i) {
            if j < i {
                kl = kl.max(i - j);
            } else {
                ku = ku.max(j - i);
            }
        }
    }
    (kl, ku)
}

impl DirectSolver {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn factor(&mut self, a: &SparseOperator) -> Result<Factorization> {
        let n = a.n_rows();
        if n != a.n_cols() {
            return Err(PnpError::InvalidArgument("matrix is not square".into()));
        }
        let p = &a.pattern;
        let reuse = matches!(&self.symbolic, Some((cached, _)) if Arc::ptr_eq(cached, p) || **cached == **p);
        if !reuse {
            let (kl, ku) = bandwidths(p);
            let analysis = if let Some((block, shift)) = dense_border(p) {
                Analysis::Bordered(Box::new(BorderAnalysis { inner: DirectSolver::new(), block: Arc::new(block), shift }))
            } else if kl <= MAX_BANDED_HALF_WIDTH && ku <= MAX_BANDED_HALF_WIDTH {
                Analysis::Banded { kl, ku }
            } else {
                let sym = SymbolicSparseColMatRef::new_checked(n, n, &p.row_ptr, None, &p.col_idx);
                Analysis::Sparse(SymbolicLu::try_new(sym).map_err(|e| PnpError::Singular(format!("{e:?}")))?)
            };
            self.symbolic = Some((Arc::clone(p), analysis));
        }
        let kind = match &mut self.symbolic.as_mut().expect("set above").1 {
            Analysis::Banded { kl, ku } => FactorKind::Banded(BandedLu::factor(a, *kl, *ku)?),
            Analysis::Bordered(b) => FactorKind::Bordered(Box::new(BorderedLu::factor(a, b)?)),
            Analysis::Sparse(symbolic) => {
                let sym = SymbolicSparseColMatRef::new_checked(n, n, &p.row_ptr, None, &p.col_idx);
                let mat = SparseColMatRef::new(sym, &a.values);
                // faer panics on an exactly zero pivot instead of returning an error.
                let symbolic = symbolic.clone();
                let lu =
                    std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| Lu::try_new_with_symbolic(symbolic, mat)))
                        .map_err(|_| PnpError::Singular("zero pivot".into()))?
                        .map_err(|e| PnpError::Singular(format!("{e:?}")))?;
                FactorKind::Sparse(lu)
            }
        };
        Ok(Factorization { kind, n })
    }

    pub fn solve(&mut self, a: &SparseOperator, b: &[f64]) -> Result<Vec<f64>> {
        self.factor(a)?.solve(b)
    }
}

impl Factorization {
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.n {
            return Err(PnpError::InvalidArgument("right-hand side length mismatch".into()));
        }
        let mut x = b.to_vec();
        match &self.kind {
            FactorKind::Sparse(lu) => lu.solve_transpose_in_place(faer::ColMut::from_slice_mut(&mut x).as_mat_mut()),
            FactorKind::Banded(lu) => lu.solve_in_place(&mut x),
            FactorKind::Bordered(lu) => lu.solve_in_place(&mut x)?,
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(PnpError::Singular("factorization produced non-finite values".into()));
        }
        Ok(x)
    }
}
