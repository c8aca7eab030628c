//! Gauss-Lobatto / Gauss-Legendre rules and tensor-product nodal bases.

use crate::error::{PnpError, Result};

/// A quadrature rule on the reference interval [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct QuadRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// Highest polynomial degree integrated exactly.
    pub degree: usize,
}

impl QuadRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// Legendre polynomial P_n and its derivative at x.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p0, mut p1) = (1.0, x);
    for j in 2..=n {
        let jf = j as f64;
        let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
        p0 = p1;
        p1 = p2;
    }
    // P_n' from (1 - x^2) P_n' = n (P_{n-1} - x P_n); callers never pass |x| = 1.
    let dp = n as f64 * (p0 - x * p1) / (1.0 - x * x);
    (p1, dp)
}

const NEWTON_TOL: f64 = 1e-15;

/// n-point Gauss-Lobatto rule (endpoints included), exact to degree 2n - 3.
pub fn gauss_lobatto_rule(n: usize) -> Result<QuadRule> {
    if n < 2 {
        return Err(PnpError::InvalidArgument(format!("Gauss-Lobatto rule needs n >= 2, got {n}")));
    }
    let m = n - 1; // interior nodes are the roots of P_m'
    let mut nodes = vec![0.0; n];
    nodes[0] = -1.0;
    nodes[n - 1] = 1.0;
    for i in 1..n - 1 {
        // Chebyshev-Gauss-Lobatto seed, ascending
        let mut x = -(std::f64::consts::PI * i as f64 / m as f64).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(m, x);
            // (1 - x^2) P'' = 2x P' - m(m+1) P
            let d2p = (2.0 * x * dp - (m * (m + 1)) as f64 * p) / (1.0 - x * x);
            let step = dp / d2p;
            x -= step;
            if step.abs() < NEWTON_TOL {
                break;
            }
        }
        nodes[i] = x;
    }
    symmetrize(&mut nodes);
    let weights = nodes
        .iter()
        .map(|&x| {
            let p = if x.abs() == 1.0 { 1.0 } else { legendre(m, x).0 };
            2.0 / ((m * n) as f64 * p * p)
        })
        .collect();
    Ok(QuadRule { nodes, weights, degree: 2 * n - 3 })
}

/// n-point Gauss-Legendre rule, exact to degree 2n - 1.
pub fn gauss_rule(n: usize) -> Result<QuadRule> {
    if n < 1 {
        return Err(PnpError::InvalidArgument("Gauss rule needs n >= 1".into()));
    }
    let mut nodes = vec![0.0; n];
    for (i, node) in nodes.iter_mut().enumerate() {
        let mut x = -(std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(n, x);
            let step = p / dp;
            x -= step;
            if step.abs() < NEWTON_TOL {
                break;
            }
        }
        *node = x;
    }
    symmetrize(&mut nodes);
    let weights = nodes
        .iter()
        .map(|&x| {
            let dp = legendre(n, x).1;
            2.0 / ((1.0 - x * x) * dp * dp)
        })
        .collect();
    Ok(QuadRule { nodes, weights, degree: 2 * n - 1 })
}

fn symmetrize(nodes: &mut [f64]) {
    let n = nodes.len();
    for i in 0..n / 2 {
        let a = 0.5 * (nodes[n - 1 - i] - nodes[i]);
        nodes[i] = -a;
        nodes[n - 1 - i] = a;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
}

/// Lagrange basis of degree k on the k+1 Gauss-Lobatto points.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalBasis {
    k: usize,
    rule: QuadRule,
    denominators: Vec<f64>,
    /// `diff[i][j] = l_j'(x_i)`
    diff: Vec<Vec<f64>>,
    /// `diff2[i][j] = l_j''(x_i)`
    diff2: Vec<Vec<f64>>,
}

impl NodalBasis {
    pub fn new(k: usize) -> Result<Self> {
        if k < 1 {
            return Err(PnpError::InvalidArgument("polynomial order k must be >= 1".into()));
        }
        let rule = gauss_lobatto_rule(k + 1)?;
        let x = &rule.nodes;
        let denominators = (0..=k)
            .map(|j| (0..=k).filter(|&m| m != j).map(|m| x[j] - x[m]).product())
            .collect();
        let mut basis = Self { k, rule, denominators, diff: vec![], diff2: vec![] };
        let mut diff = vec![vec![0.0; k + 1]; k + 1];
        let mut diff2 = vec![vec![0.0; k + 1]; k + 1];
        for i in 0..=k {
            let xi = basis.rule.nodes[i];
            for j in 0..=k {
                let (_, d1, d2) = basis.eval_one(j, xi);
                diff[i][j] = d1;
                diff2[i][j] = d2;
            }
        }
        basis.diff = diff;
        basis.diff2 = diff2;
        Ok(basis)
    }

    pub fn order(&self) -> usize {
        self.k
    }

    pub fn n_nodes(&self) -> usize {
        self.k + 1
    }

    pub fn nodes(&self) -> &[f64] {
        &self.rule.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.rule.weights
    }

    pub fn rule(&self) -> &QuadRule {
        &self.rule
    }

    /// Differentiation matrix `D[i][j] = l_j'(g_i)`.
    pub fn diff_matrix(&self) -> &[Vec<f64>] {
        &self.diff
    }

    pub fn diff2_matrix(&self) -> &[Vec<f64>] {
        &self.diff2
    }

    /// Value, first and second derivative of `l_j` at `x`.
    pub fn eval_one(&self, j: usize, x: f64) -> (f64, f64, f64) {
        let nodes = &self.rule.nodes;
        let (mut v, mut d1, mut d2) = (1.0, 0.0, 0.0);
        for (m, &xm) in nodes.iter().enumerate() {
            if m == j {
                continue;
            }
            let a = x - xm;
            d2 = d2 * a + 2.0 * d1;
            d1 = d1 * a + v;
            v *= a;
        }
        let den = self.denominators[j];
        (v / den, d1 / den, d2 / den)
    }

    /// Values, first and second derivatives of every basis function at `x`.
    pub fn eval_all(&self, x: f64) -> [Vec<f64>; 3] {
        let n = self.k + 1;
        let mut out = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        for j in 0..n {
            let (v, d1, d2) = self.eval_one(j, x);
            out[0][j] = v;
            out[1][j] = d1;
            out[2][j] = d2;
        }
        out
    }
}

/// Tabulated tensor-product basis at one reference point.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisTabulation {
    pub values: Vec<f64>,
    /// Reference-coordinate gradients.
    pub gradients: Vec<[f64; 2]>,
    /// Pure second derivatives `(d^2/dxi^2, d^2/deta^2)`.
    pub second: Vec<[f64; 2]>,
}

/// Tensor-product Q^k basis on [-1,1]^dim; local index `ix + (k+1) * iy`.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorBasis {
    dim: usize,
    basis: NodalBasis,
}

impl TensorBasis {
    pub fn new(dim: usize, k: usize) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(PnpError::InvalidArgument(format!("dimension {dim} not supported")));
        }
        Ok(Self { dim, basis: NodalBasis::new(k)? })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> usize {
        self.basis.k
    }

    pub fn one_d(&self) -> &NodalBasis {
        &self.basis
    }

    pub fn n_local(&self) -> usize {
        (self.basis.k + 1).pow(self.dim as u32)
    }

    /// Per-axis node indices of a local basis function.
    pub fn split(&self, local: usize) -> [usize; 2] {
        let n = self.basis.k + 1;
        if self.dim == 1 {
            [local, 0]
        } else {
            [local % n, local / n]
        }
    }

    pub fn join(&self, idx: [usize; 2]) -> usize {
        idx[0] + (self.basis.k + 1) * idx[1]
    }

    /// Reference coordinates of a local node.
    pub fn node(&self, local: usize) -> [f64; 2] {
        let idx = self.split(local);
        let g = self.basis.nodes();
        if self.dim == 1 {
            [g[idx[0]], 0.0]
        } else {
            [g[idx[0]], g[idx[1]]]
        }
    }

    /// Reference weight of a local node (product of 1D Gauss-Lobatto weights).
    pub fn node_weight(&self, local: usize) -> f64 {
        let idx = self.split(local);
        let w = self.basis.weights();
        (0..self.dim).map(|a| w[idx[a]]).product()
    }

    /// Values, gradients and pure second derivatives at a reference point.
    pub fn eval(&self, xi: &[f64]) -> Result<BasisTabulation> {
        if xi.len() < self.dim || xi[..self.dim].iter().any(|v| !(v.abs() <= 1.0 + 1e-12)) {
            return Err(PnpError::OutsideReferenceCell { point: xi.to_vec() });
        }
        Ok(self.eval_unchecked(xi))
    }

    pub(crate) fn eval_unchecked(&self, xi: &[f64]) -> BasisTabulation {
        let n = self.basis.k + 1;
        let nl = self.n_local();
        let ax = self.basis.eval_all(xi[0]);
        let mut tab = BasisTabulation {
            values: vec![0.0; nl],
            gradients: vec![[0.0; 2]; nl],
            second: vec![[0.0; 2]; nl],
        };
        if self.dim == 1 {
            for j in 0..n {
                tab.values[j] = ax[0][j];
                tab.gradients[j] = [ax[1][j], 0.0];
                tab.second[j] = [ax[2][j], 0.0];
            }
        } else {
            let ay = self.basis.eval_all(xi[1]);
            for jy in 0..n {
                for jx in 0..n {
                    let l = jx + n * jy;
                    tab.values[l] = ax[0][jx] * ay[0][jy];
                    tab.gradients[l] = [ax[1][jx] * ay[0][jy], ax[0][jx] * ay[1][jy]];
                    tab.second[l] = [ax[2][jx] * ay[0][jy], ax[0][jx] * ay[2][jy]];
                }
            }
        }
        tab
    }
}
