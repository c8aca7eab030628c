//! Property tests against independent oracles: monomial moments, a
//! monomial-basis Rayleigh quotient for Gamma, Gauss-rule H^1 seminorms and
//! direct evaluation of the limiter and fraction-to-boundary formulas.

use std::sync::Arc;

use proptest::prelude::*;

use pnp_core::basis::{gauss_lobatto_rule, gauss_rule};
use pnp_core::forms::{check_stability, gamma_of_beta1, FormAssembler, Method, Mobility, MobilityBounds};
use pnp_core::mesh::{Domain, Mesh};
use pnp_core::space::{interpolate, Continuity, Field, Space};
use pnp_core::time::{apply_limiter, cell_minimum, fraction_to_boundary, max_positive_step};

fn monomial_integral(d: usize) -> f64 {
    if d % 2 == 1 {
        0.0
    } else {
        2.0 / (d + 1) as f64
    }
}

/// `2 b^T M^{-1} b` in the monomial basis of P_{k-1}, by Gaussian elimination.
fn gamma_monomial(k: usize, beta1: f64) -> f64 {
    let mut m: Vec<Vec<f64>> = (0..k).map(|i| (0..k).map(|j| monomial_integral(i + j)).collect()).collect();
    // v = xi^i: v(1) = 1, v'(1) = i
    let b: Vec<f64> = (0..k).map(|i| 1.0 - 2.0 * beta1 * i as f64).collect();
    let mut x = b.clone();
    for col in 0..k {
        let piv = (col..k).max_by(|&a, &c| m[a][col].abs().total_cmp(&m[c][col].abs())).unwrap();
        m.swap(col, piv);
        x.swap(col, piv);
        for row in col + 1..k {
            let f = m[row][col] / m[col][col];
            for j in col..k {
                m[row][j] -= f * m[col][j];
            }
            x[row] -= f * x[col];
        }
    }
    for row in (0..k).rev() {
        let s: f64 = (row + 1..k).map(|j| m[row][j] * x[j]).sum();
        x[row] = (x[row] - s) / m[row][row];
    }
    2.0 * b.iter().zip(&x).map(|(a, c)| a * c).sum::<f64>()
}

fn space(dim: usize, k: usize, n: usize, continuity: Continuity, periodic: bool) -> Arc<Space> {
    let domain = if dim == 1 {
        Domain::interval(0.0, 1.0, periodic).unwrap()
    } else {
        Domain::rectangle([0.0, 1.0], [0.0, 0.5], [periodic, false]).unwrap()
    };
    Space::new(Mesh::new(domain, &vec![n; dim]).unwrap(), k, continuity).unwrap()
}

fn field(space: &Arc<Space>, values: &[f64]) -> Field {
    let n = space.n_dofs();
    Field::new(space, (0..n).map(|i| values[i % values.len()]).collect()).unwrap()
}

#[test]
fn gamma_worked_values() {
    assert_eq!(gamma_of_beta1(1, 0.0), 1.0);
    assert_eq!(gamma_of_beta1(1, 0.25), 1.0);
    assert!((gamma_of_beta1(2, 0.0) - 4.0).abs() < 1e-14);
    assert!((gamma_of_beta1(2, 1.0 / 12.0) - 37.0 / 12.0).abs() < 1e-14);
    // 1 + 3 (1 - 1/12)^2 + 5 (1 - 1/4)^2
    assert!((gamma_of_beta1(3, 1.0 / 24.0) - (1.0 + 3.0 * (11.0f64 / 12.0).powi(2) + 5.0 * 0.5625)).abs() < 1e-13);
    let ones = MobilityBounds::new(1.0, 1.0).unwrap();
    assert!(check_stability(4.0, 0.25, 1, ones));
    assert!(check_stability(4.0, 1.0 / 12.0, 2, ones));
    assert!(!check_stability(1.0, 0.0, 2, ones));
}

#[test]
fn quadrature_worked_rules() {
    let gl = gauss_lobatto_rule(3).unwrap();
    for (x, e) in gl.nodes.iter().zip([-1.0, 0.0, 1.0]) {
        assert!((x - e).abs() < 1e-15);
    }
    for (w, e) in gl.weights.iter().zip([1.0 / 3.0, 4.0 / 3.0, 1.0 / 3.0]) {
        assert!((w - e).abs() < 1e-15);
    }
    let gl4 = gauss_lobatto_rule(4).unwrap();
    assert!((gl4.nodes[2] - 1.0 / 5.0f64.sqrt()).abs() < 1e-15);
    assert!((gl4.weights[0] - 1.0 / 6.0).abs() < 1e-15);
    let g3 = gauss_rule(3).unwrap();
    assert!((g3.nodes[2] - 0.6f64.sqrt()).abs() < 1e-15);
    assert!((g3.weights[1] - 8.0 / 9.0).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gamma_matches_monomial_quotient(k in 1usize..=5, beta1 in 0.0f64..0.5) {
        let closed = gamma_of_beta1(k, beta1);
        let oracle = gamma_monomial(k, beta1);
        prop_assert!((closed - oracle).abs() <= 1e-9 * oracle.max(1.0), "{closed} vs {oracle}");
    }

    #[test]
    fn quadrature_moments(n in 2usize..=8, coeffs in prop::collection::vec(-1.0f64..1.0, 16)) {
        let gl = gauss_lobatto_rule(n).unwrap();
        let g = gauss_rule(n).unwrap();
        for (rule, degree) in [(&gl, 2 * n - 3), (&g, 2 * n - 1)] {
            let p = |x: f64| (0..=degree).map(|d| coeffs[d] * x.powi(d as i32)).sum::<f64>();
            let exact: f64 = (0..=degree).map(|d| coeffs[d] * monomial_integral(d)).sum();
            prop_assert!((rule.integrate(p) - exact).abs() < 1e-13);
        }
    }

    #[test]
    fn forms_annihilate_constants(
        dim in 1usize..=2,
        k in 1usize..=3,
        ddg in any::<bool>(),
        psi in prop::collection::vec(0.5f64..2.0, 7),
    ) {
        let method = if ddg { Method::Ddg { beta0: 4.0, beta1: 0.0 } } else { Method::Fem };
        let s = space(dim, k, 3, method.continuity(), true);
        let asm = FormAssembler::new(&s, method).unwrap();
        let a = asm.assemble(Mobility::Nodal(&field(&s, &psi))).unwrap();
        let scale = a.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let ones = vec![1.0; s.n_dofs()];
        prop_assert!(a.matvec(&ones).iter().all(|v| v.abs() <= 1e-12 * scale));
        prop_assert!(a.transpose().matvec(&ones).iter().all(|v| v.abs() <= 1e-12 * scale));
        prop_assert!(a.asymmetry() <= 1e-12 * scale);
    }

    #[test]
    fn stable_forms_are_coercive(
        dim in 1usize..=2,
        k in 1usize..=3,
        psi in prop::collection::vec(0.5f64..2.0, 5),
        v in prop::collection::vec(-1.0f64..1.0, 11),
    ) {
        let s = space(dim, k, 3, Continuity::CellLocal, false);
        let psi = field(&s, &psi);
        let b = MobilityBounds::of_field(&psi).unwrap();
        let beta1 = 1.0 / (2 * k * (k + 1)) as f64;
        let beta0 = 1.01 * b.psi1 / b.psi0 * gamma_of_beta1(k, beta1);
        prop_assert!(check_stability(beta0, beta1, k, b));
        let asm = FormAssembler::new(&s, Method::Ddg { beta0, beta1 }).unwrap();
        let a = asm.assemble(Mobility::Nodal(&psi)).unwrap();
        let v = field(&s, &v);
        let e = asm.energy_norm_sq(&v).unwrap();
        prop_assume!(e > 1e-10);
        prop_assert!(a.bilinear(v.values(), v.values()) > 0.0);
    }

    #[test]
    fn limiter_preserves_means_and_positivity(
        k in 1usize..=3,
        values in prop::collection::vec(-1.0f64..1.0, 64),
    ) {
        let s = space(1, k, 4, Continuity::CellLocal, false);
        let mut c = field(&s, &values);
        for cell in 0..4 {
            let m = c.cell_average(cell);
            if m < 0.05 {
                for &g in s.layout().cell_dofs(cell) {
                    c.values_mut()[g] += 0.1 - m;
                }
            }
        }
        let (l, hits) = apply_limiter(&c).unwrap();
        let mut rescaled = 0;
        for cell in 0..4 {
            prop_assert!((l.cell_average(cell) - c.cell_average(cell)).abs() <= 1e-15 * c.cell_average(cell).abs().max(1.0));
            let dofs = s.layout().cell_dofs(cell);
            if cell_minimum(&c, cell) >= 0.0 {
                // untouched cells are bit-identical
                prop_assert!(dofs.iter().all(|&g| l.values()[g].to_bits() == c.values()[g].to_bits()));
            } else {
                rescaled += 1;
            }
        }
        prop_assert_eq!(hits, rescaled);
        for cell in 0..4 {
            prop_assert!(cell_minimum(&l, cell) >= -1e-14);
        }
    }

    #[test]
    fn fraction_to_boundary_keeps_positivity(
        x in prop::collection::vec(1e-6f64..1.0, 1..8),
        dx in prop::collection::vec(-2.0f64..2.0, 8),
        factor in 0.5f64..0.999,
    ) {
        let n = x.len();
        let comps: Vec<usize> = (0..n).collect();
        let a = fraction_to_boundary(&x, &dx[..n], &comps, factor);
        prop_assert!(a > 0.0 && a <= 1.0);
        for i in 0..n {
            prop_assert!(x[i] + a * dx[i] > 0.0);
        }
        let amax = max_positive_step(&x, &dx[..n], &comps);
        prop_assert!(a == 1.0 || (a - factor * amax).abs() <= 1e-15 * a);
    }
}

#[test]
fn limiter_worked_cell() {
    // k = 1 cell [0, 1] with nodal values {3, -1}: mean 1, min -1, theta 1/2
    let s = space(1, 1, 1, Continuity::CellLocal, false);
    let c = Field::new(&s, vec![3.0, -1.0]).unwrap();
    let (l, hits) = apply_limiter(&c).unwrap();
    assert_eq!(hits, 1);
    assert!((l.values()[0] - 2.0).abs() < 1e-15 && l.values()[1].abs() < 1e-15);
    assert!((l.cell_average(0) - 1.0).abs() < 1e-15);
    let flat = Field::constant(&s, 0.2);
    assert_eq!(apply_limiter(&flat).unwrap().0.values(), flat.values());
}

#[test]
fn fraction_to_boundary_worked_step() {
    // a full step takes 0.1 to -0.5
    let a = fraction_to_boundary(&[0.1], &[-0.6], &[0], 0.95);
    assert!(a <= 0.95 * (0.1 / 0.6) + 1e-16);
}

#[test]
fn fem_energy_norm_is_h1_seminorm() {
    for k in 1..=3 {
        let s = space(2, k, 3, Continuity::Continuous, false);
        let asm = FormAssembler::new(&s, Method::Fem).unwrap();
        let v = interpolate(&s, |x| (2.0 * x[0]).sin() * (x[1] + 0.3).exp()).unwrap();
        let rule = gauss_rule(k + 2).unwrap();
        let mut semi = 0.0;
        for cell in s.mesh().cells() {
            let jac = s.cell_jacobian(cell.id);
            for (a, wa) in rule.nodes.iter().zip(&rule.weights) {
                for (b, wb) in rule.nodes.iter().zip(&rule.weights) {
                    let (_, g) = v.eval_with_gradient(cell.id, &[*a, *b]);
                    semi += wa * wb * jac * (g[0] * g[0] + g[1] * g[1]);
                }
            }
        }
        let e = asm.energy_norm_sq(&v).unwrap();
        assert!((e - semi).abs() < 1e-12 * semi, "k={k}: {e} vs {semi}");
    }
}

#[test]
fn continuous_fields_have_no_jumps() {
    let s = space(1, 2, 4, Continuity::CellLocal, true);
    let asm = FormAssembler::new(&s, Method::Ddg { beta0: 4.0, beta1: 1.0 / 12.0 }).unwrap();
    let f = interpolate(&s, |x| (2.0 * std::f64::consts::PI * x[0]).cos()).unwrap();
    for e in s.mesh().interior_edges() {
        for t in asm.flux_terms(e.id, &f).unwrap() {
            assert!(t.jump.abs() < 1e-14);
        }
    }
}
