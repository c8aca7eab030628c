//! Worked examples: problem data, conservation, energy and Newton behaviour
//! on small runs, each against a closed form or an exact invariant.

use std::f64::consts::PI;

use pnp_core::diagnostics::{metric_e_a, metric_e_g, positivity_report, rate_table, total_mass, total_mass_gauss};
use pnp_core::mesh::{Domain, Mesh};
use pnp_core::problems::{builtin, UserProblem, UserSpecies};
use pnp_core::runner::{DtRule, MethodKind, ProblemSource, RunConfig, Simulation};
use pnp_core::space::{interpolate, Continuity, Field, Space};
use pnp_core::time::TimeOrder;

fn species(valence: f64, initial: &str, source: Option<&str>) -> UserSpecies {
    UserSpecies { valence, diffusion: 1.0, initial: initial.into(), source: source.map(Into::into) }
}

fn user(dim: usize, species: Vec<UserSpecies>, end_time: f64) -> UserProblem {
    UserProblem {
        lower: vec![0.0; dim],
        upper: vec![1.0; dim],
        periodic: vec![true; dim],
        species,
        phi_source: None,
        phi_dirichlet: Vec::new(),
        eps: 1.0,
        end_time,
    }
}

fn user_config(problem: UserProblem, method: MethodKind, k: usize, n: usize, dt: f64) -> RunConfig {
    let mut cfg = RunConfig::new("user", method, k, n);
    cfg.problem = ProblemSource::User(problem);
    cfg.dt = DtRule::Absolute(dt);
    cfg
}

#[test]
fn printed_problem_values() {
    let p = builtin("manufactured-1d").unwrap();
    let exact = p.exact.as_ref().unwrap();
    assert!(((exact.c[0].value)(0.0, &[0.0, 0.0]) - 3e-3).abs() < 1e-18);
    for t in [0.0, 0.05, 0.1] {
        assert_eq!((exact.phi.value)(t, &[0.0, 0.0]), 0.0);
    }

    let p = builtin("manufactured-2d").unwrap();
    assert!(((p.exact.as_ref().unwrap().phi.value)(0.0, &[0.0, 0.0]) - 1e-3).abs() < 1e-18);
    let s = Space::new(Mesh::new(p.domain.clone(), &[8, 8]).unwrap(), 3, Continuity::Continuous).unwrap();
    let c1 = interpolate(&s, |x| (p.initial[0])(0.0, x)).unwrap();
    assert!((total_mass_gauss(&c1) - 1e-3 * PI * PI).abs() < 1e-8);

    let p = builtin("relaxation-2d").unwrap();
    assert!(((p.initial[1])(0.0, &[0.5, 0.5]) - 0.375).abs() < 1e-15);
    let s = Space::new(Mesh::new(p.domain.clone(), &[8, 8]).unwrap(), 3, Continuity::CellLocal).unwrap();
    for f in &p.initial {
        let c = interpolate(&s, |x| f(0.0, x)).unwrap();
        assert!((total_mass_gauss(&c) - 0.2).abs() < 1e-6);
    }
}

#[test]
fn mass_of_simple_fields() {
    for k in 1..=3 {
        let s = Space::new(Mesh::new(Domain::interval(0.0, 1.0, false).unwrap(), &[3]).unwrap(), k, Continuity::CellLocal).unwrap();
        let x = interpolate(&s, |p| p[0]).unwrap();
        assert!((total_mass(&x) - 0.5).abs() < 1e-15);
        assert!((total_mass_gauss(&x) - 0.5).abs() < 1e-15);
    }
    let s = Space::new(Mesh::new(Domain::rectangle([0.0, 1.0], [0.0, 1.0], [false, false]).unwrap(), &[2, 2]).unwrap(), 2, Continuity::Continuous).unwrap();
    assert!((total_mass(&Field::constant(&s, 0.2)) - 0.2).abs() < 1e-15);
}

#[test]
fn positivity_report_of_one_cell() {
    let s = Space::new(Mesh::new(Domain::interval(0.0, 1.0, false).unwrap(), &[1]).unwrap(), 1, Continuity::CellLocal).unwrap();
    let c = Field::new(&s, vec![-0.1, 0.5]).unwrap();
    let r = positivity_report(&[c]);
    assert_eq!(r.min_node, vec![-0.1]);
    assert!((r.min_cell_average[0] - 0.2).abs() < 1e-15);
    assert!(!r.all_positive());
    let r = positivity_report(&[Field::constant(&s, 0.2)]);
    assert_eq!((r.min_node[0], r.min_cell_average[0]), (0.2, 0.2));
}

#[test]
fn metrics_vanish_on_reproduced_polynomials() {
    for k in 1..=3 {
        let s = Space::new(Mesh::new(Domain::rectangle([0.0, 1.0], [0.0, 2.0], [false, false]).unwrap(), &[3, 2]).unwrap(), k, Continuity::CellLocal).unwrap();
        let kk = k as i32;
        let v = move |x: &[f64; 2]| x[0].powi(kk) * x[1] + x[1].powi(kk);
        let g = move |x: &[f64; 2]| [kk as f64 * x[0].powi(kk - 1) * x[1], x[0].powi(kk) + kk as f64 * x[1].powi(kk - 1)];
        let vh = interpolate(&s, v).unwrap();
        assert!(metric_e_a(&vh, g) < 1e-13);
        assert!(metric_e_g(&vh, g) < 1e-13);
    }
}

#[test]
fn rate_table_examples() {
    let t = rate_table(vec!["e".into()], vec![(10, vec![1e-3]), (20, vec![1.25e-4])]).unwrap();
    assert!((t.final_rate("e").unwrap() - 3.0).abs() < 1e-12);
    let t = rate_table(vec!["e".into()], vec![(10, vec![2e-3]), (20, vec![2e-3])]).unwrap();
    assert_eq!(t.final_rate("e").unwrap(), 0.0);
    let t = rate_table(vec!["e".into()], vec![(10, vec![2e-3])]).unwrap();
    assert_eq!(t.rates[0][0], None);
    assert!(rate_table(vec!["e".into()], vec![(10, vec![1.0]), (30, vec![1.0])]).is_err());
}

#[test]
fn uniform_state_energy_and_stationarity() {
    for (method, k, dim) in [(MethodKind::Fem, 1, 2), (MethodKind::Ddg, 2, 2), (MethodKind::Ddg, 1, 1)] {
        let p = user(dim, vec![species(1.0, "0.2", None), species(-1.0, "0.2", None)], 0.01);
        let mut sim = Simulation::new(user_config(p, method, k, 2, 5e-3)).unwrap();
        let e0 = sim.records()[0].energy;
        let closed = 2.0 * 0.2 * 0.2f64.ln();
        assert!((e0.lumped - closed).abs() < 1e-14 && (e0.exact - closed).abs() < 1e-14, "{e0:?}");
        sim.run().unwrap();
        for c in &sim.state().c {
            assert!(c.values().iter().all(|v| (v - 0.2).abs() < 1e-14));
        }
        assert!(sim.state().phi.values().iter().all(|v| v.abs() < 1e-14));
    }
    let p = user(2, vec![species(1.0, "1", None), species(-1.0, "1", None)], 0.01);
    let sim = Simulation::new(user_config(p, MethodKind::Fem, 1, 2, 5e-3)).unwrap();
    assert!(sim.records()[0].energy.lumped.abs() < 1e-15);
}

#[test]
fn relaxation_conserves_mass_at_both_orders() {
    for order in [TimeOrder::First, TimeOrder::Second] {
        for method in [MethodKind::Fem, MethodKind::Ddg] {
            let mut cfg = RunConfig::new("relaxation-2d", method, 1, 4);
            cfg.order = order;
            cfg.dt = DtRule::Absolute(1e-3);
            cfg.end_time = Some(0.01);
            let mut sim = Simulation::new(cfg).unwrap();
            sim.run().unwrap();
            let m = sim.monitors();
            assert!(m.max_mass_drift.iter().all(|&d| d <= 1e-11), "{order:?} {method:?}: {:?}", m.max_mass_drift);
            assert!(m.min_node.iter().all(|&v| v > 0.0));
            if order == TimeOrder::First {
                assert!(m.max_energy_increase <= 1e-12);
                assert!(m.max_dissipation_residual <= 1e-10);
            }
        }
    }
}

#[test]
fn sources_change_mass_by_their_integral() {
    let init = "1 + 0.3 * cos(2 * pi * x) * cos(2 * pi * y)";
    let p = user(2, vec![species(1.0, init, Some("1 + x")), species(-1.0, init, Some("1 + x"))], 0.01);
    let mut sim = Simulation::new(user_config(p, MethodKind::Ddg, 2, 3, 2e-3)).unwrap();
    let m0: Vec<f64> = sim.state().c.iter().map(total_mass).collect();
    let mut steps = 0;
    while !sim.is_finished() {
        sim.step().unwrap();
        steps += 1;
        let t = sim.state().t;
        for (c, m0) in sim.state().c.iter().zip(&m0) {
            // lumped integral of 1 + x over the unit square is 1.5
            assert!((total_mass(c) - m0 - 1.5 * t).abs() < 1e-10, "step {steps}");
        }
    }
    assert_eq!(steps, 5);
}

#[test]
fn newton_converges_quadratically_on_a_manufactured_step() {
    let mut cfg = RunConfig::new("manufactured-1d", MethodKind::Ddg, 2, 8);
    cfg.dt = DtRule::Absolute(0.05);
    cfg.end_time = Some(0.1);
    let mut sim = Simulation::new(cfg).unwrap();
    let r = sim.step().unwrap();
    let h = &r.residual_history;
    assert!(h.len() >= 3, "{h:?}");
    assert!(*h.last().unwrap() < 1e-13, "{h:?}");
    // quadratic: r_{n+1} / r_n^2 stays bounded while r_n falls by orders of magnitude
    let worst = h.windows(2).map(|w| w[1] / (w[0] * w[0])).fold(0.0, f64::max);
    assert!(worst < 100.0, "residuals {h:?}, max r_(n+1) / r_n^2 = {worst}");

    // an exact start needs no iterations
    let p = user(1, vec![species(1.0, "0.5", None), species(-1.0, "0.5", None)], 0.01);
    let mut sim = Simulation::new(user_config(p, MethodKind::Fem, 1, 4, 5e-3)).unwrap();
    assert_eq!(sim.step().unwrap().iterations, 0);
}

#[test]
fn second_order_start_is_first_order() {
    let mut a = RunConfig::new("manufactured-1d", MethodKind::Fem, 1, 6);
    a.dt = DtRule::Absolute(1e-3);
    a.end_time = Some(2e-3);
    let mut b = a.clone();
    b.order = TimeOrder::Second;
    let mut sa = Simulation::new(a).unwrap();
    let mut sb = Simulation::new(b).unwrap();
    sa.step().unwrap();
    sb.step().unwrap();
    assert_eq!(sa.state().c[0].values(), sb.state().c[0].values());
    sa.step().unwrap();
    sb.step().unwrap();
    assert_ne!(sa.state().c[0].values(), sb.state().c[0].values());
}
