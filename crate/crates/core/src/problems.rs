//! Built-in problems: two manufactured solutions (1D and 2D), a
//! source-free 2D relaxation, and user problems from expressions.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{PnpError, Result};
use crate::expr::Expr;
use crate::mesh::{BoundaryConditions, BoundarySide, Domain, Point, ScalarFn, Side};
use crate::time::{Sources, SpeciesSpec};

/// Space-time vector function (gradient in x).
pub type VectorFn = Arc<dyn Fn(f64, &Point) -> [f64; 2] + Send + Sync>;

/// A smooth function with closed-form time derivative, gradient and Laplacian.
#[derive(Clone)]
pub struct SmoothFn {
    pub value: ScalarFn,
    pub dt: ScalarFn,
    pub grad: VectorFn,
    pub laplacian: ScalarFn,
}

impl std::fmt::Debug for SmoothFn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("SmoothFn")
    }
}

/// Exact solution of a manufactured problem.
#[derive(Clone, Debug)]
pub struct ExactSolution {
    pub c: Vec<SmoothFn>,
    pub phi: SmoothFn,
}

impl ExactSolution {
    /// `p_i = q_i phi + log c_i + 1`.
    pub fn potential(&self, valence: f64, i: usize) -> ScalarFn {
        let c = Arc::clone(&self.c[i].value);
        let phi = Arc::clone(&self.phi.value);
        Arc::new(move |t, x| valence * phi(t, x) + c(t, x).ln() + 1.0)
    }

    pub fn potential_grad(&self, valence: f64, i: usize) -> VectorFn {
        let c = Arc::clone(&self.c[i].value);
        let gc = Arc::clone(&self.c[i].grad);
        let gphi = Arc::clone(&self.phi.grad);
        Arc::new(move |t, x| {
            let (cv, g, gp) = (c(t, x), gc(t, x), gphi(t, x));
            [valence * gp[0] + g[0] / cv, valence * gp[1] + g[1] / cv]
        })
    }
}

#[derive(Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub domain: Domain,
    pub species: Vec<SpeciesSpec>,
    pub initial: Vec<ScalarFn>,
    pub phi_bcs: BoundaryConditions,
    pub sources: Sources,
    pub exact: Option<ExactSolution>,
    /// Known constant steady state of the concentrations, if any.
    pub steady_state: Option<Vec<f64>>,
    pub eps: f64,
    pub end_time: f64,
}

impl std::fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("name", &self.name)
            .field("domain", &self.domain)
            .field("species", &self.species)
            .field("phi_bcs", &self.phi_bcs)
            .field("sources", &self.sources)
            .field("exact", &self.exact.is_some())
            .field("end_time", &self.end_time)
            .finish()
    }
}

/// Sources making `exact` solve the PNP system:
/// `f_i = d_t c_i - D_i (lap c_i + q_i (grad c_i . grad phi + c_i lap phi))`,
/// `f_phi = -eps^2 lap phi - sum_i q_i c_i`.
pub fn manufactured_sources(exact: &ExactSolution, species: &[SpeciesSpec], eps: f64) -> Sources {
    let mut out = Sources::default();
    let phi = exact.phi.clone();
    for (c, s) in exact.c.iter().zip(species) {
        let (c, phi, q, d) = (c.clone(), phi.clone(), s.valence, s.diffusion);
        out.species.push(Some(Arc::new(move |t, x: &Point| {
            let gc = (c.grad)(t, x);
            let gp = (phi.grad)(t, x);
            let drift = gc[0] * gp[0] + gc[1] * gp[1] + (c.value)(t, x) * (phi.laplacian)(t, x);
            (c.dt)(t, x) - d * ((c.laplacian)(t, x) + q * drift)
        }) as ScalarFn));
    }
    let cs: Vec<(f64, ScalarFn)> = exact.c.iter().zip(species).map(|(c, s)| (s.valence, Arc::clone(&c.value))).collect();
    let lap = Arc::clone(&exact.phi.laplacian);
    let eps2 = eps * eps;
    out.poisson = Some(Arc::new(move |t, x: &Point| {
        -eps2 * lap(t, x) - cs.iter().map(|(q, c)| q * c(t, x)).sum::<f64>()
    }));
    out
}

fn smooth(
    value: impl Fn(f64, &Point) -> f64 + Send + Sync + 'static,
    dt: impl Fn(f64, &Point) -> f64 + Send + Sync + 'static,
    grad: impl Fn(f64, &Point) -> [f64; 2] + Send + Sync + 'static,
    laplacian: impl Fn(f64, &Point) -> f64 + Send + Sync + 'static,
) -> SmoothFn {
    SmoothFn { value: Arc::new(value), dt: Arc::new(dt), grad: Arc::new(grad), laplacian: Arc::new(laplacian) }
}

fn initial_of(f: &SmoothFn) -> ScalarFn {
    let v = Arc::clone(&f.value);
    Arc::new(move |_, x| v(0.0, x))
}

fn side(axis: usize, side: Side) -> BoundarySide {
    BoundarySide { axis, side }
}

/// 1D manufactured problem on [0,1] with `q = (+1, -1)`:
/// `c1 = 1e-3 (cos(pi x) + 2) e^-t`, `c2 = 1e-3 (cos(2 pi x) + 3/2) e^-t`,
/// `phi = 1e-3 (cos(2 pi x) - 1) e^-t`; `phi = 0` at `x = 0`, zero flux
/// elsewhere.
pub fn manufactured_1d() -> ProblemSpec {
    let a = 1e-3;
    let c1 = smooth(
        move |t, x| a * ((PI * x[0]).cos() + 2.0) * (-t).exp(),
        move |t, x| -a * ((PI * x[0]).cos() + 2.0) * (-t).exp(),
        move |t, x| [-a * PI * (PI * x[0]).sin() * (-t).exp(), 0.0],
        move |t, x| -a * PI * PI * (PI * x[0]).cos() * (-t).exp(),
    );
    let c2 = smooth(
        move |t, x| a * ((2.0 * PI * x[0]).cos() + 1.5) * (-t).exp(),
        move |t, x| -a * ((2.0 * PI * x[0]).cos() + 1.5) * (-t).exp(),
        move |t, x| [-a * 2.0 * PI * (2.0 * PI * x[0]).sin() * (-t).exp(), 0.0],
        move |t, x| -a * 4.0 * PI * PI * (2.0 * PI * x[0]).cos() * (-t).exp(),
    );
    let phi = smooth(
        move |t, x| a * ((2.0 * PI * x[0]).cos() - 1.0) * (-t).exp(),
        move |t, x| -a * ((2.0 * PI * x[0]).cos() - 1.0) * (-t).exp(),
        move |t, x| [-a * 2.0 * PI * (2.0 * PI * x[0]).sin() * (-t).exp(), 0.0],
        move |t, x| -a * 4.0 * PI * PI * (2.0 * PI * x[0]).cos() * (-t).exp(),
    );
    let species = vec![SpeciesSpec { valence: 1.0, diffusion: 1.0 }, SpeciesSpec { valence: -1.0, diffusion: 1.0 }];
    let exact = ExactSolution { c: vec![c1, c2], phi };
    let g = Arc::clone(&exact.phi.value);
    ProblemSpec {
        name: "manufactured-1d".into(),
        domain: Domain::interval(0.0, 1.0, false).expect("valid"),
        initial: exact.c.iter().map(initial_of).collect(),
        phi_bcs: BoundaryConditions::zero_flux().dirichlet(side(0, Side::Lower), g),
        sources: manufactured_sources(&exact, &species, 1.0),
        species,
        exact: Some(exact),
        steady_state: None,
        eps: 1.0,
        end_time: 0.1,
    }
}

/// 2D manufactured problem on [0,pi]^2, all boundaries zero flux:
/// `c1 = c2 = 1e-3 (e^{-1e-3 t} cos x cos y + 1)`,
/// `phi = 1e-3 e^{-1e-3 t} cos x cos y`.
pub fn manufactured_2d() -> ProblemSpec {
    let a = 1e-3;
    let r = 1e-3;
    let u = |x: &Point| x[0].cos() * x[1].cos();
    let gu = |x: &Point| [-x[0].sin() * x[1].cos(), -x[0].cos() * x[1].sin()];
    let conc = || {
        smooth(
            move |t, x| a * ((-r * t).exp() * u(x) + 1.0),
            move |t, x| -a * r * (-r * t).exp() * u(x),
            move |t, x| {
                let g = gu(x);
                let s = a * (-r * t).exp();
                [s * g[0], s * g[1]]
            },
            move |t, x| -2.0 * a * (-r * t).exp() * u(x),
        )
    };
    let phi = smooth(
        move |t, x| a * (-r * t).exp() * u(x),
        move |t, x| -a * r * (-r * t).exp() * u(x),
        move |t, x| {
            let g = gu(x);
            let s = a * (-r * t).exp();
            [s * g[0], s * g[1]]
        },
        move |t, x| -2.0 * a * (-r * t).exp() * u(x),
    );
    let species = vec![SpeciesSpec { valence: 1.0, diffusion: 1.0 }, SpeciesSpec { valence: -1.0, diffusion: 1.0 }];
    let exact = ExactSolution { c: vec![conc(), conc()], phi };
    ProblemSpec {
        name: "manufactured-2d".into(),
        domain: Domain::rectangle([0.0, PI], [0.0, PI], [false, false]).expect("valid"),
        initial: exact.c.iter().map(initial_of).collect(),
        phi_bcs: BoundaryConditions::zero_flux(),
        sources: manufactured_sources(&exact, &species, 1.0),
        species,
        exact: Some(exact),
        steady_state: None,
        eps: 1.0,
        end_time: 0.01,
    }
}

/// Source-free relaxation on [0,1]^2 with `q = (+1, -1)`:
/// `c1(0) = (pi sin(pi x) + pi sin(pi y)) / 20`,
/// `c2(0) = 3 (x^2 (1-x)^2 + y^2 (1-y)^2)`; `phi = 0` on `x = 0, 1`,
/// zero flux on the `y` faces. Relaxes to `c1 = c2 = 0.2`, `phi = 0`.
pub fn relaxation_2d() -> ProblemSpec {
    let c1: ScalarFn = Arc::new(|_, x| (PI * (PI * x[0]).sin() + PI * (PI * x[1]).sin()) / 20.0);
    let c2: ScalarFn = Arc::new(|_, x| {
        let f = |s: f64| s * s * (1.0 - s) * (1.0 - s);
        3.0 * (f(x[0]) + f(x[1]))
    });
    let zero: ScalarFn = Arc::new(|_, _| 0.0);
    ProblemSpec {
        name: "relaxation-2d".into(),
        domain: Domain::rectangle([0.0, 1.0], [0.0, 1.0], [false, false]).expect("valid"),
        species: vec![SpeciesSpec { valence: 1.0, diffusion: 1.0 }, SpeciesSpec { valence: -1.0, diffusion: 1.0 }],
        initial: vec![c1, c2],
        phi_bcs: BoundaryConditions::zero_flux()
            .dirichlet(side(0, Side::Lower), Arc::clone(&zero))
            .dirichlet(side(0, Side::Upper), zero),
        sources: Sources::default(),
        exact: None,
        steady_state: Some(vec![0.2, 0.2]),
        eps: 1.0,
        end_time: 1.0,
    }
}

/// Looks up a built-in problem by id.
pub fn builtin(id: &str) -> Result<ProblemSpec> {
    match id {
        "manufactured-1d" => Ok(manufactured_1d()),
        "manufactured-2d" => Ok(manufactured_2d()),
        "relaxation-2d" => Ok(relaxation_2d()),
        _ => Err(PnpError::InvalidArgument(format!(
            "unknown problem {id:?} (expected manufactured-1d, manufactured-2d, relaxation-2d or user)"
        ))),
    }
}

/// Expression-defined species of a user problem.
#[derive(Debug, Clone, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserSpecies {
    pub valence: f64,
    pub diffusion: f64,
    pub initial: String,
    #[serde(default)]
    pub source: Option<String>,
}

/// Expression-defined problem. Sources are not derived; supply them or
/// leave the problem source-free.
#[derive(Debug, Clone, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserProblem {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Empty means no periodic axis.
    #[serde(default)]
    pub periodic: Vec<bool>,
    pub species: Vec<UserSpecies>,
    #[serde(default)]
    pub phi_source: Option<String>,
    /// `(face, expression)` pairs, e.g. `("x_lower", "0")`.
    #[serde(default)]
    pub phi_dirichlet: Vec<(String, String)>,
    pub eps: f64,
    pub end_time: f64,
}

fn expr_fn(src: &str) -> Result<ScalarFn> {
    let e = Expr::parse(src)?;
    Ok(Arc::new(move |t, x| e.eval(t, x)))
}

pub fn parse_side(name: &str) -> Result<BoundarySide> {
    let (axis, s) = match name {
        "x_lower" => (0, Side::Lower),
        "x_upper" => (0, Side::Upper),
        "y_lower" => (1, Side::Lower),
        "y_upper" => (1, Side::Upper),
        _ => return Err(PnpError::InvalidArgument(format!("unknown boundary face {name:?}"))),
    };
    Ok(side(axis, s))
}

impl UserProblem {
    pub fn build(&self) -> Result<ProblemSpec> {
        let periodic = if self.periodic.is_empty() { vec![false; self.lower.len()] } else { self.periodic.clone() };
        let domain = Domain::new(&self.lower, &self.upper, &periodic)?;
        let mut species = Vec::new();
        let mut initial = Vec::new();
        let mut sources = Sources::default();
        for s in &self.species {
            species.push(SpeciesSpec::new(s.valence, s.diffusion)?);
            initial.push(expr_fn(&s.initial)?);
            sources.species.push(s.source.as_deref().map(expr_fn).transpose()?);
        }
        sources.poisson = self.phi_source.as_deref().map(expr_fn).transpose()?;
        let mut bcs = BoundaryConditions::zero_flux();
        for (face, g) in &self.phi_dirichlet {
            let s = parse_side(face)?;
            if s.axis >= domain.dim() {
                return Err(PnpError::InvalidArgument(format!("face {face} does not exist in {}D", domain.dim())));
            }
            bcs = bcs.dirichlet(s, expr_fn(g)?);
        }
        Ok(ProblemSpec {
            name: "user".into(),
            domain,
            species,
            initial,
            phi_bcs: bcs,
            sources,
            exact: None,
            steady_state: None,
            eps: self.eps,
            end_time: self.end_time,
        })
    }
}
