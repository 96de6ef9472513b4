//! Self-checks of the discrete operators, run by `matmi verify`.
//!
//! Each check measures one quantity and compares it with a fixed limit. The
//! quick level stays on meshes with at most 16 cells per side; the full
//! level adds the finer meshes and a short reconstruction.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::derivative::LinearizedState;
use crate::elliptic::{SolverOptions, SYNTHESIS_TOL};
use crate::error::{Error, Result};
use crate::experiments::{bump_tensor, phantom, random_sine_series};
use crate::fields::{lumped_inner, weak_divergence_with, ElementVector, Gauge, ScalarField, VectorField};
use crate::forward::ForwardProblem;
use crate::mesh::{build_disk_mesh, build_unit_square_mesh, Mesh};
use crate::reconstruct::{quasi_newton_run, AdmissibleSet, ReconstructionConfig};
use crate::sparse::PreconditionerKind;
use crate::transport::{solve_transport, TransportProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Quick,
    Full,
}

impl std::str::FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Level> {
        match s {
            "quick" => Ok(Level::Quick),
            "full" => Ok(Level::Full),
            other => Err(Error::Config(format!("unknown verification level `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    /// Human-readable acceptance rule, e.g. `<= 1e-6`.
    pub limit: String,
    pub passed: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub checks: Vec<Check>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn push(&mut self, name: impl Into<String>, measured: f64, limit: impl Into<String>, passed: bool) {
        self.checks.push(Check {
            name: name.into(),
            measured,
            limit: limit.into(),
            passed: passed && measured.is_finite(),
        });
    }

    fn at_most(&mut self, name: impl Into<String>, measured: f64, limit: f64) {
        self.push(name, measured, format!("<= {limit:e}"), measured <= limit);
    }

    fn at_least(&mut self, name: impl Into<String>, measured: f64, limit: f64) {
        self.push(name, measured, format!(">= {limit}"), measured >= limit);
    }

    /// CSV with columns `check,measured,limit,status`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("check,measured,limit,status\n");
        for c in &self.checks {
            let status = if c.passed { "PASS" } else { "FAIL" };
            let _ = writeln!(out, "{},{:.6e},{},{status}", c.name, c.measured, c.limit);
        }
        out
    }
}

fn square(n: usize) -> Result<Arc<Mesh>> {
    Ok(Arc::new(build_unit_square_mesh(n)?))
}

fn tight() -> SolverOptions {
    SolverOptions {
        preconditioner: PreconditionerKind::Ilu0,
        ..SolverOptions::default().with_tol(1e-12)
    }
}

fn anisotropic_problem(mesh: Arc<Mesh>) -> Result<ForwardProblem> {
    ForwardProblem::new(bump_tensor(mesh).tensor, Gauge::default(), tight())
}

fn smooth_sigma(mesh: Arc<Mesh>) -> ScalarField {
    ScalarField::from_fn(mesh, |p| 0.4 + 0.15 * (3.0 * p[0]).sin() * (2.0 * p[1]).cos())
}

/// Largest relative mismatch `|⟨DF h, g⟩ − ⟨h, DF* g⟩| / (‖DF h‖ ‖g‖)` over
/// random boundary-vanishing pairs, in the lumped pairing.
pub fn adjoint_mismatch(n: usize, trials: usize, seed: u64) -> Result<f64> {
    let mesh = square(n)?;
    let st = LinearizedState::new(&anisotropic_problem(mesh.clone())?, &smooth_sigma(mesh.clone()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let mut random = || -> Result<ScalarField> {
            let v = (0..mesh.n_vertices()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            Ok(ScalarField::new(mesh.clone(), v)?.interior())
        };
        let (h, g) = (random()?, random()?);
        let dh = st.df_apply(&h)?;
        let lhs = lumped_inner(&dh, &g)?;
        let rhs = lumped_inner(&h, &st.df_adjoint(&g)?)?;
        worst = worst.max((lhs - rhs).abs() / (dh.lumped_norm() * g.lumped_norm()));
    }
    Ok(worst)
}

/// Least-squares log-log slope of the first-order Taylor remainder
/// `‖F(σ + th) − F(σ) − t DF h‖` against `t`.
pub fn taylor_slope(n: usize, steps: &[f64]) -> Result<f64> {
    let mesh = square(n)?;
    let fp = anisotropic_problem(mesh.clone())?;
    let sigma = smooth_sigma(mesh.clone());
    let st = LinearizedState::new(&fp, &sigma)?;
    let h = ScalarField::from_fn(mesh.clone(), |p| {
        let r2 = (p[0] - 0.5).powi(2) + (p[1] - 0.5).powi(2);
        0.1 * (-r2 / 0.02).exp()
    })
    .interior();
    let f0 = st.state().data();
    let dh = st.df_apply(&h)?;
    let mut pts = Vec::with_capacity(steps.len());
    for &t in steps {
        let ft = fp.internal_data(&sigma.axpy(t, &h)?)?;
        let rem = ft.sub(&f0)?.axpy(-t, &dh)?.lumped_norm();
        pts.push((t.ln(), rem.ln()));
    }
    Ok(fit_slope(&pts))
}

fn fit_slope(pts: &[(f64, f64)]) -> f64 {
    let m = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (mx, my) = (sx / m, sy / m);
    let (num, den) = pts
        .iter()
        .fold((0.0, 0.0), |a, p| (a.0 + (p.0 - mx) * (p.1 - my), a.1 + (p.0 - mx).powi(2)));
    num / den
}

/// Errors of the constant-factor disk problem: `(max |F − σ|` at interior
/// nodes, `max |∇u|` over elements`)`. Both vanish for the exact solution.
pub fn disk_oracle(level: usize, value: f64) -> Result<(f64, f64)> {
    let gauge = Gauge::default();
    let mesh = Arc::new(build_disk_mesh(gauge.center, 0.5, level)?);
    let fp = ForwardProblem::isotropic(mesh.clone(), tight());
    let state = fp.solve(&ScalarField::constant(mesh.clone(), value))?;
    let f = state.data();
    let data_err = f
        .values()
        .iter()
        .enumerate()
        .filter(|(i, _)| !mesh.is_boundary(*i))
        .map(|(_, v)| (v - value).abs())
        .fold(0.0, f64::max);
    let e_err = (0..mesh.n_triangles())
        .map(|t| {
            let g = crate::fields::element_gradient(state.potential(), t);
            g[0].hypot(g[1])
        })
        .fold(0.0, f64::max);
    Ok((data_err, e_err))
}

/// `(max |curl E − 1|, max |∇·(Ẽ × B₀) − 1|` at interior nodes`)`.
pub fn maxwell_identities(n: usize) -> Result<(f64, f64)> {
    let mesh = square(n)?;
    let state = anisotropic_problem(mesh.clone())?.solve(&smooth_sigma(mesh.clone()))?;
    let curl = (0..mesh.n_triangles())
        .map(|t| (state.field().curl(t) - 1.0).abs())
        .fold(0.0, f64::max);
    let gauge: VectorField = Gauge::default().field(mesh.clone());
    let div = weak_divergence_with(&mesh, |t, q| crate::fields::cross_b0(gauge.eval(t, q)));
    let div_err = div
        .values()
        .iter()
        .enumerate()
        .filter(|(i, _)| !mesh.is_boundary(*i))
        .map(|(_, v)| (v - 1.0).abs())
        .fold(0.0, f64::max);
    Ok((curl, div_err))
}

/// Relative L² error of the transport solver against a manufactured
/// solution advected by a radial field.
pub fn transport_mms_error(n: usize) -> Result<f64> {
    let mesh = square(n)?;
    let v = VectorField::affine_from_fn(mesh.clone(), |p| [0.5 * (p[0] - 0.5), 0.5 * (p[1] - 0.5)]);
    let exact = ScalarField::from_fn(mesh.clone(), |p| 0.4 + 0.2 * (2.0 * p[0]).sin() * (3.0 * p[1]).cos());
    let g = weak_divergence_with(&mesh, |t, q| {
        let s = exact.at(t, q);
        let w = v.eval(t, q);
        [s * w[0], s * w[1]]
    });
    let got = solve_transport(&TransportProblem::new(&v, &g, &exact))?;
    Ok(got.sub(&exact)?.l2_norm() / exact.l2_norm())
}

/// Smallest ratio `‖F(σ₁) − F(σ₂)‖ / ‖σ₁ − σ₂‖` over random pairs of
/// admissible factors that agree on the boundary, with the anisotropic
/// tensor.
pub fn stability_constant(n: usize, pairs: usize, seed: u64) -> Result<f64> {
    let mesh = square(n)?;
    let fp = anisotropic_problem(mesh.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = f64::INFINITY;
    for _ in 0..pairs {
        let s1 = random_sine_series(mesh.clone(), 3, 0.15, &mut rng).map(|v| v + 0.4);
        let s2 = random_sine_series(mesh.clone(), 3, 0.15, &mut rng).map(|v| v + 0.4);
        let df = fp.internal_data(&s1)?.sub(&fp.internal_data(&s2)?)?;
        let ds = s1.sub(&s2)?;
        c = c.min(df.l2_norm() / ds.l2_norm());
    }
    Ok(c)
}

/// Runs the suite at the given level.
pub fn run(level: Level) -> Result<Report> {
    let mut r = Report::default();
    let (n_small, n_large) = match level {
        Level::Quick => (8, 16),
        Level::Full => (16, 32),
    };

    r.at_most(format!("adjoint_identity_n{n_small}"), adjoint_mismatch(n_small, 50, 1)?, 1e-6);

    let slope = taylor_slope(n_large, &[1e-1, 3e-2, 1e-2, 3e-3])?;
    r.push(format!("taylor_slope_n{n_large}"), slope, "in [1.8, 2.2]", (1.8..=2.2).contains(&slope));

    let (coarse_level, fine_level) = match level {
        Level::Quick => (2, 3),
        Level::Full => (3, 4),
    };
    let (f_coarse, e_coarse) = disk_oracle(coarse_level, 0.7)?;
    let (f_fine, e_fine) = disk_oracle(fine_level, 0.7)?;
    r.at_most("disk_data_error", f_fine, 1e-8);
    r.at_most("disk_field_error", e_fine, 1e-8);
    // Below the floor the error is rounding noise and refinement cannot
    // reduce it further.
    let floor = 1e-8;
    let factor = f_coarse.max(floor) / f_fine.max(floor);
    r.push("disk_refinement", factor, ">= 1.7 or at floor", factor >= 1.7 || f_fine <= floor);
    r.push(
        "disk_field_refinement",
        e_coarse.max(floor) / e_fine.max(floor),
        ">= 1.7 or at floor",
        e_coarse / e_fine >= 1.7 || e_fine <= floor,
    );

    let (curl, div) = maxwell_identities(n_large)?;
    r.at_most("curl_identity", curl, 1e-12);
    r.at_most("gauge_divergence_identity", div, 1e-12);

    // The diffusion scales with h, so the rate only settles from n = 32 on;
    // the quick level checks that refinement helps at all.
    match level {
        Level::Quick => {
            let (coarse, fine) = (transport_mms_error(8)?, transport_mms_error(16)?);
            r.at_least("transport_refinement_n16", coarse / fine, 1.0);
            r.at_most("transport_error_n16", fine, 5e-2);
        }
        Level::Full => {
            let (coarse, fine) = (transport_mms_error(32)?, transport_mms_error(64)?);
            r.at_least("transport_convergence_factor", coarse / fine, 1.7);
            r.at_most("transport_error_n64", fine, 5e-2);
        }
    }

    let pairs = match level {
        Level::Quick => 20,
        Level::Full => 100,
    };
    let c1 = stability_constant(n_large, pairs, 11)?;
    let c2 = stability_constant(n_large, pairs, 12)?;
    r.push("stability_constant", c1, "> 0", c1 > 0.0);
    let spread = (c1 - c2).abs() / c1.max(c2);
    r.at_most("stability_constant_seed_spread", spread, 0.2);

    if level == Level::Full {
        let mesh = square(64)?;
        let ph = phantom("ring", mesh.clone())?;
        let solver = SolverOptions {
            preconditioner: PreconditionerKind::Ilu0,
            ..SolverOptions::default().with_tol(SYNTHESIS_TOL)
        };
        let fp = ForwardProblem::new(ph.tensor.clone(), Gauge::default(), solver)?;
        let data = fp.internal_data(&ph.sigma)?;
        let set = AdmissibleSet::new(ScalarField::constant(mesh.clone(), ph.background))?;
        let cfg = ReconstructionConfig {
            max_iter: 12,
            residual_tol: 0.0,
            ..Default::default()
        };
        let rec = quasi_newton_run(&fp, &data, &set, set.sigma0(), Some(&ph.sigma), &cfg)?;
        let worst_ratio = rec.log.records[1..]
            .iter()
            .filter_map(|x| x.ratio)
            .fold(0.0, f64::max);
        r.at_most("quasi_newton_error_n64", rec.log.final_error().unwrap_or(f64::NAN), 1e-2);
        r.push("quasi_newton_max_ratio_n64", worst_ratio, "< 1", worst_ratio < 1.0);
    }
    Ok(r)
}
