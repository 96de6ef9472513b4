//! Inversion drivers: projected Landweber and the quasi-Newton transport
//! iteration, both followed by the projection onto the admissible set.

use std::time::Instant;

use crate::derivative::LinearizedState;
use crate::elliptic::{SolverOptions, ITERATION_TOL};
use crate::error::{Error, Result};
use crate::experiments::relative_l2_error;
use crate::fields::{ensure_same, p1_gradient, quad_norm, ScalarField, VectorRepr};
use crate::forward::{ForwardProblem, ForwardState};
use crate::transport::{solve_transport_detailed, TransportOptions, TransportProblem};

/// Constraint set for the factor: `σ = σ₀` on the boundary, `c₁ ≤ σ ≤ c₂`,
/// `‖σ − σ₀‖ ≤ c₃`, `|∇σ| ≤ K` and `‖∇(σ − σ₀)‖ ≤ L‖σ − σ₀‖`.
///
/// The projection enforces the first three exactly and only reports the
/// gradient conditions.
#[derive(Debug, Clone)]
pub struct AdmissibleSet {
    sigma0: ScalarField,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub gradient_bound: f64,
    pub ratio_bound: f64,
    pub lambda: f64,
    pub eta: f64,
}

/// Outcome of a membership test.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Membership {
    pub violations: Vec<String>,
    pub warnings: Vec<String>,
}

impl Membership {
    pub fn is_member(&self) -> bool {
        self.violations.is_empty()
    }
}

impl AdmissibleSet {
    /// Set with the default bounds `c₁ = 0.1`, `c₂ = 1`, `c₃ = 1`, `K = 20`,
    /// `L = 50`, `λ = 0.4`, `η = 0.6`.
    pub fn new(sigma0: ScalarField) -> Result<AdmissibleSet> {
        AdmissibleSet {
            sigma0,
            c1: 0.1,
            c2: 1.0,
            c3: 1.0,
            gradient_bound: 20.0,
            ratio_bound: 50.0,
            lambda: 0.4,
            eta: 0.6,
        }
        .validated()
    }

    pub fn validated(self) -> Result<AdmissibleSet> {
        let ok = self.c1 > 0.0
            && self.c1 <= self.c2
            && self.c3 > 0.0
            && self.gradient_bound > 0.0
            && self.ratio_bound > 0.0
            && (0.0..1.0).contains(&self.eta)
            && self.lambda > 0.0;
        if !ok {
            return Err(Error::Config(format!(
                "inconsistent admissible set: c1 = {}, c2 = {}, c3 = {}, K = {}, L = {}, lambda = {}, eta = {}",
                self.c1, self.c2, self.c3, self.gradient_bound, self.ratio_bound, self.lambda, self.eta
            )));
        }
        if self.sigma0.min() < self.c1 || self.sigma0.max() > self.c2 {
            return Err(Error::Config(format!(
                "background factor leaves [{}, {}]",
                self.c1, self.c2
            )));
        }
        Ok(self)
    }

    pub fn sigma0(&self) -> &ScalarField {
        &self.sigma0
    }

    /// Boundary reset, pointwise clamp, then radial shrink of the increment
    /// into the `c₃` ball. Distances are measured in the lumped-mass norm,
    /// where each step is an orthogonal projection.
    pub fn project(&self, sigma: &ScalarField) -> Result<ScalarField> {
        ensure_same(sigma.mesh(), self.sigma0.mesh())?;
        let mesh = sigma.mesh();
        let s0 = self.sigma0.values();
        let mut inc: Vec<f64> = sigma
            .values()
            .iter()
            .zip(s0)
            .zip(mesh.boundary_mask())
            .map(|((&s, &b), &on_bnd)| if on_bnd { 0.0 } else { s.clamp(self.c1, self.c2) - b })
            .collect();
        let norm = inc
            .iter()
            .zip(mesh.lumped_mass())
            .map(|(a, m)| a * a * m)
            .sum::<f64>()
            .sqrt();
        if norm > self.c3 * (1.0 + 1e-12) {
            let scale = self.c3 / norm;
            inc.iter_mut().for_each(|a| *a *= scale);
        }
        let values = inc.iter().zip(s0).map(|(a, b)| a + b).collect();
        ScalarField::new(mesh.clone(), values)
    }

    pub fn membership(&self, sigma: &ScalarField) -> Result<Membership> {
        ensure_same(sigma.mesh(), self.sigma0.mesh())?;
        let mesh = sigma.mesh();
        let mut m = Membership::default();
        for (i, (&s, &b)) in sigma.values().iter().zip(self.sigma0.values()).enumerate() {
            if mesh.is_boundary(i) && s != b {
                m.violations.push(format!("boundary node {i}: {s} differs from background {b}"));
                break;
            }
            if s < self.c1 || s > self.c2 {
                m.violations.push(format!("node {i}: {s} outside [{}, {}]", self.c1, self.c2));
                break;
            }
        }
        let inc = sigma.sub(&self.sigma0)?;
        let norm = inc.lumped_norm();
        if norm > self.c3 * (1.0 + 1e-9) {
            m.violations.push(format!("increment norm {norm:.6} exceeds {}", self.c3));
        }
        let grad = max_gradient(sigma);
        if grad > self.gradient_bound {
            m.warnings.push(format!("gradient {grad:.3} exceeds K = {}", self.gradient_bound));
        }
        let grad_inc = quad_norm(mesh, &p1_gradient(&inc));
        if grad_inc > self.ratio_bound * inc.l2_norm() {
            m.warnings.push(format!(
                "increment ratio {:.3} exceeds L = {}",
                grad_inc / inc.l2_norm(),
                self.ratio_bound
            ));
        }
        Ok(m)
    }
}

/// Largest elementwise `|∇σ|`.
pub fn max_gradient(sigma: &ScalarField) -> f64 {
    match p1_gradient(sigma).repr() {
        VectorRepr::Element(v) => v.iter().map(|g| g[0].hypot(g[1])).fold(0.0, f64::max),
        _ => unreachable!("P1 gradients are elementwise constant"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Landweber,
    QuasiNewton,
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Algorithm> {
        match s {
            "landweber" => Ok(Algorithm::Landweber),
            "quasi-newton" => Ok(Algorithm::QuasiNewton),
            other => Err(Error::Config(format!(
                "unknown algorithm `{other}` (expected landweber or quasi-newton)"
            ))),
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algorithm::Landweber => "landweber",
            Algorithm::QuasiNewton => "quasi-newton",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionConfig {
    pub algorithm: Algorithm,
    /// Landweber step; estimated by the power method when absent.
    pub step_size: Option<f64>,
    /// Multiplier on the estimated step `1/Λ̂`; must stay below 2.
    pub step_scale: f64,
    pub power_iterations: usize,
    pub max_iter: usize,
    /// Stop once `‖F(σ) − g‖ / ‖g‖` drops below this.
    pub residual_tol: f64,
    /// Noise level δ; enables the discrepancy stop `‖F(σ) − g‖ ≤ τδ‖g‖`.
    pub noise_level: Option<f64>,
    pub discrepancy_factor: f64,
    /// Transport stabilisation acts on the change from the current iterate.
    pub anchored: bool,
    pub transport: TransportOptions,
    pub solver: SolverOptions,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        ReconstructionConfig {
            algorithm: Algorithm::QuasiNewton,
            step_size: None,
            step_scale: 1.0,
            power_iterations: 20,
            max_iter: 50,
            residual_tol: 1e-6,
            noise_level: None,
            discrepancy_factor: 1.1,
            anchored: true,
            transport: TransportOptions::default(),
            solver: SolverOptions::default().with_tol(ITERATION_TOL),
        }
    }
}

impl ReconstructionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::Config("max iterations must be at least 1".into()));
        }
        if let Some(mu) = self.step_size {
            if !(mu >= 0.0 && mu.is_finite()) {
                return Err(Error::Config(format!("step size must be >= 0, got {mu}")));
            }
        }
        if !(self.step_scale > 0.0 && self.step_scale < 2.0) {
            return Err(Error::Config(format!(
                "step scale must lie in (0, 2), got {}",
                self.step_scale
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub k: usize,
    /// Relative interior L² error against the true factor, when known.
    pub error: Option<f64>,
    /// Interior L² norm of `F(σ_k) − g`.
    pub residual: f64,
    /// `error_k / error_{k−1}`.
    pub ratio: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxIterations,
    ResidualTolerance,
    Discrepancy,
    Stalled,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StopReason::MaxIterations => "max-iterations",
            StopReason::ResidualTolerance => "residual-tolerance",
            StopReason::Discrepancy => "discrepancy",
            StopReason::Stalled => "stalled",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationLog {
    pub records: Vec<IterationRecord>,
    pub step_size: Option<f64>,
    pub stop: StopReason,
    pub warnings: Vec<String>,
}

impl IterationLog {
    fn new() -> IterationLog {
        IterationLog {
            records: Vec::new(),
            step_size: None,
            stop: StopReason::MaxIterations,
            warnings: Vec::new(),
        }
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    pub fn final_error(&self) -> Option<f64> {
        self.last().and_then(|r| r.error)
    }
}

/// Reconstruction result: final iterate and its log.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub sigma: ScalarField,
    pub log: IterationLog,
}

/// The run counts as stalled once the last `STALL_WINDOW` iterations have not
/// improved the best residual by a relative `STALL_TOL`. Landweber residuals
/// are not monotone: the phantom runs show bumps of up to 40 iterations while
/// the error keeps falling.
const STALL_WINDOW: usize = 100;
const STALL_TOL: f64 = 1e-10;

struct Monitor<'a> {
    truth: Option<&'a ScalarField>,
    data_norm: f64,
    cfg: &'a ReconstructionConfig,
    start: Instant,
    log: IterationLog,
}

impl Monitor<'_> {
    /// Records iterate `σ_k` and reports whether to stop.
    fn record(&mut self, sigma: &ScalarField, residual: f64) -> Result<bool> {
        let k = self.log.records.len() + 1;
        let error = self.truth.map(|t| relative_l2_error(sigma, t)).transpose()?;
        let ratio = match (error, self.log.last().and_then(|r| r.error)) {
            (Some(e), Some(p)) if p > 0.0 => Some(e / p),
            _ => None,
        };
        self.log.records.push(IterationRecord {
            k,
            error,
            residual,
            ratio,
            seconds: self.start.elapsed().as_secs_f64(),
        });
        if !residual.is_finite() {
            return Err(Error::Diverged {
                iteration: k,
                from: self.log.records[0].residual,
                to: residual,
            });
        }
        if k > 5 {
            let before = self.log.records[k - 6].residual;
            if residual > 10.0 * before {
                return Err(Error::Diverged {
                    iteration: k,
                    from: before,
                    to: residual,
                });
            }
        }
        if let Some(delta) = self.cfg.noise_level {
            if delta > 0.0 && residual <= self.cfg.discrepancy_factor * delta * self.data_norm {
                self.log.stop = StopReason::Discrepancy;
                return Ok(true);
            }
        }
        if residual <= self.cfg.residual_tol * self.data_norm {
            self.log.stop = StopReason::ResidualTolerance;
            return Ok(true);
        }
        if k > STALL_WINDOW {
            let best = |r: &[IterationRecord]| r.iter().map(|x| x.residual).fold(f64::INFINITY, f64::min);
            let (earlier, recent) = self.log.records.split_at(k - STALL_WINDOW);
            if best(recent) >= best(earlier) * (1.0 - STALL_TOL) {
                self.log.stop = StopReason::Stalled;
                return Ok(true);
            }
        }
        if k >= self.cfg.max_iter {
            self.log.stop = StopReason::MaxIterations;
            return Ok(true);
        }
        Ok(false)
    }
}

fn residual_norm(state: &ForwardState, data: &ScalarField) -> Result<f64> {
    Ok(state.data().sub(data)?.interior_l2_norm())
}

fn start(
    fp: &ForwardProblem,
    data: &ScalarField,
    set: &AdmissibleSet,
    initial: &ScalarField,
    cfg: &ReconstructionConfig,
) -> Result<(ForwardProblem, ScalarField)> {
    cfg.validate()?;
    ensure_same(data.mesh(), fp.mesh())?;
    ensure_same(initial.mesh(), fp.mesh())?;
    let fp = fp.with_solver(cfg.solver);
    Ok((fp, set.project(initial)?))
}

/// Projected Landweber iteration
/// `σ_{n+1} = T[σ_n − μ DF[σ_n]*(F(σ_n) − g)]`.
pub fn landweber_run(
    fp: &ForwardProblem,
    data: &ScalarField,
    set: &AdmissibleSet,
    initial: &ScalarField,
    truth: Option<&ScalarField>,
    cfg: &ReconstructionConfig,
) -> Result<Reconstruction> {
    let (fp, mut sigma) = start(fp, data, set, initial, cfg)?;
    let mut monitor = Monitor {
        truth,
        data_norm: data.interior_l2_norm(),
        cfg,
        start: Instant::now(),
        log: IterationLog::new(),
    };
    let mut lin = LinearizedState::new(&fp, &sigma).map_err(|e| e.at_iteration(1))?;
    let mu = match cfg.step_size {
        Some(mu) => mu,
        None => {
            let seed = data.sub(&lin.state().data())?;
            let norm = lin
                .normal_operator_norm(cfg.power_iterations, &seed)
                .map_err(|e| e.at_iteration(1))?;
            if norm > 0.0 {
                cfg.step_scale / norm
            } else {
                0.0
            }
        }
    };
    monitor.log.step_size = Some(mu);
    let mut adjoint_seed: Option<ScalarField> = None;
    loop {
        let k = monitor.log.records.len() + 1;
        let residual = lin.state().data().sub(data)?.interior();
        if monitor.record(&sigma, residual.l2_norm())? {
            break;
        }
        let (step, seed) = lin
            .df_adjoint_from(&residual, adjoint_seed.as_ref())
            .map_err(|e| e.at_iteration(k))?;
        adjoint_seed = Some(seed);
        sigma = set.project(&sigma.axpy(-mu, &step)?)?;
        let guess = lin.state().potential().clone();
        lin = LinearizedState::from_state(
            fp.solve_from(&sigma, Some(&guess)).map_err(|e| e.at_iteration(k + 1))?,
        );
    }
    Ok(Reconstruction {
        sigma,
        log: monitor.log,
    })
}

/// Quasi-Newton iteration: freeze `E` at the current factor, solve the
/// transport equation `∇·(σ DE_k × B₀) = g` with the known boundary values,
/// then project.
pub fn quasi_newton_run(
    fp: &ForwardProblem,
    data: &ScalarField,
    set: &AdmissibleSet,
    initial: &ScalarField,
    truth: Option<&ScalarField>,
    cfg: &ReconstructionConfig,
) -> Result<Reconstruction> {
    let (fp, mut sigma) = start(fp, data, set, initial, cfg)?;
    let mut monitor = Monitor {
        truth,
        data_norm: data.interior_l2_norm(),
        cfg,
        start: Instant::now(),
        log: IterationLog::new(),
    };
    let mut state = fp.solve(&sigma).map_err(|e| e.at_iteration(1))?;
    loop {
        let k = monitor.log.records.len() + 1;
        if monitor.record(&sigma, residual_norm(&state, data)?)? {
            break;
        }
        let velocity = state.velocity();
        let tp = TransportProblem {
            velocity: &velocity,
            source: data,
            boundary: set.sigma0(),
            anchor: cfg.anchored.then_some(&sigma),
            guess: Some(&sigma),
            options: cfg.transport,
        };
        let half = solve_transport_detailed(&tp).map_err(|e| e.at_iteration(k))?;
        let next = set.project(&half.sigma)?;
        let guess = state.potential().clone();
        state = fp.solve_from(&next, Some(&guess)).map_err(|e| e.at_iteration(k + 1))?;
        sigma = next;
    }
    if let Ok(m) = set.membership(&sigma) {
        monitor.log.warnings.extend(m.warnings);
    }
    Ok(Reconstruction {
        sigma,
        log: monitor.log,
    })
}

/// Dispatches on `cfg.algorithm`.
pub fn reconstruct(
    fp: &ForwardProblem,
    data: &ScalarField,
    set: &AdmissibleSet,
    initial: &ScalarField,
    truth: Option<&ScalarField>,
    cfg: &ReconstructionConfig,
) -> Result<Reconstruction> {
    match cfg.algorithm {
        Algorithm::Landweber => landweber_run(fp, data, set, initial, truth, cfg),
        Algorithm::QuasiNewton => quasi_newton_run(fp, data, set, initial, truth, cfg),
    }
}
