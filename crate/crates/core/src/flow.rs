//! Time integration of the Kähler–Ricci flow in ansatz coordinates.
//!
//! The flow `∂_t ω = −Ric(ω)` reduces to `∂_t u = G(ρ) + c(t)` for the
//! radial potential, with `G` the log volume density and `c` a gauge. The
//! stepper evolves `ψ = log u″` on the interior nodes together with the
//! single value `u(ρ₀)`:
//!
//! * `∂_t ψ = e^{−ψ} G″`,
//! * `∂_t u(ρ₀) = G(ρ₀) + c(t)`,
//!
//! and rebuilds `u′` from the class-predicted left momentum `a_t` plus the
//! integral of `u″`. Ghost values beyond `±R` come from the smooth-pole tail
//! model: `ψ ∓ ρ` is a quadratic in `e^{±(ρ−ρ_end)}`.
//!
//! Time stepping is the linearly implicit two-stage ROS2 scheme with a
//! banded local Jacobian, step-doubling error control and a
//! `dt ≤ κ(T−t)` cap.

use std::fmt;

use thiserror::Error;

use crate::banded::BandMatrix;
use crate::calabi::{
    log_volume_form, stencil, volume_derivatives, AnsatzKind, AnsatzModel, GeometryError, Grid,
    Profile, GHOSTS, STENCIL_HALF,
};
use crate::fd;
use crate::scalar::Real;

const BAND: usize = STENCIL_HALF;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("collapsing condition does not hold: {0}")]
    CollapsingResidual(String),
    #[error("singular time is not finite")]
    InfiniteSingularTime,
    #[error("invalid step control: {0}")]
    InvalidControl(String),
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("singular Jacobian system at row {0}")]
    SingularSystem(usize),
}

/// The additive gauge `c(t)` in `∂_t u = G + c(t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gauge {
    /// Unnormalized flow, `c ≡ 0`.
    Zero,
    Constant(f64),
    /// `c(t) = −r·log(T−t)`, which turns `u − û` into the potential of the
    /// parabolic Monge–Ampère form.
    Normalized,
}

impl Gauge {
    pub fn value<S: Real>(&self, t: S, singular_time: S, fiber_dim: usize) -> S {
        match self {
            Gauge::Zero => S::zero(),
            Gauge::Constant(c) => S::lit(*c),
            Gauge::Normalized => -S::from_usize_lossy(fiber_dim) * (singular_time - t).ln(),
        }
    }
}

impl fmt::Display for Gauge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Gauge::Zero => f.write_str("zero"),
            Gauge::Constant(c) => write!(f, "constant:{c}"),
            Gauge::Normalized => f.write_str("normalized"),
        }
    }
}

impl std::str::FromStr for Gauge {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "zero" => Ok(Gauge::Zero),
            "normalized" => Ok(Gauge::Normalized),
            other => other
                .strip_prefix("constant:")
                .and_then(|v| v.trim().parse().ok())
                .map(Gauge::Constant)
                .ok_or_else(|| format!("unknown gauge `{other}`")),
        }
    }
}

/// Class data the integrator needs, already checked by the cohomology
/// ledger and converted to floating point.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassData<S> {
    /// `None` when the singular time is infinite.
    pub singular_time: Option<S>,
    /// Whether `[ω₀] − T·c₁ − [π*ω_Σ]` vanished exactly.
    pub residual_zero: bool,
    /// Momentum endpoints `(a₀, b₀)` of the initial class.
    pub endpoints: (S, S),
    /// Pairings `(α, β)`: `a_t = a₀ − αt`, `b_t = b₀ − βt`.
    pub rates: (S, S),
    /// Base eigenvalue of `π*ω_Σ`.
    pub sigma: S,
    /// Fiber dimension `r`.
    pub fiber_dim: usize,
}

/// A fully specified flow experiment.
#[derive(Debug, Clone)]
pub struct FlowProblem<S> {
    pub model: AnsatzModel,
    pub initial: Profile<S>,
    pub singular_time: S,
    pub endpoints: (S, S),
    pub rates: (S, S),
    pub sigma: S,
    pub fiber_dim: usize,
}

impl<S: Real> FlowProblem<S> {
    /// Refuses misconfigured experiments: infinite `T`, nonzero collapsing
    /// residual, pairings that disagree with the model geometry, or initial
    /// data whose momenta do not match the class.
    pub fn new(
        model: AnsatzModel,
        initial: Profile<S>,
        classes: &ClassData<S>,
    ) -> Result<Self, FlowError> {
        if !classes.residual_zero {
            return Err(FlowError::CollapsingResidual(
                "[ω₀] − T·c₁ ≠ [π*ω_Σ]".into(),
            ));
        }
        let singular_time = classes
            .singular_time
            .ok_or(FlowError::InfiniteSingularTime)?;
        if classes.fiber_dim != 1 {
            return Err(FlowError::InvalidProblem(format!(
                "fiber dimension {} unsupported by the radial geometry",
                classes.fiber_dim
            )));
        }
        let (alpha, beta) = model.endpoint_rates();
        let tol = S::lit(1e-12);
        if (classes.rates.0 - S::lit(alpha)).abs() > tol
            || (classes.rates.1 - S::lit(beta)).abs() > tol
        {
            return Err(FlowError::InvalidProblem(format!(
                "class rates ({}, {}) differ from the model pairings ({alpha}, {beta})",
                classes.rates.0, classes.rates.1
            )));
        }
        if model.kind == AnsatzKind::Product && initial.base_level().is_none() {
            return Err(FlowError::InvalidProblem(
                "product model needs a base level".into(),
            ));
        }
        initial.check_positivity()?;
        let (a, b) = initial.momenta()?;
        let scale = classes.endpoints.1.abs().max(S::one());
        let mtol = S::lit(1e-6) * scale;
        if (a - classes.endpoints.0).abs() > mtol || (b - classes.endpoints.1).abs() > mtol {
            return Err(FlowError::InvalidProblem(format!(
                "initial momenta ({a}, {b}) do not match the class endpoints ({}, {})",
                classes.endpoints.0, classes.endpoints.1
            )));
        }
        Ok(Self {
            model,
            initial,
            singular_time,
            endpoints: classes.endpoints,
            rates: classes.rates,
            sigma: classes.sigma,
            fiber_dim: classes.fiber_dim,
        })
    }

    /// Class-predicted `(a_t, b_t)`.
    pub fn predicted_endpoints(&self, t: S) -> (S, S) {
        (
            self.endpoints.0 - self.rates.0 * t,
            self.endpoints.1 - self.rates.1 * t,
        )
    }

    pub fn grid(&self) -> &Grid<S> {
        self.initial.grid()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepControl<S> {
    pub dt_max: S,
    pub safety: S,
    /// Target local error in `log u″` per step.
    pub tol: S,
    /// Integration halts at `t = T − eps_stop`.
    pub eps_stop: S,
    /// `dt ≤ kappa·(T − t)`.
    pub kappa: S,
    /// Smallest step before the run is declared singular.
    pub dt_floor: S,
    /// Hook cadence in accepted steps.
    pub cadence: usize,
    pub gauge: Gauge,
    pub max_steps: usize,
}

impl<S: Real> Default for StepControl<S> {
    fn default() -> Self {
        Self {
            dt_max: S::lit(1e-2),
            safety: S::lit(0.9),
            tol: S::lit(1e-7),
            eps_stop: S::lit(1e-4),
            kappa: S::lit(0.05),
            dt_floor: S::lit(1e-13),
            cadence: 1,
            gauge: Gauge::Zero,
            max_steps: 1_000_000,
        }
    }
}

impl<S: Real> StepControl<S> {
    pub fn validate(&self) -> Result<(), FlowError> {
        let pos = |v: S, name: &str| {
            if v > S::zero() && v.is_finite() {
                Ok(())
            } else {
                Err(FlowError::InvalidControl(format!(
                    "{name} must be positive, got {v}"
                )))
            }
        };
        pos(self.dt_max, "dt_max")?;
        pos(self.safety, "safety")?;
        pos(self.tol, "tol")?;
        pos(self.eps_stop, "eps_stop")?;
        pos(self.kappa, "kappa")?;
        pos(self.dt_floor, "dt_floor")?;
        if self.eps_stop < S::lit(10.0) * self.dt_floor {
            return Err(FlowError::InvalidControl(format!(
                "eps_stop = {} is below 10 × dt_floor = {}",
                self.eps_stop,
                S::lit(10.0) * self.dt_floor
            )));
        }
        if self.cadence == 0 {
            return Err(FlowError::InvalidControl("cadence must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// A snapshot of the flow.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowState<S> {
    pub t: S,
    pub profile: Profile<S>,
    /// `(a_t, b_t)` from class arithmetic.
    pub predicted: (S, S),
}

impl<S: Real> FlowState<S> {
    /// Endpoints read off the profile (left momentum plus fiber area).
    pub fn measured_endpoints(&self) -> Result<(S, S), GeometryError> {
        self.profile.momenta()
    }

    /// Instantaneous endpoint drifts `(ȧ, ḃ)` measured from the solution:
    /// `∂_t u′ = G′`, evaluated at the outer nodes.
    pub fn endpoint_velocities(&self, model: &AnsatzModel) -> (S, S) {
        let (g1, _) = volume_derivatives(model, &self.profile.jets());
        (g1[0], g1[g1.len() - 1])
    }
}

/// Linear ghost extrapolation: ghost `g` (1..=3) on each side is
/// `Σ_j w[g][j]·ψ_j + offset[g]` over the three outermost interior nodes.
#[derive(Debug, Clone)]
struct TailModel<S> {
    weights: [[S; 3]; 3],
    offsets: [S; 3],
}

impl<S: Real> TailModel<S> {
    fn new(h: S) -> Self {
        let hf = h.to_f64_lossy();
        let nodes: Vec<f64> = (0..3).map(|j| (j as f64 * hf).exp()).collect();
        let mut weights = [[S::zero(); 3]; 3];
        let mut offsets = [S::zero(); 3];
        for g in 1..=3 {
            let l = fd::lagrange((-(g as f64) * hf).exp(), &nodes);
            let moment: f64 = l.iter().enumerate().map(|(j, w)| j as f64 * w).sum();
            for j in 0..3 {
                weights[g - 1][j] = S::lit(l[j]);
            }
            offsets[g - 1] = S::lit(-(g as f64) * hf - hf * moment);
        }
        Self { weights, offsets }
    }

    fn extend(&self, interior: &[S]) -> Vec<S> {
        let n = interior.len();
        let mut ext = vec![S::zero(); n + 2 * GHOSTS];
        ext[GHOSTS..GHOSTS + n].copy_from_slice(interior);
        for g in 1..=GHOSTS {
            let w = &self.weights[g - 1];
            let left: S = (0..3).map(|j| w[j] * interior[j]).sum();
            let right: S = (0..3).map(|j| w[j] * interior[n - 1 - j]).sum();
            ext[GHOSTS - g] = left + self.offsets[g - 1];
            ext[GHOSTS + n - 1 + g] = right + self.offsets[g - 1];
        }
        ext
    }
}

/// Owns the discretisation data shared by all steps of one problem.
#[derive(Debug, Clone)]
pub struct Integrator<S> {
    problem: FlowProblem<S>,
    ctrl: StepControl<S>,
    tails: TailModel<S>,
    w1: Vec<S>,
    w2: Vec<S>,
}

/// One evaluation of the semi-discrete system.
struct Evaluation<S> {
    f: Vec<S>,
    profile: Profile<S>,
}

impl<S: Real> Integrator<S> {
    pub fn new(problem: FlowProblem<S>, ctrl: StepControl<S>) -> Result<Self, FlowError> {
        ctrl.validate()?;
        let h = problem.grid().spacing();
        Ok(Self {
            tails: TailModel::new(h),
            w1: stencil(1, h),
            w2: stencil(2, h),
            problem,
            ctrl,
        })
    }

    pub fn problem(&self) -> &FlowProblem<S> {
        &self.problem
    }

    pub fn control(&self) -> &StepControl<S> {
        &self.ctrl
    }

    /// The state at `t = 0` in the solver's own representation (ghosts from
    /// the tail model, `u′` rebuilt by quadrature).
    pub fn initial_state(&self) -> Result<FlowState<S>, FlowError> {
        let y = self.unknowns(&self.problem.initial);
        self.state_from(S::zero(), &y)
    }

    fn unknowns(&self, profile: &Profile<S>) -> Vec<S> {
        let mut y: Vec<S> = profile
            .interior_psi()
            .iter()
            .map(|p| *p + profile.log_scale())
            .collect();
        y.push(profile.u()[0]);
        y
    }

    fn profile_from(&self, t: S, y: &[S]) -> Result<Profile<S>, GeometryError> {
        let n = y.len() - 1;
        let psi = self.tails.extend(&y[..n]);
        let (a_t, _) = self.problem.predicted_endpoints(t);
        let p = Profile::from_log_density(*self.problem.grid(), psi, a_t, y[n])?;
        Ok(match self.problem.initial.base_level() {
            Some(level) => p.with_base_level(level),
            None => p,
        })
    }

    fn state_from(&self, t: S, y: &[S]) -> Result<FlowState<S>, FlowError> {
        let profile = self.profile_from(t, y)?;
        Ok(FlowState {
            t,
            profile,
            predicted: self.problem.predicted_endpoints(t),
        })
    }

    fn evaluate(&self, t: S, y: &[S]) -> Result<Evaluation<S>, GeometryError> {
        let profile = self.profile_from(t, y)?;
        let jets = profile.jets();
        let (_, g2) = volume_derivatives(&self.problem.model, &jets);
        let n = g2.len();
        let mut f = Vec::with_capacity(n + 1);
        for i in 0..n {
            f.push(g2[i] / jets.d2[i]);
        }
        let g0 = log_volume_form(&self.problem.model, &profile)?[0];
        f.push(
            g0 + self
                .ctrl
                .gauge
                .value(t, self.problem.singular_time, self.problem.fiber_dim),
        );
        if f.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::Positivity {
                node: 0,
                what: "non-finite flow velocity".into(),
            });
        }
        Ok(Evaluation { f, profile })
    }

    /// Local Jacobian of `e^{−ψ}G″` in `ψ`, ignoring the nonlocal
    /// dependence of `u′` on `ψ`.
    fn jacobian(&self, ev: &Evaluation<S>) -> BandMatrix<S> {
        let jets = ev.profile.jets();
        let (_, g2) = volume_derivatives(&self.problem.model, &jets);
        let n = g2.len();
        let bundle = self.problem.model.kind == AnsatzKind::ProjectiveBundleK1;
        let m = S::from_usize_lossy(self.problem.model.n - 1);
        let two = S::lit(2.0);
        let mut jac = BandMatrix::zeros(n, BAND, BAND);
        for i in 0..n {
            let inv = S::one() / jets.d2[i];
            let (c1, c0) = if bundle {
                let q = jets.d2[i] / jets.d1[i];
                (m * q, m * (q * jets.psi1[i] - two * q * q))
            } else {
                (S::zero(), S::zero())
            };
            let mut row = [S::zero(); 2 * BAND + 1];
            for k in 0..=2 * BAND {
                row[k] = inv * (self.w2[k] + c1 * self.w1[k]);
            }
            row[BAND] = row[BAND] + inv * c0 - inv * g2[i];
            for (k, w) in row.iter().enumerate() {
                let col = i as isize + k as isize - BAND as isize;
                if col < 0 {
                    let g = (-col) as usize;
                    for j in 0..3 {
                        jac.add(i, j, *w * self.tails.weights[g - 1][j]);
                    }
                } else if col >= n as isize {
                    let g = (col - n as isize + 1) as usize;
                    for j in 0..3 {
                        jac.add(i, n - 1 - j, *w * self.tails.weights[g - 1][j]);
                    }
                } else {
                    jac.add(i, col as usize, *w);
                }
            }
        }
        jac
    }

    /// One ROS2 step of size `tau` from `(t, y)`.
    fn ros2(&self, t: S, y: &[S], tau: S) -> Result<Vec<S>, FlowError> {
        let gamma = S::one() + S::one() / S::lit(2.0).sqrt();
        let ev = self.evaluate(t, y)?;
        let n = y.len() - 1;
        let jac = self.jacobian(&ev);
        let mut w = BandMatrix::identity(n, BAND, BAND);
        for i in 0..n {
            let lo = i.saturating_sub(BAND);
            let hi = (i + BAND).min(n - 1);
            for j in lo..=hi {
                w.add(i, j, -gamma * tau * jac.get(i, j));
            }
        }
        w.factor().map_err(FlowError::SingularSystem)?;
        let solve = |rhs: &[S]| {
            let mut out = rhs.to_vec();
            w.solve_in_place(&mut out[..n]);
            out
        };
        let k1 = solve(&ev.f);
        let y1: Vec<S> = y.iter().zip(&k1).map(|(a, k)| *a + tau * *k).collect();
        let ev2 = self.evaluate(t + tau, &y1)?;
        let two = S::lit(2.0);
        let r2: Vec<S> = ev2.f.iter().zip(&k1).map(|(f, k)| *f - two * *k).collect();
        let k2 = solve(&r2);
        let (c1, c2) = (S::lit(1.5), S::lit(0.5));
        Ok(y.iter()
            .zip(k1.iter().zip(&k2))
            .map(|(a, (p, q))| *a + tau * (c1 * *p + c2 * *q))
            .collect())
    }

    /// Step-doubling trial of size `tau`: returns the extrapolated solution
    /// and the scaled error estimate.
    fn trial(&self, t: S, y: &[S], tau: S) -> Result<(Vec<S>, S), FlowError> {
        let half = tau * S::lit(0.5);
        let coarse = self.ros2(t, y, tau)?;
        let mid = self.ros2(t, y, half)?;
        let fine = self.ros2(t + half, &mid, half)?;
        let n = y.len() - 1;
        let mut err = S::zero();
        for i in 0..=n {
            let scale = if i == n {
                S::one() + fine[i].abs()
            } else {
                S::one()
            };
            err = err.max((fine[i] - coarse[i]).abs() / (self.ctrl.tol * scale));
        }
        let third = S::one() / S::lit(3.0);
        let out = fine
            .iter()
            .zip(&coarse)
            .map(|(f, c)| *f + (*f - *c) * third)
            .collect();
        Ok((out, err))
    }

    /// Largest admissible step from `t`.
    fn cap(&self, t: S, proposal: S) -> S {
        let stop = self.problem.singular_time - self.ctrl.eps_stop;
        let remaining = stop - t;
        let mut dt = proposal
            .min(self.ctrl.dt_max)
            .min(self.ctrl.kappa * (self.problem.singular_time - t));
        if dt >= remaining {
            dt = remaining;
        } else if dt > remaining * S::lit(0.5) {
            // avoid a sliver step before the stop time
            dt = remaining * S::lit(0.5);
        }
        dt
    }

    /// A single fixed-size step without error control.
    pub fn step_fixed(&self, state: &FlowState<S>, dt: S) -> Result<FlowState<S>, FlowError> {
        if dt == S::zero() {
            return Ok(state.clone());
        }
        let y = self.unknowns(&state.profile);
        let (next, _) = self.trial(state.t, &y, dt)?;
        self.state_from(state.t + dt, &next)
    }

    /// One accepted adaptive step, starting from the proposal `dt`.
    pub fn advance(&self, state: &FlowState<S>, dt: S) -> Result<Advance<S>, FlowError> {
        let y = self.unknowns(&state.profile);
        let mut tau = self.cap(state.t, dt);
        let mut rejected = 0usize;
        loop {
            if tau < self.ctrl.dt_floor {
                return Ok(Advance::Underflow { dt: tau, rejected });
            }
            let outcome = self.trial(state.t, &y, tau).and_then(|(next, err)| {
                if err <= S::one() {
                    let st = self.state_from(state.t + tau, &next)?;
                    Ok((Some(st), err))
                } else {
                    Ok((None, err))
                }
            });
            match outcome {
                Ok((Some(next), err)) => {
                    let grow = if err > S::zero() {
                        (self.ctrl.safety * err.powf(-S::one() / S::lit(3.0))).min(S::lit(2.0))
                    } else {
                        S::lit(2.0)
                    };
                    return Ok(Advance::Accepted {
                        state: next,
                        dt: tau,
                        next_dt: tau * grow.max(S::lit(0.2)),
                        rejected,
                    });
                }
                Ok((None, err)) => {
                    let shrink =
                        (self.ctrl.safety * err.powf(-S::one() / S::lit(3.0))).max(S::lit(0.2));
                    tau = tau * shrink.min(S::lit(0.5));
                }
                Err(FlowError::Geometry(_)) | Err(FlowError::SingularSystem(_)) => {
                    tau = tau * S::lit(0.5);
                }
                Err(e) => return Err(e),
            }
            rejected += 1;
        }
    }
}

#[derive(Debug, Clone)]
pub enum Advance<S> {
    Accepted {
        state: FlowState<S>,
        dt: S,
        next_dt: S,
        rejected: usize,
    },
    Underflow {
        dt: S,
        rejected: usize,
    },
}

/// `∂_t u = G + c(t)` on the grid.
pub fn rhs<S: Real>(
    problem: &FlowProblem<S>,
    state: &FlowState<S>,
    gauge: Gauge,
) -> Result<Vec<S>, GeometryError> {
    let c = gauge.value(state.t, problem.singular_time, problem.fiber_dim);
    Ok(log_volume_form(&problem.model, &state.profile)?
        .into_iter()
        .map(|g| g + c)
        .collect())
}

/// A single step of size `dt` (no adaptation, no `κ(T−t)` cap).
pub fn step<S: Real>(
    problem: &FlowProblem<S>,
    state: &FlowState<S>,
    ctrl: &StepControl<S>,
    dt: S,
) -> Result<FlowState<S>, FlowError> {
    let stop = problem.singular_time - ctrl.eps_stop;
    if state.t + dt > stop {
        return Err(FlowError::InvalidControl(format!(
            "step to {} passes the stop time {stop}",
            state.t + dt
        )));
    }
    Integrator::new(problem.clone(), ctrl.clone())?.step_fixed(state, dt)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Termination {
    /// Reached `t = T − ε_stop`.
    Completed,
    /// The step size fell below the floor.
    SingularityReached { t: f64, dt: f64 },
    /// Step budget exhausted.
    StepLimit,
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Termination::Completed => write!(f, "completed"),
            Termination::SingularityReached { t, dt } => {
                write!(f, "singularity reached at t = {t} (dt = {dt:e})")
            }
            Termination::StepLimit => write!(f, "step limit"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome<S, R> {
    pub records: Vec<R>,
    pub final_state: FlowState<S>,
    pub termination: Termination,
    pub accepted: usize,
    pub rejected: usize,
    /// Minima over every accepted state of `u′` and `u″`.
    pub min_du: S,
    pub min_d2u: S,
}

/// Integrates from `t = 0` to `T − ε_stop`, calling `hook` on the initial
/// state, every `cadence` accepted steps, and the final state.
pub fn run<S, R, H>(
    problem: &FlowProblem<S>,
    ctrl: &StepControl<S>,
    hook: H,
) -> Result<RunOutcome<S, R>, FlowError>
where
    S: Real,
    H: FnMut(&FlowState<S>) -> R,
{
    let integrator = Integrator::new(problem.clone(), ctrl.clone())?;
    let start = integrator.initial_state()?;
    run_from(&integrator, start, hook)
}

pub fn run_from<S, R, H>(
    integrator: &Integrator<S>,
    start: FlowState<S>,
    mut hook: H,
) -> Result<RunOutcome<S, R>, FlowError>
where
    S: Real,
    H: FnMut(&FlowState<S>) -> R,
{
    let ctrl = integrator.control();
    let stop = integrator.problem().singular_time - ctrl.eps_stop;
    let mut out = RunOutcome {
        records: Vec::new(),
        final_state: start.clone(),
        termination: Termination::Completed,
        accepted: 0,
        rejected: 0,
        min_du: S::infinity(),
        min_d2u: S::infinity(),
    };
    if start.t >= stop {
        return Ok(out);
    }
    let track = |out: &mut RunOutcome<S, R>, st: &FlowState<S>| {
        for v in st.profile.du() {
            out.min_du = out.min_du.min(*v);
        }
        for v in st.profile.d2u() {
            out.min_d2u = out.min_d2u.min(v);
        }
    };
    track(&mut out, &start);
    out.records.push(hook(&start));
    let mut state = start;
    let mut dt = ctrl
        .dt_max
        .min(ctrl.kappa * (integrator.problem().singular_time - state.t))
        * S::lit(0.1);
    let mut since_hook = 0usize;
    let mut hooked_last = true;
    while state.t < stop {
        if out.accepted >= ctrl.max_steps {
            out.termination = Termination::StepLimit;
            break;
        }
        match integrator.advance(&state, dt)? {
            Advance::Accepted {
                state: next,
                next_dt,
                rejected,
                ..
            } => {
                out.accepted += 1;
                out.rejected += rejected;
                dt = next_dt;
                state = next;
                // landing exactly on the stop time
                if (stop - state.t).abs() <= S::epsilon() * S::lit(16.0) * stop.abs().max(S::one())
                {
                    state.t = stop;
                }
                track(&mut out, &state);
                since_hook += 1;
                hooked_last = false;
                if since_hook >= ctrl.cadence {
                    out.records.push(hook(&state));
                    since_hook = 0;
                    hooked_last = true;
                }
            }
            Advance::Underflow { dt: tiny, rejected } => {
                out.rejected += rejected;
                out.termination = Termination::SingularityReached {
                    t: state.t.to_f64_lossy(),
                    dt: tiny.to_f64_lossy(),
                };
                break;
            }
        }
    }
    if !hooked_last {
        out.records.push(hook(&state));
    }
    log::info!(
        "flow: {} at t = {} after {} accepted / {} rejected steps",
        out.termination,
        state.t,
        out.accepted,
        out.rejected
    );
    out.final_state = state;
    Ok(out)
}

/// Initial data of the shipped experiments.
pub mod initial_data {
    use super::*;

    /// `u₀ = aρ + (b − a)·log(1 + e^ρ)` on the bundle.
    pub fn bundle<S: Real>(grid: Grid<S>, a: S, b: S) -> Result<Profile<S>, GeometryError> {
        Profile::from_fn(
            grid,
            crate::calabi::closed_form::fubini_study(a, b - a, S::zero()),
        )
    }

    /// `u₀ = λ·log(1 + e^ρ)` on the fiber, flat base of eigenvalue `x`.
    pub fn product<S: Real>(grid: Grid<S>, x: S, lambda: S) -> Result<Profile<S>, GeometryError> {
        Ok(Profile::from_fn(
            grid,
            crate::calabi::closed_form::fubini_study(S::zero(), lambda, S::zero()),
        )?
        .with_base_level(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn product_problem(n: usize) -> FlowProblem<f64> {
        let grid = Grid::new(n, 12.0).unwrap();
        let initial = initial_data::product(grid, 1.0, 2.0).unwrap();
        let classes = ClassData {
            singular_time: Some(1.0),
            residual_zero: true,
            endpoints: (0.0, 2.0),
            rates: (0.0, 2.0),
            sigma: 1.0,
            fiber_dim: 1,
        };
        FlowProblem::new(AnsatzModel::product(2).unwrap(), initial, &classes).unwrap()
    }

    #[test]
    fn tail_model_is_exact_on_fs_profile() {
        let grid: Grid<f64> = Grid::new(64, 10.0).unwrap();
        let p = Profile::from_fn(
            grid,
            crate::calabi::closed_form::fubini_study(0.0, 1.5, 0.2),
        )
        .unwrap();
        let tails = TailModel::new(grid.spacing());
        let ext = tails.extend(p.interior_psi());
        for (a, b) in ext.iter().zip(p.psi_extended()) {
            assert!((a - b).abs() < 1e-11, "{a} {b}");
        }
    }

    #[test]
    fn zero_step_is_identity() {
        let prob = product_problem(64);
        let it = Integrator::new(prob, StepControl::default()).unwrap();
        let s0 = it.initial_state().unwrap();
        assert_eq!(it.step_fixed(&s0, 0.0).unwrap(), s0);
    }

    #[test]
    fn refuses_nonzero_residual() {
        let grid = Grid::new(32, 10.0).unwrap();
        let initial = initial_data::product(grid, 1.0, 2.0).unwrap();
        let classes = ClassData {
            singular_time: Some(1.0),
            residual_zero: false,
            endpoints: (0.0, 2.0),
            rates: (0.0, 2.0),
            sigma: 1.0,
            fiber_dim: 1,
        };
        let err =
            FlowProblem::new(AnsatzModel::product(2).unwrap(), initial, &classes).unwrap_err();
        assert!(matches!(err, FlowError::CollapsingResidual(_)));
    }

    #[test]
    fn started_past_stop_is_empty() {
        let prob = product_problem(64);
        let ctrl = StepControl::default();
        let it = Integrator::new(prob, ctrl).unwrap();
        let mut s = it.initial_state().unwrap();
        s.t = 1.0 - 1e-5;
        let out = run_from(&it, s, |st| st.t).unwrap();
        assert!(out.records.is_empty());
        assert_eq!(out.termination, Termination::Completed);
    }

    #[test]
    fn gauge_parsing() {
        assert_eq!("zero".parse::<Gauge>().unwrap(), Gauge::Zero);
        assert_eq!("normalized".parse::<Gauge>().unwrap(), Gauge::Normalized);
        assert_eq!(
            "constant: 1.5".parse::<Gauge>().unwrap(),
            Gauge::Constant(1.5)
        );
        assert!("other".parse::<Gauge>().is_err());
    }
}
