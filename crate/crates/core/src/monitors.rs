//! Per-snapshot diagnostics: the volume ratio, the fiber-normalized
//! potential, the barrier quantity `Q`, trace and curvature sups, the Ricci
//! upper-bound margin and metric equivalence against the reference metric.
//!
//! Everything is reconstructed from the evolving profile and the initial
//! data. The reference potential is
//! `û_t = ((T−t)·u₀ + t·σ̂ρ)/T`, with `σ̂` the radial slope of the
//! `π*ω_Σ` potential, and `φ_t = u_t − û_t`.

use thiserror::Error;

use crate::calabi::{
    fiber_diameter, integrate, log_volume_form, metric_eigen, midpoint, ricci_eigenvalues,
    riemann_norm, scalar_curvature, traces, trapezoid, AnsatzKind, AnsatzModel, GeometryError,
    MetricEigen, Profile, ReferenceMetricEval, VolumeDatum,
};
use crate::flow::{FlowProblem, FlowState};
use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MonitorError {
    #[error("t = {t} is not before the singular time {singular_time}")]
    PastSingularTime { t: f64, singular_time: f64 },
    #[error("invalid monitor configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Constants of the Ricci upper bound `Ric ≤ B·ω₀` and of the barrier `Q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BConfig<S> {
    pub b: S,
    pub a: S,
}

impl<S: Real> BConfig<S> {
    pub fn new(b: S, a: S) -> Result<Self, MonitorError> {
        if !(b > S::zero()) || !(a > S::zero()) {
            return Err(MonitorError::Config(format!("B = {b} and A = {a} must be positive")));
        }
        Ok(Self { b, a })
    }
}

/// `A = 2T(C̃ + 2)`, so that `C̃ − A/(2T) = −2 < −1`.
pub fn default_barrier_constant<S: Real>(curvature_bound: S, singular_time: S) -> S {
    S::lit(2.0) * singular_time * (curvature_bound + S::lit(2.0))
}

/// Estimate of `C̃` from the initial metric: the sup of `|Rm|`.
pub fn curvature_constant<S: Real>(model: &AnsatzModel, omega0: &Profile<S>) -> Result<S, MonitorError> {
    Ok(riemann_norm(model, omega0)?.sup())
}

/// Quadrature rule used for fiber integrals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Quadrature {
    /// Sixth-order cumulative rule shared with the geometry module.
    #[default]
    HighOrder,
    Trapezoid,
    Midpoint,
}

/// Everything about the initial data the monitors need.
#[derive(Debug, Clone)]
pub struct MonitorContext<S> {
    pub model: AnsatzModel,
    pub omega0: Profile<S>,
    pub omega0_eigen: MetricEigen<S>,
    pub volume: VolumeDatum<S>,
    pub sigma: S,
    pub singular_time: S,
    pub fiber_dim: usize,
    pub bcfg: BConfig<S>,
    /// Tail masses of `u₀″` beyond the grid.
    tails0: (S, S),
}

impl<S: Real> MonitorContext<S> {
    pub fn new(problem: &FlowProblem<S>, omega0: Profile<S>, bcfg: BConfig<S>) -> Result<Self, MonitorError> {
        let model = problem.model;
        let omega0_eigen = metric_eigen(&model, &omega0)?;
        let volume = VolumeDatum::new(&model, &omega0, problem.sigma, problem.singular_time);
        let jets = omega0.jets();
        let n = jets.d2.len();
        let tails0 = (jets.d2[0] / jets.psi1[0], -jets.d2[n - 1] / jets.psi1[n - 1]);
        Ok(Self {
            model,
            omega0,
            omega0_eigen,
            volume,
            sigma: problem.sigma,
            singular_time: problem.singular_time,
            fiber_dim: problem.fiber_dim,
            bcfg,
            tails0,
        })
    }

    fn gap(&self, t: S) -> Result<S, MonitorError> {
        let gap = self.singular_time - t;
        if !(gap > S::zero()) || !self.singular_time.is_finite() {
            return Err(MonitorError::PastSingularTime {
                t: t.to_f64_lossy(),
                singular_time: self.singular_time.to_f64_lossy(),
            });
        }
        Ok(gap)
    }

    /// `û_t` on the grid.
    pub fn reference_potential(&self, t: S) -> Vec<S> {
        let tt = self.singular_time;
        let slope = self.volume.sigma_slope;
        self.omega0
            .rho()
            .iter()
            .zip(self.omega0.u())
            .map(|(r, u0)| ((tt - t) * *u0 + t * slope * *r) / tt)
            .collect()
    }

    /// `ĥ_t` eigenvalues.
    pub fn reference_metric(&self, t: S) -> ReferenceMetricEval<S> {
        let sigma = match self.model.kind {
            AnsatzKind::ProjectiveBundleK1 => self.sigma,
            AnsatzKind::Product => self.omega0_eigen.base[0],
        };
        ReferenceMetricEval::new(&self.omega0_eigen, sigma, self.singular_time, t)
    }

    /// Eigenvalues of `π*ω_Σ` (no fiber part).
    pub fn sigma_metric(&self) -> MetricEigen<S> {
        let len = self.omega0_eigen.fiber.len();
        let base = match self.model.kind {
            AnsatzKind::ProjectiveBundleK1 => self.sigma,
            AnsatzKind::Product => self.omega0_eigen.base[0],
        };
        MetricEigen { base: vec![base; len], fiber: vec![S::zero(); len] }
    }

    /// Weighted fiber integral `∫ f·u₀″ dρ / ∫ u₀″ dρ`, with `f` extended
    /// by its end values over the tails.
    pub fn fiber_mean(&self, f: &[S], rule: Quadrature) -> S {
        let w = self.omega0.d2u();
        let h = self.omega0.grid().spacing();
        let fw: Vec<S> = f.iter().zip(&w).map(|(a, b)| *a * *b).collect();
        let quad = |v: &[S]| match rule {
            Quadrature::HighOrder => integrate(v, h),
            Quadrature::Trapezoid => trapezoid(v, h),
            Quadrature::Midpoint => midpoint(v, h),
        };
        let n = f.len();
        let (ml, mr) = self.tails0;
        let num = quad(&fw) + f[0] * ml + f[n - 1] * mr;
        let den = quad(&w) + ml + mr;
        num / den
    }
}

/// `φ_t = u_t − û_t`.
pub fn potential<S: Real>(ctx: &MonitorContext<S>, state: &FlowState<S>) -> Vec<S> {
    state.profile.u().iter().zip(ctx.reference_potential(state.t)).map(|(u, r)| *u - r).collect()
}

/// `ω_t^n / ((T−t)^r Ω)` per node.
pub fn volume_ratio<S: Real>(ctx: &MonitorContext<S>, state: &FlowState<S>) -> Result<Vec<S>, MonitorError> {
    let gap = ctx.gap(state.t)?;
    let g = log_volume_form(&ctx.model, &state.profile)?;
    let shift = S::from_usize_lossy(ctx.fiber_dim) * gap.ln();
    Ok(g.iter().zip(&ctx.volume.log_omega).map(|(g, l)| (*g - *l - shift).exp()).collect())
}

/// `Φ_t`, the `ω₀`-weighted fiber average of `φ_t`.
pub fn fiber_average<S: Real>(ctx: &MonitorContext<S>, state: &FlowState<S>, rule: Quadrature) -> S {
    ctx.fiber_mean(&potential(ctx, state), rule)
}

/// `(φ_t − Φ_t)/(T−t)` per node.
pub fn normalized_potential<S: Real>(
    ctx: &MonitorContext<S>,
    state: &FlowState<S>,
) -> Result<Vec<S>, MonitorError> {
    let gap = ctx.gap(state.t)?;
    let phi = potential(ctx, state);
    let avg = ctx.fiber_mean(&phi, Quadrature::HighOrder);
    Ok(phi.iter().map(|p| (*p - avg) / gap).collect())
}

/// Per-node `Q` and the index of its maximum.
#[derive(Debug, Clone, PartialEq)]
pub struct BarrierQ<S> {
    pub values: Vec<S>,
    pub argmax: usize,
}

/// `Q = log((T−t)·Tr_{ω_t}ω₀) − A·(φ_t − Φ_t)/(T−t)`.
pub fn barrier_q<S: Real>(
    ctx: &MonitorContext<S>,
    state: &FlowState<S>,
    cfg: &BConfig<S>,
) -> Result<BarrierQ<S>, MonitorError> {
    let gap = ctx.gap(state.t)?;
    let eig = metric_eigen(&ctx.model, &state.profile)?;
    let (tr0, _) = traces(&ctx.model, &eig, &ctx.omega0_eigen);
    let npot = normalized_potential(ctx, state)?;
    let values: Vec<S> = tr0.iter().zip(&npot).map(|(tr, np)| (gap * *tr).ln() - cfg.a * *np).collect();
    let argmax = argmax(&values);
    Ok(BarrierQ { values, argmax })
}

fn argmax<S: Real>(v: &[S]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// `max(ν − B·λ₀)` over nodes and directions; `≤ 0` means `Ric ≤ B·ω₀`.
pub fn ricci_bound_margin<S: Real>(
    ctx: &MonitorContext<S>,
    state: &FlowState<S>,
    cfg: &BConfig<S>,
) -> Result<S, MonitorError> {
    let ric = ricci_eigenvalues(&ctx.model, &state.profile)?;
    let w0 = &ctx.omega0_eigen;
    let mut margin = S::neg_infinity();
    for i in 0..ric.fiber.len() {
        margin = margin.max(ric.fiber[i] - cfg.b * w0.fiber[i]);
        margin = margin.max(ric.base[i] - cfg.b * w0.base[i]);
    }
    Ok(margin)
}

/// `(c_low, c_high)` with `c_low·ĥ_t ≤ ω_t ≤ c_high·ĥ_t`.
pub fn metric_equivalence_check<S: Real>(
    ctx: &MonitorContext<S>,
    state: &FlowState<S>,
) -> Result<(S, S), MonitorError> {
    ctx.gap(state.t)?;
    let eig = metric_eigen(&ctx.model, &state.profile)?;
    let reference = ctx.reference_metric(state.t).eigen;
    Ok(equivalence_constants(&eig, &reference))
}

/// Extreme eigenvalue ratios of `omega` against `reference`.
pub fn equivalence_constants<S: Real>(omega: &MetricEigen<S>, reference: &MetricEigen<S>) -> (S, S) {
    let mut lo = S::infinity();
    let mut hi = S::zero();
    for (w, r) in omega.base.iter().zip(&reference.base).chain(omega.fiber.iter().zip(&reference.fiber)) {
        let q = *w / *r;
        lo = lo.min(q);
        hi = hi.max(q);
    }
    (lo, hi)
}

/// One row of the trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct MonitorRecord<S> {
    pub t: S,
    pub diam_fiber: S,
    pub vr_sup: S,
    pub vr_inf: S,
    /// Sup of `|φ_t − Φ_t|/(T−t)`.
    pub npot_sup: S,
    pub npot_inf: S,
    pub trace0_scaled_sup: S,
    pub trace0_scaled_inf: S,
    pub trace_sigma_sup: S,
    pub trace_sigma_inf: S,
    pub q_sup: S,
    pub q_inf: S,
    pub q_argmax: usize,
    pub r_sup: S,
    pub rm_sup: S,
    pub ricci_margin: S,
    pub hypothesis_ok: bool,
    pub c_low: S,
    pub c_high: S,
    /// Measured momentum endpoints.
    pub a_meas: S,
    pub b_meas: S,
}

/// Column names of the trajectory CSV, in order.
pub const CSV_COLUMNS: [&str; 12] = [
    "t",
    "diam_fiber",
    "vr_sup",
    "vr_inf",
    "npot_sup",
    "trace0_scaled_sup",
    "trace_sigma_sup",
    "Q_sup",
    "R_sup",
    "Rm_sup",
    "ricci_margin",
    "hypothesis_ok",
];

impl<S: Real> MonitorRecord<S> {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.t,
            self.diam_fiber,
            self.vr_sup,
            self.vr_inf,
            self.npot_sup,
            self.trace0_scaled_sup,
            self.trace_sigma_sup,
            self.q_sup,
            self.r_sup,
            self.rm_sup,
            self.ricci_margin,
            u8::from(self.hypothesis_ok)
        )
    }
}

fn sup_inf<S: Real>(v: &[S]) -> (S, S) {
    v.iter().fold((S::neg_infinity(), S::infinity()), |(hi, lo), x| (hi.max(*x), lo.min(*x)))
}

/// Stateful observer: evaluates a full record per snapshot and latches the
/// Ricci hypothesis flag after its first violation.
#[derive(Debug, Clone)]
pub struct Monitor<S> {
    pub ctx: MonitorContext<S>,
    hypothesis_ok: bool,
    first_violation: Option<S>,
}

impl<S: Real> Monitor<S> {
    pub fn new(ctx: MonitorContext<S>) -> Self {
        Self { ctx, hypothesis_ok: true, first_violation: None }
    }

    pub fn first_violation(&self) -> Option<S> {
        self.first_violation
    }

    pub fn observe(&mut self, state: &FlowState<S>) -> Result<MonitorRecord<S>, MonitorError> {
        let ctx = &self.ctx;
        let cfg = ctx.bcfg;
        let gap = ctx.gap(state.t)?;
        let eig = metric_eigen(&ctx.model, &state.profile)?;
        let (tr0, _) = traces(&ctx.model, &eig, &ctx.omega0_eigen);
        let (trs, _) = traces(&ctx.model, &eig, &ctx.sigma_metric());
        let scaled: Vec<S> = tr0.iter().map(|v| *v * gap).collect();
        let vr = volume_ratio(ctx, state)?;
        let npot = normalized_potential(ctx, state)?;
        let q = barrier_q(ctx, state, &cfg)?;
        let margin = ricci_bound_margin(ctx, state, &cfg)?;
        if margin > S::zero() && self.hypothesis_ok {
            self.hypothesis_ok = false;
            self.first_violation = Some(state.t);
        }
        let (c_low, c_high) = equivalence_constants(&eig, &ctx.reference_metric(state.t).eigen);
        let r = scalar_curvature(&ctx.model, &state.profile)?;
        let rm = riemann_norm(&ctx.model, &state.profile)?;
        let (a_meas, b_meas) = state.measured_endpoints()?;
        let abs_npot: Vec<S> = npot.iter().map(|v| v.abs()).collect();
        let (vr_sup, vr_inf) = sup_inf(&vr);
        let (npot_sup, _) = sup_inf(&abs_npot);
        let (_, npot_inf) = sup_inf(&npot);
        let (t0s, t0i) = sup_inf(&scaled);
        let (tss, tsi) = sup_inf(&trs);
        let (q_sup, q_inf) = sup_inf(&q.values);
        Ok(MonitorRecord {
            t: state.t,
            diam_fiber: fiber_diameter(&ctx.model, &state.profile)?,
            vr_sup,
            vr_inf,
            npot_sup,
            npot_inf,
            trace0_scaled_sup: t0s,
            trace0_scaled_inf: t0i,
            trace_sigma_sup: tss,
            trace_sigma_inf: tsi,
            q_sup,
            q_inf,
            q_argmax: q.argmax,
            r_sup: sup_inf(&r).0,
            rm_sup: rm.sup(),
            ricci_margin: margin,
            hypothesis_ok: self.hypothesis_ok,
            c_low,
            c_high,
            a_meas,
            b_meas,
        })
    }
}

/// How a series is compared against its early values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WindowRule {
    /// `max ≤ 10 × early max` (positive series).
    Multiplicative,
    /// The multiplicative rule applied to `exp` of the series:
    /// `max ≤ early max + ln 10`.
    Logarithmic,
    /// `max ≤ initial value + margin`, for series that start at a fixed
    /// reference such as `Q`.
    Additive(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowVerdict {
    pub early_max: f64,
    pub run_max: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Uniform-boundedness window: the run maximum against the maximum over
/// the first tenth of the time span.
pub fn boundedness_window(series: &[(f64, f64)], rule: WindowRule) -> Option<WindowVerdict> {
    let (t0, t1) = (series.first()?.0, series.last()?.0);
    let cut = t0 + 0.1 * (t1 - t0);
    let early_max = match rule {
        WindowRule::Additive(_) => series[0].1,
        _ => series.iter().filter(|(t, _)| *t <= cut).map(|p| p.1).fold(f64::NEG_INFINITY, f64::max),
    };
    let run_max = series.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let bound = match rule {
        WindowRule::Multiplicative => 10.0 * early_max,
        WindowRule::Logarithmic => early_max + 10f64.ln(),
        WindowRule::Additive(margin) => early_max + margin,
    };
    Some(WindowVerdict { early_max, run_max, bound, pass: run_max <= bound })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_rules() {
        let s: Vec<(f64, f64)> = (0..=100).map(|i| (i as f64 / 100.0, 1.0 + i as f64 / 100.0)).collect();
        let v = boundedness_window(&s, WindowRule::Multiplicative).unwrap();
        assert!(v.pass);
        assert!((v.early_max - 1.1).abs() < 1e-12);
        let blow: Vec<(f64, f64)> = (0..=100).map(|i| (i as f64, (i as f64).exp())).collect();
        assert!(!boundedness_window(&blow, WindowRule::Multiplicative).unwrap().pass);
        let q: Vec<(f64, f64)> = (0..=10).map(|i| (i as f64, -1.0 + 0.2 * i as f64)).collect();
        let v = boundedness_window(&q, WindowRule::Logarithmic).unwrap();
        assert!(v.pass, "{v:?}");
        assert!(boundedness_window(&[], WindowRule::Logarithmic).is_none());
        let v = boundedness_window(&q, WindowRule::Additive(1.0)).unwrap();
        assert_eq!(v.early_max, -1.0);
        assert!(!v.pass);
    }

    #[test]
    fn equivalence_with_itself() {
        let m = MetricEigen { base: vec![1.0, 2.0], fiber: vec![0.5, 0.25] };
        assert_eq!(equivalence_constants(&m, &m), (1.0, 1.0));
    }

    #[test]
    fn default_a_rule() {
        let a = default_barrier_constant(3.0, 0.5);
        assert!(3.0 - a / (2.0 * 0.5) < -1.0);
    }
}
