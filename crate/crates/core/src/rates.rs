//! Power-law exponent fits of monitored series near the singular time.
//!
//! A series `v(t)` is fitted as `v ≈ e^c (T−t)^p` by least squares of
//! `log v` against `log(T−t)`. The exponent `p` is positive for decaying
//! quantities (fiber diameter, `+1/2`) and negative for blow-up (curvature,
//! `−1` or `−2`).

use thiserror::Error;

use crate::Real;

/// Minimum number of samples a fit accepts.
pub const MIN_POINTS: usize = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("nonpositive value {value} at sample {index} (t = {t})")]
    NonPositive { index: usize, t: f64, value: f64 },
    #[error("insufficient data: {found} samples in window, need {MIN_POINTS}")]
    InsufficientData { found: usize },
    #[error("invalid fit window [{lo}, {hi}] for singular time {t_sing}")]
    InvalidWindow { lo: f64, hi: f64, t_sing: f64 },
}

/// Closed time window `[t_lo, t_hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitWindow<S> {
    pub t_lo: S,
    pub t_hi: S,
}

impl<S: Real> FitWindow<S> {
    pub fn new(t_lo: S, t_hi: S) -> Self {
        FitWindow { t_lo, t_hi }
    }

    /// Last decade of `T − t` before the stop time: `T − t ∈ [ε, 10ε]`.
    pub fn last_decade(t_sing: S, eps_stop: S) -> Self {
        Self::decade(t_sing, eps_stop)
    }

    /// `T − t ∈ [δ, 10δ]`.
    pub fn decade(t_sing: S, delta: S) -> Self {
        FitWindow { t_lo: t_sing - S::lit(10.0) * delta, t_hi: t_sing - delta }
    }

    /// `count` consecutive decades ending at `T − ε`, ordered towards `T`.
    pub fn decades(t_sing: S, eps_stop: S, count: usize) -> Vec<Self> {
        (0..count)
            .rev()
            .map(|k| Self::decade(t_sing, eps_stop * S::lit(10f64.powi(k as i32))))
            .collect()
    }

    fn contains(&self, t: S) -> bool {
        // samples placed exactly on an endpoint by the stepper may carry
        // roundoff in either direction
        let slack = S::lit(1e-9) * (S::one() + self.t_hi.abs());
        t >= self.t_lo - slack && t <= self.t_hi + slack
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateFit<S> {
    pub exponent: S,
    pub intercept: S,
    pub window: (S, S),
    pub residual_rms: S,
    pub n_points: usize,
    /// Standard error of the exponent from the residuals.
    pub exponent_stderr: S,
}

impl<S: Real> RateFit<S> {
    /// `|exponent − expected| ≤ tol`.
    pub fn within(&self, expected: S, tol: S) -> bool {
        (self.exponent - expected).abs() <= tol
    }
}

/// Least-squares fit of `log v` against `log(T−t)` over `window`.
pub fn fit_power_law<S: Real>(
    series: &[(S, S)],
    t_sing: S,
    window: FitWindow<S>,
) -> Result<RateFit<S>, FitError> {
    if !(window.t_lo >= S::zero() && window.t_lo < window.t_hi && window.t_hi < t_sing) {
        return Err(FitError::InvalidWindow {
            lo: window.t_lo.to_f64_lossy(),
            hi: window.t_hi.to_f64_lossy(),
            t_sing: t_sing.to_f64_lossy(),
        });
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut span = (S::infinity(), S::neg_infinity());
    for (index, &(t, v)) in series.iter().enumerate() {
        if !window.contains(t) || t >= t_sing {
            continue;
        }
        if !(v > S::zero()) {
            return Err(FitError::NonPositive { index, t: t.to_f64_lossy(), value: v.to_f64_lossy() });
        }
        xs.push((t_sing - t).ln());
        ys.push(v.ln());
        span = (span.0.min(t), span.1.max(t));
    }
    let m = xs.len();
    if m < MIN_POINTS {
        return Err(FitError::InsufficientData { found: m });
    }
    let mf = S::from_usize_lossy(m);
    let mx = xs.iter().copied().sum::<S>() / mf;
    let my = ys.iter().copied().sum::<S>() / mf;
    let mut sxx = S::zero();
    let mut sxy = S::zero();
    for (&x, &y) in xs.iter().zip(&ys) {
        sxx = sxx + (x - mx) * (x - mx);
        sxy = sxy + (x - mx) * (y - my);
    }
    let exponent = if sxx > S::zero() { sxy / sxx } else { S::zero() };
    let intercept = my - exponent * mx;
    let ss: S = xs.iter().zip(&ys).map(|(&x, &y)| (y - intercept - exponent * x).powi(2)).sum();
    let residual_rms = (ss / mf).sqrt();
    let exponent_stderr = if m > 2 && sxx > S::zero() {
        (ss / S::from_usize_lossy(m - 2) / sxx).sqrt()
    } else {
        S::zero()
    };
    Ok(RateFit { exponent, intercept, window: span, residual_rms, n_points: m, exponent_stderr })
}

/// Fits over several windows, typically nested decades approaching `T`.
pub fn windowed_stability<S: Real>(
    series: &[(S, S)],
    t_sing: S,
    windows: &[FitWindow<S>],
) -> Result<Vec<RateFit<S>>, FitError> {
    windows.iter().map(|w| fit_power_law(series, t_sing, *w)).collect()
}

/// Absolute change of the exponent between consecutive fits.
pub fn exponent_drift<S: Real>(fits: &[RateFit<S>]) -> Vec<S> {
    fits.windows(2).map(|w| (w[1].exponent - w[0].exponent).abs()).collect()
}

/// Splits a series by a per-sample hypothesis flag into (kept, excluded).
pub fn split_by_hypothesis<S: Copy>(series: &[(S, S)], ok: &[bool]) -> (Vec<(S, S)>, Vec<(S, S)>) {
    let mut kept = Vec::new();
    let mut excluded = Vec::new();
    for (p, &flag) in series.iter().zip(ok) {
        if flag {
            kept.push(*p);
        } else {
            excluded.push(*p);
        }
    }
    (kept, excluded)
}
