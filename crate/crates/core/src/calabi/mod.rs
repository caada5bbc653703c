//! Cohomogeneity-one geometry.
//!
//! A U(n)-invariant Kähler metric on the `k = 1` projective bundle
//! `P(O ⊕ O(−1)) → ℂP^{n−1}` (the blow-up of ℂP^n at a point) is written on
//! `ℂ^n∖{0}` as `ω = √−1∂∂̄u(ρ)` with `ρ = log|z|²`. Its eigenvalues are
//! `u′` on the `n − 1` base directions and `u″` on the fiber direction. The
//! product model `Σ × ℂP¹` with a flat base uses the same radial potential for
//! the `ℂP¹` factor and a constant base eigenvalue.
//!
//! A [`Profile`] stores `ψ = log u″` on a uniform `ρ`-grid (with ghost nodes)
//! plus `u′` and `u`. Storing the log-density keeps full relative precision in
//! the exponentially small tails, which is where a collapsing fiber lives
//! near the singular time.
//!
//! Scalar curvature follows the Kähler convention `R = tr_ω Ric`; the
//! Riemannian scalar curvature is `2R`.

mod curvature;
mod dump;

pub use curvature::{
    kahler_curvature, riemann_norm, CurvatureNorm, CurvatureSample, HermitianMatrix,
};
pub use dump::{read_profile_dump, write_profile_dump, ProfileDump};

use std::fmt;

use thiserror::Error;

use crate::fd;
use crate::scalar::Real;

/// Ghost nodes kept on each side of the grid. One more than the stencil
/// half-width so that the sixth-order error estimate can be formed.
pub const GHOSTS: usize = 3;
/// Half-width of the fourth-order central stencils.
pub const STENCIL_HALF: usize = 2;
const HALF: usize = STENCIL_HALF;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("positivity violated at node {node}: {what}")]
    Positivity { node: usize, what: String },
    #[error("non-integrable {side} tail (log-density slope {slope})")]
    NonIntegrableTail { side: &'static str, slope: f64 },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnsatzKind {
    /// `Σ × ℂP¹` with a flat base of complex dimension `n − 1`.
    Product,
    /// `P(O ⊕ O(−1)) → ℂP^{n−1}` with Calabi symmetry.
    ProjectiveBundleK1,
}

impl AnsatzKind {
    pub fn name(self) -> &'static str {
        match self {
            AnsatzKind::Product => "product",
            AnsatzKind::ProjectiveBundleK1 => "projective_bundle_k1",
        }
    }
}

impl fmt::Display for AnsatzKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for AnsatzKind {
    type Err = GeometryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "product" => Ok(AnsatzKind::Product),
            "projective_bundle_k1" | "bundle_k1" => Ok(AnsatzKind::ProjectiveBundleK1),
            other => Err(GeometryError::InvalidModel(format!(
                "unknown model kind `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnsatzModel {
    pub kind: AnsatzKind,
    /// Complex dimension of the total space.
    pub n: usize,
}

impl AnsatzModel {
    pub fn new(kind: AnsatzKind, n: usize) -> Result<Self, GeometryError> {
        if n < 2 {
            return Err(GeometryError::InvalidModel(format!("n = {n}, need n ≥ 2")));
        }
        Ok(Self { kind, n })
    }

    pub fn product(n: usize) -> Result<Self, GeometryError> {
        Self::new(AnsatzKind::Product, n)
    }

    pub fn bundle(n: usize) -> Result<Self, GeometryError> {
        Self::new(AnsatzKind::ProjectiveBundleK1, n)
    }

    /// Einstein constant of the base: `Ric(ω_FS) = n·ω_FS` on ℂP^{n−1}
    /// for the bundle, flat for the product.
    pub fn base_einstein(&self) -> f64 {
        match self.kind {
            AnsatzKind::Product => 0.0,
            AnsatzKind::ProjectiveBundleK1 => self.n as f64,
        }
    }

    /// Rates `(α, β)` with `a_t = a₀ − αt`, `b_t = b₀ − βt` for the momentum
    /// endpoints. These are the `c₁` pairings with the two invariant curves
    /// (the exceptional/zero section and the section at infinity; for the
    /// product the left endpoint is pinned at 0 and `b` is the fiber area).
    pub fn endpoint_rates(&self) -> (f64, f64) {
        match self.kind {
            AnsatzKind::Product => (0.0, 2.0),
            AnsatzKind::ProjectiveBundleK1 => ((self.n - 1) as f64, (self.n + 1) as f64),
        }
    }

    pub fn base_dims(&self) -> usize {
        self.n - 1
    }
}

/// Uniform grid on `[−R, R]` with `N` nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid<S> {
    nodes: usize,
    half_width: S,
    h: S,
}

impl<S: Real> Grid<S> {
    pub fn new(nodes: usize, half_width: S) -> Result<Self, GeometryError> {
        if nodes < 16 {
            return Err(GeometryError::InvalidGrid(format!(
                "{nodes} nodes, need at least 16"
            )));
        }
        if !(half_width > S::zero()) {
            return Err(GeometryError::InvalidGrid(format!(
                "half width {half_width} must be positive"
            )));
        }
        let h = (half_width + half_width) / S::from_usize_lossy(nodes - 1);
        Ok(Self {
            nodes,
            half_width,
            h,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes
    }

    pub fn is_empty(&self) -> bool {
        self.nodes == 0
    }

    pub fn spacing(&self) -> S {
        self.h
    }

    pub fn half_width(&self) -> S {
        self.half_width
    }

    /// Coordinate of node `i`; negative indices and `i ≥ N` address ghosts.
    pub fn rho(&self, i: isize) -> S {
        -self.half_width + S::lit(i as f64) * self.h
    }

    pub fn interior(&self) -> Vec<S> {
        (0..self.nodes as isize).map(|i| self.rho(i)).collect()
    }

    pub fn extended(&self) -> Vec<S> {
        let g = GHOSTS as isize;
        (-g..self.nodes as isize + g).map(|i| self.rho(i)).collect()
    }

    pub fn extended_len(&self) -> usize {
        self.nodes + 2 * GHOSTS
    }
}

/// Pointwise metric eigenvalues in the frame `(π*ω_FS, √−1∂ρ∧∂̄ρ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricEigen<S> {
    pub base: Vec<S>,
    pub fiber: Vec<S>,
}

/// Radial profile of one Kähler metric.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile<S> {
    grid: Grid<S>,
    /// `log u″ − log_scale` on the extended grid.
    psi: Vec<S>,
    /// Homothety factor kept apart from `psi` so that rescaling does not
    /// perturb the finite differences.
    log_scale: S,
    du: Vec<S>,
    u: Vec<S>,
    /// Constant base eigenvalue (product model only).
    base_level: Option<S>,
}

/// Radial derivatives of `u` at the interior nodes, together with the
/// derivatives of `ψ = log u″` they were assembled from.
#[derive(Debug, Clone)]
pub struct Jets<S> {
    pub d1: Vec<S>,
    pub d2: Vec<S>,
    pub d3: Vec<S>,
    pub d4: Vec<S>,
    pub psi1: Vec<S>,
    pub psi2: Vec<S>,
}

impl<S: Real> Profile<S> {
    /// Samples a closed-form potential: `f(ρ) = (u, u′, u″)`. Ghost values come
    /// from the same closed form.
    pub fn from_fn(grid: Grid<S>, f: impl Fn(S) -> [S; 3]) -> Result<Self, GeometryError> {
        let ext = grid.extended();
        let mut psi = Vec::with_capacity(ext.len());
        let mut u = Vec::with_capacity(grid.len());
        let mut du = Vec::with_capacity(grid.len());
        for (e, &r) in ext.iter().enumerate() {
            let [v, d1, d2] = f(r);
            if !(d2 > S::zero()) || !d2.is_finite() {
                return Err(GeometryError::Positivity {
                    node: e.saturating_sub(GHOSTS),
                    what: format!("u'' = {d2} at rho = {r}"),
                });
            }
            psi.push(d2.ln());
            if e >= GHOSTS && e < GHOSTS + grid.len() {
                u.push(v);
                du.push(d1);
            }
        }
        let p = Self {
            grid,
            psi,
            du,
            u,
            log_scale: S::zero(),
            base_level: None,
        };
        p.check_positivity()?;
        Ok(p)
    }

    /// Builds a profile from `ψ = log u″` on the extended grid, the left
    /// momentum `a = lim_{ρ→−∞} u′` and the value `u(ρ₀)` at the first node.
    /// `u′` and `u` are recovered by sixth-order cumulative quadrature.
    pub fn from_log_density(
        grid: Grid<S>,
        psi: Vec<S>,
        left_momentum: S,
        anchor: S,
    ) -> Result<Self, GeometryError> {
        assert_eq!(psi.len(), grid.extended_len());
        let n = grid.len();
        let h = grid.spacing();
        let d1w = stencil::<S>(1, h);
        let slope0 = apply(&d1w, &psi, GHOSTS);
        if !(slope0 > S::zero()) {
            return Err(GeometryError::NonIntegrableTail {
                side: "left",
                slope: slope0.to_f64_lossy(),
            });
        }
        let second: Vec<S> = psi[GHOSTS..GHOSTS + n].iter().map(|p| p.exp()).collect();
        let tail = second[0] / slope0;
        let du = cumulative(&second, h, left_momentum + tail);
        let u = cumulative(&du, h, anchor);
        let p = Self {
            grid,
            psi,
            du,
            u,
            log_scale: S::zero(),
            base_level: None,
        };
        p.check_positivity()?;
        Ok(p)
    }

    pub fn with_base_level(mut self, level: S) -> Self {
        self.base_level = Some(level);
        self
    }

    pub fn grid(&self) -> &Grid<S> {
        &self.grid
    }

    pub fn base_level(&self) -> Option<S> {
        self.base_level
    }

    pub fn rho(&self) -> Vec<S> {
        self.grid.interior()
    }

    pub fn u(&self) -> &[S] {
        &self.u
    }

    pub fn du(&self) -> &[S] {
        &self.du
    }

    pub fn d2u(&self) -> Vec<S> {
        self.interior_psi()
            .iter()
            .map(|p| (*p + self.log_scale).exp())
            .collect()
    }

    /// `log u″ − log_scale()` on the extended grid.
    pub fn psi_extended(&self) -> &[S] {
        &self.psi
    }

    pub fn interior_psi(&self) -> &[S] {
        &self.psi[GHOSTS..GHOSTS + self.grid.len()]
    }

    pub fn log_scale(&self) -> S {
        self.log_scale
    }

    /// `log u″` on the extended grid with the scale folded in.
    pub fn log_density(&self) -> Vec<S> {
        self.psi.iter().map(|p| *p + self.log_scale).collect()
    }

    /// Multiplies the potential by `c > 0` (a homothety of the metric).
    pub fn scaled(&self, c: S) -> Self {
        let lc = c.ln();
        Self {
            grid: self.grid,
            psi: self.psi.clone(),
            log_scale: self.log_scale + lc,
            du: self.du.iter().map(|d| *d * c).collect(),
            u: self.u.iter().map(|v| *v * c).collect(),
            base_level: self.base_level.map(|b| b * c),
        }
    }

    pub fn check_positivity(&self) -> Result<(), GeometryError> {
        for (i, (d1, p)) in self.du.iter().zip(self.interior_psi()).enumerate() {
            if !(*d1 > S::zero()) || !d1.is_finite() {
                return Err(GeometryError::Positivity {
                    node: i,
                    what: format!("u' = {d1}"),
                });
            }
            if !p.is_finite() {
                return Err(GeometryError::Positivity {
                    node: i,
                    what: format!("log u'' = {p}"),
                });
            }
        }
        if let Some(b) = self.base_level {
            if !(b > S::zero()) {
                return Err(GeometryError::Positivity {
                    node: 0,
                    what: format!("base level {b}"),
                });
            }
        }
        Ok(())
    }

    pub fn jets(&self) -> Jets<S> {
        let h = self.grid.spacing();
        let w1 = stencil::<S>(1, h);
        let w2 = stencil::<S>(2, h);
        let n = self.grid.len();
        let mut out = Jets {
            d1: self.du.clone(),
            d2: Vec::with_capacity(n),
            d3: Vec::with_capacity(n),
            d4: Vec::with_capacity(n),
            psi1: Vec::with_capacity(n),
            psi2: Vec::with_capacity(n),
        };
        for i in 0..n {
            let e = i + GHOSTS;
            let p1 = apply(&w1, &self.psi, e);
            let p2 = apply(&w2, &self.psi, e);
            let d2 = (self.psi[e] + self.log_scale).exp();
            out.d2.push(d2);
            out.d3.push(d2 * p1);
            out.d4.push(d2 * (p2 + p1 * p1));
            out.psi1.push(p1);
            out.psi2.push(p2);
        }
        out
    }

    /// Momentum endpoints `(a, b)` read off the profile: `u′` at the outer
    /// nodes corrected by the exponential tail integrals.
    pub fn momenta(&self) -> Result<(S, S), GeometryError> {
        let j = self.jets();
        let n = self.grid.len();
        let (tl, tr) = tail_masses(&j.d2, &j.psi1, S::one())?;
        let _ = n;
        Ok((self.du[0] - tl, self.du[n - 1] + tr))
    }
}

pub(crate) fn stencil<S: Real>(deriv: usize, h: S) -> Vec<S> {
    let scale = h.powi(deriv as i32);
    fd::central(deriv, HALF)
        .into_iter()
        .map(|w| S::lit(w) / scale)
        .collect()
}

pub(crate) fn apply<S: Real>(w: &[S], v: &[S], centre: usize) -> S {
    w.iter()
        .enumerate()
        .map(|(k, wk)| *wk * v[centre + k - HALF])
        .sum()
}

/// `∫_{-∞}^{ρ₀} e^{pψ}` and `∫_{ρ_{N-1}}^{∞} e^{pψ}` for exponential tails
/// `ψ ≈ ψ_end + slope·(ρ − ρ_end)`; `values = e^{ψ}`.
fn tail_masses<S: Real>(values: &[S], slopes: &[S], power: S) -> Result<(S, S), GeometryError> {
    let n = values.len();
    let kl = slopes[0] * power;
    let kr = -slopes[n - 1] * power;
    if !(kl > S::zero()) {
        return Err(GeometryError::NonIntegrableTail {
            side: "left",
            slope: slopes[0].to_f64_lossy(),
        });
    }
    if !(kr > S::zero()) {
        return Err(GeometryError::NonIntegrableTail {
            side: "right",
            slope: slopes[n - 1].to_f64_lossy(),
        });
    }
    Ok((values[0].powf(power) / kl, values[n - 1].powf(power) / kr))
}

/// Sixth-order cumulative quadrature: `out[i] = start + ∫_{ρ₀}^{ρ_i} f`.
pub(crate) fn cumulative<S: Real>(f: &[S], h: S, start: S) -> Vec<S> {
    let n = f.len();
    let mut out = Vec::with_capacity(n);
    out.push(start);
    let mut cache: Vec<(i64, Vec<S>)> = Vec::new();
    let mut acc = start;
    for i in 0..n - 1 {
        let s = (i as i64 - 2).clamp(0, n as i64 - 6);
        let rel = s - i as i64;
        let w = match cache.iter().find(|(r, _)| *r == rel) {
            Some((_, w)) => w.clone(),
            None => {
                let offs: Vec<i64> = (rel..rel + 6).collect();
                let w: Vec<S> = fd::cell_integral(&offs).into_iter().map(S::lit).collect();
                cache.push((rel, w.clone()));
                w
            }
        };
        let cell: S = w
            .iter()
            .enumerate()
            .map(|(k, wk)| *wk * f[(s as usize) + k])
            .sum();
        acc = acc + cell * h;
        out.push(acc);
    }
    out
}

/// Definite integral over the grid with the same quadrature.
pub(crate) fn integrate<S: Real>(f: &[S], h: S) -> S {
    *cumulative(f, h, S::zero()).last().unwrap()
}

/// Trapezoid rule, used as an independent cross-check of [`integrate`].
pub(crate) fn trapezoid<S: Real>(f: &[S], h: S) -> S {
    let n = f.len();
    let half = S::lit(0.5);
    let inner: S = f[1..n - 1].iter().copied().sum();
    h * (inner + half * (f[0] + f[n - 1]))
}

/// Midpoint rule with cubic interpolation to the cell midpoints (the two
/// end cells use the one-sided cubic through the first/last four nodes).
pub(crate) fn midpoint<S: Real>(f: &[S], h: S) -> S {
    let n = f.len();
    let c = |a: f64| S::lit(a);
    let mut acc = S::zero();
    for i in 0..n - 1 {
        let m = if i == 0 {
            c(5.0 / 16.0) * f[0] + c(15.0 / 16.0) * f[1] - c(5.0 / 16.0) * f[2]
                + c(1.0 / 16.0) * f[3]
        } else if i == n - 2 {
            c(5.0 / 16.0) * f[n - 1] + c(15.0 / 16.0) * f[n - 2] - c(5.0 / 16.0) * f[n - 3]
                + c(1.0 / 16.0) * f[n - 4]
        } else {
            (c(9.0) * (f[i] + f[i + 1]) - f[i - 1] - f[i + 2]) / c(16.0)
        };
        acc = acc + m;
    }
    acc * h
}

/// Eigenvalues of the metric itself.
pub fn metric_eigen<S: Real>(
    model: &AnsatzModel,
    profile: &Profile<S>,
) -> Result<MetricEigen<S>, GeometryError> {
    let fiber = profile.d2u();
    let base = match model.kind {
        AnsatzKind::ProjectiveBundleK1 => profile.du().to_vec(),
        AnsatzKind::Product => {
            let x = profile.base_level().ok_or_else(|| {
                GeometryError::Precondition("product profile carries no base level".into())
            })?;
            vec![x; fiber.len()]
        }
    };
    Ok(MetricEigen { base, fiber })
}

/// `G = log(ω^n / dV_eucl)`: `log u″ + (n−1) log u′ − nρ` on the bundle,
/// `log u″ − ρ + (n−1) log x` on the product.
pub fn log_volume_form<S: Real>(
    model: &AnsatzModel,
    profile: &Profile<S>,
) -> Result<Vec<S>, GeometryError> {
    profile.check_positivity()?;
    let m = S::from_usize_lossy(model.n - 1);
    let nn = S::from_usize_lossy(model.n);
    let rho = profile.rho();
    let psi = profile.interior_psi();
    let ls = profile.log_scale();
    Ok(match model.kind {
        AnsatzKind::ProjectiveBundleK1 => (0..rho.len())
            .map(|i| psi[i] + ls + m * profile.du()[i].ln() - nn * rho[i])
            .collect(),
        AnsatzKind::Product => {
            let x = metric_eigen(model, profile)?.base[0];
            (0..rho.len())
                .map(|i| psi[i] + ls - rho[i] + m * x.ln())
                .collect()
        }
    })
}

/// `(G′, G″)` assembled from the jets of `ψ`.
pub(crate) fn volume_derivatives<S: Real>(model: &AnsatzModel, jets: &Jets<S>) -> (Vec<S>, Vec<S>) {
    let m = S::from_usize_lossy(model.n - 1);
    let nn = S::from_usize_lossy(model.n);
    let len = jets.d1.len();
    let mut g1 = Vec::with_capacity(len);
    let mut g2 = Vec::with_capacity(len);
    for i in 0..len {
        match model.kind {
            AnsatzKind::ProjectiveBundleK1 => {
                let q = jets.d2[i] / jets.d1[i];
                g1.push(jets.psi1[i] + m * q - nn);
                g2.push(jets.psi2[i] + m * (q * jets.psi1[i] - q * q));
            }
            AnsatzKind::Product => {
                g1.push(jets.psi1[i] - S::one());
                g2.push(jets.psi2[i]);
            }
        }
    }
    (g1, g2)
}

/// Ricci-form eigenvalues in the metric frame.
#[derive(Debug, Clone)]
pub struct RicciEigen<S> {
    pub base: Vec<S>,
    pub fiber: Vec<S>,
    /// Sup-norm gap between the sixth-order fiber eigenvalue and its
    /// fourth-order counterpart, a conservative discretisation error bound.
    pub error_estimate: S,
}

/// `Ric = −√−1∂∂̄G`: `ν_b = −G′`, `ν_f = −G″` (base `ν_b = 0` on the flat
/// product).
pub fn ricci_eigenvalues<S: Real>(
    model: &AnsatzModel,
    profile: &Profile<S>,
) -> Result<RicciEigen<S>, GeometryError> {
    profile.check_positivity()?;
    let coarse = profile.jets();
    let (_, g2_coarse) = volume_derivatives(model, &coarse);

    // sixth-order ψ′, ψ″; the fourth-order pair serves as error estimate
    let h = profile.grid().spacing();
    let w1: Vec<S> = fd::central(1, 3).into_iter().map(|w| S::lit(w) / h).collect();
    let w2: Vec<S> = fd::central(2, 3).into_iter().map(|w| S::lit(w) / (h * h)).collect();
    let psi = profile.psi_extended();
    let at = |w: &[S], e: usize| -> S { w.iter().enumerate().map(|(k, wk)| *wk * psi[e + k - 3]).sum() };
    let mut jets = coarse;
    for i in 0..jets.psi1.len() {
        jets.psi1[i] = at(&w1, i + GHOSTS);
        jets.psi2[i] = at(&w2, i + GHOSTS);
    }
    let (g1, g2) = volume_derivatives(model, &jets);
    let base = match model.kind {
        AnsatzKind::ProjectiveBundleK1 => g1.iter().map(|v| -*v).collect(),
        AnsatzKind::Product => vec![S::zero(); g1.len()],
    };
    let fiber: Vec<S> = g2.iter().map(|v| -*v).collect();
    let mut err = S::zero();
    let mut scale = S::zero();
    for (f, c) in fiber.iter().zip(&g2_coarse) {
        err = err.max((*f + *c).abs());
        scale = scale.max(f.abs());
    }
    if err > S::lit(1e-4) * scale.max(S::one()) {
        log::warn!("ricci_eigenvalues: grid may be too coarse, estimated error {err}");
    }
    Ok(RicciEigen {
        base,
        fiber,
        error_estimate: err,
    })
}

/// `R = (n−1)ν_b/λ_b + ν_f/λ_f`.
pub fn scalar_curvature<S: Real>(
    model: &AnsatzModel,
    profile: &Profile<S>,
) -> Result<Vec<S>, GeometryError> {
    let ric = ricci_eigenvalues(model, profile)?;
    let eig = metric_eigen(model, profile)?;
    let m = S::from_usize_lossy(model.n - 1);
    Ok((0..eig.fiber.len())
        .map(|i| m * ric.base[i] / eig.base[i] + ric.fiber[i] / eig.fiber[i])
        .collect())
}

/// Length of the radial pole-to-pole geodesic of the fiber, `∫√u″ dρ`, with
/// exponential tails integrated in closed form. Under the ansatz this
/// realises the fiber diameter up to a bounded factor.
pub fn fiber_diameter<S: Real>(
    _model: &AnsatzModel,
    profile: &Profile<S>,
) -> Result<S, GeometryError> {
    profile.check_positivity()?;
    let jets = profile.jets();
    let half = S::lit(0.5);
    let root: Vec<S> = profile
        .interior_psi()
        .iter()
        .map(|p| ((*p + profile.log_scale()) * half).exp())
        .collect();
    let (tl, tr) = tail_masses(&jets.d2, &jets.psi1, half)?;
    Ok(integrate(&root, profile.grid().spacing()) + tl + tr)
}

/// Fiber area `∫u″ dρ = b − a`, tails included.
pub fn fiber_area<S: Real>(profile: &Profile<S>) -> Result<S, GeometryError> {
    let jets = profile.jets();
    let (tl, tr) = tail_masses(&jets.d2, &jets.psi1, S::one())?;
    Ok(integrate(&jets.d2, profile.grid().spacing()) + tl + tr)
}

/// Nodewise `(tr_ω η, tr_η ω)`. A vanishing fiber eigenvalue of `η` (as for
/// `π*ω_Σ`) makes the second trace infinite.
pub fn traces<S: Real>(
    model: &AnsatzModel,
    omega: &MetricEigen<S>,
    other: &MetricEigen<S>,
) -> (Vec<S>, Vec<S>) {
    let m = S::from_usize_lossy(model.n - 1);
    let len = omega.fiber.len();
    let mut fwd = Vec::with_capacity(len);
    let mut back = Vec::with_capacity(len);
    for i in 0..len {
        fwd.push(m * other.base[i] / omega.base[i] + other.fiber[i] / omega.fiber[i]);
        let b = if other.fiber[i] == S::zero() || other.base[i] == S::zero() {
            S::infinity()
        } else {
            m * omega.base[i] / other.base[i] + omega.fiber[i] / other.fiber[i]
        };
        back.push(b);
    }
    (fwd, back)
}

/// The reference metric `ĥ_t = ((T−t)ω₀ + t·π*ω_Σ)/T` in eigenvalue form.
#[derive(Debug, Clone)]
pub struct ReferenceMetricEval<S> {
    pub t: S,
    pub eigen: MetricEigen<S>,
}

impl<S: Real> ReferenceMetricEval<S> {
    /// `sigma` is the base eigenvalue of `π*ω_Σ` (its fiber eigenvalue is 0).
    pub fn new(omega0: &MetricEigen<S>, sigma: S, singular_time: S, t: S) -> Self {
        let w0 = (singular_time - t) / singular_time;
        let w1 = t / singular_time;
        let base = omega0.base.iter().map(|b| w0 * *b + w1 * sigma).collect();
        let fiber = omega0.fiber.iter().map(|f| w0 * *f).collect();
        Self {
            t,
            eigen: MetricEigen { base, fiber },
        }
    }
}

/// Smooth volume form `Ω` with `√−1∂∂̄ log Ω = (π*ω_Σ − ω₀)/T`, stored as
/// its log-density against the Euclidean coordinate volume.
#[derive(Debug, Clone)]
pub struct VolumeDatum<S> {
    pub log_omega: Vec<S>,
    /// Radial slope of the `π*ω_Σ` potential (σ on the bundle, 0 on the
    /// product, whose base does not move).
    pub sigma_slope: S,
    pub singular_time: S,
}

impl<S: Real> VolumeDatum<S> {
    pub fn new(model: &AnsatzModel, initial: &Profile<S>, sigma: S, singular_time: S) -> Self {
        let sigma_slope = match model.kind {
            AnsatzKind::ProjectiveBundleK1 => sigma,
            AnsatzKind::Product => S::zero(),
        };
        let log_omega = initial
            .rho()
            .iter()
            .zip(initial.u())
            .map(|(r, u0)| (sigma_slope * *r - *u0) / singular_time)
            .collect();
        Self {
            log_omega,
            sigma_slope,
            singular_time,
        }
    }

    /// Central second differences of `log Ω` at nodes `STENCIL_HALF..N−STENCIL_HALF`.
    pub fn second_differences(&self, grid: &Grid<S>) -> Vec<S> {
        let w = stencil::<S>(2, grid.spacing());
        (HALF..self.log_omega.len() - HALF)
            .map(|i| apply(&w, &self.log_omega, i))
            .collect()
    }

    /// Central first differences on the same nodes.
    pub fn first_differences(&self, grid: &Grid<S>) -> Vec<S> {
        let w = stencil::<S>(1, grid.spacing());
        (HALF..self.log_omega.len() - HALF)
            .map(|i| apply(&w, &self.log_omega, i))
            .collect()
    }
}

/// Closed-form profiles used for initial data and fixtures.
pub mod closed_form {
    use super::*;

    /// `u = a·ρ + λ·log(1 + e^{ρ−s})`: momentum from `a` to `a + λ`, a
    /// Fubini–Study fiber of area `λ` centred at `ρ = s`.
    pub fn fubini_study<S: Real>(a: S, lambda: S, shift: S) -> impl Fn(S) -> [S; 3] {
        move |r: S| {
            let x = r - shift;
            // softplus and logistic evaluated without overflow
            let sp = if x > S::zero() {
                x + (-x).exp().ln_1p()
            } else {
                x.exp().ln_1p()
            };
            let sig = S::one() / (S::one() + (-x).exp());
            let d2 = if x > S::zero() {
                let e = (-x).exp();
                e / ((S::one() + e) * (S::one() + e))
            } else {
                let e = x.exp();
                e / ((S::one() + e) * (S::one() + e))
            };
            [a * r + lambda * sp, a + lambda * sig, lambda * d2]
        }
    }

    /// `u = e^ρ`, the flat metric on `ℂ^n∖{0}`.
    pub fn flat<S: Real>() -> impl Fn(S) -> [S; 3] {
        |r: S| {
            let e = r.exp();
            [e, e, e]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::closed_form::*;
    use super::*;
    use std::f64::consts::PI;

    fn grid(n: usize, r: f64) -> Grid<f64> {
        Grid::new(n, r).unwrap()
    }

    #[test]
    fn flat_volume_form_vanishes() {
        let m = AnsatzModel::bundle(2).unwrap();
        let p = Profile::from_fn(grid(256, 6.0), flat()).unwrap();
        let g = log_volume_form(&m, &p).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-12));
        let ric = ricci_eigenvalues(&m, &p).unwrap();
        assert!(ric.base.iter().chain(&ric.fiber).all(|v| v.abs() < 1e-8));
        let r = scalar_curvature(&m, &p).unwrap();
        assert!(r.iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn fs_fiber_volume_density() {
        // one fiber factor: product model with a unit flat base contributes nothing
        let m = AnsatzModel::product(2).unwrap();
        let lambda = 1.7;
        let p = Profile::from_fn(grid(256, 12.0), fubini_study(0.0, lambda, 0.0))
            .unwrap()
            .with_base_level(1.0);
        let g = log_volume_form(&m, &p).unwrap();
        for (gi, r) in g.iter().zip(p.rho()) {
            // log u'' − ρ with u'' = λe^ρ/(1+e^ρ)²
            let expect = lambda.ln() + r - 2.0 * (1.0 + r.exp()).ln() - r;
            assert!((gi - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn fs_fiber_is_einstein() {
        let m = AnsatzModel::product(2).unwrap();
        let lambda = 1.7;
        let p = Profile::from_fn(grid(512, 12.0), fubini_study(0.0, lambda, 0.0))
            .unwrap()
            .with_base_level(1.0);
        let ric = ricci_eigenvalues(&m, &p).unwrap();
        for (nu, d2) in ric.fiber.iter().zip(p.d2u()) {
            assert!((nu / d2 - 2.0 / lambda).abs() < 1e-6, "{}", nu / d2);
        }
        let r = scalar_curvature(&m, &p).unwrap();
        assert!(r.iter().all(|v| (v - 2.0 / lambda).abs() < 1e-6));
    }

    #[test]
    fn fs_diameter_closed_form() {
        let m = AnsatzModel::product(2).unwrap();
        for lambda in [0.3, 1.0, 4.0] {
            let p = Profile::from_fn(grid(512, 14.0), fubini_study(0.0, lambda, 0.0))
                .unwrap()
                .with_base_level(1.0);
            let d = fiber_diameter(&m, &p).unwrap();
            assert!((d - PI * lambda.sqrt()).abs() < 1e-8 * d, "{d}");
        }
    }

    #[test]
    fn homothety_scaling_laws() {
        let m = AnsatzModel::bundle(2).unwrap();
        let p = Profile::from_fn(grid(256, 10.0), fubini_study(2.0, 1.0, 0.3)).unwrap();
        let c = 3.7;
        let q = p.scaled(c);
        let d0 = fiber_diameter(&m, &p).unwrap();
        let d1 = fiber_diameter(&m, &q).unwrap();
        assert!((d1 / d0 - c.sqrt()).abs() < 1e-12);
        let r0 = scalar_curvature(&m, &p).unwrap();
        let r1 = scalar_curvature(&m, &q).unwrap();
        for (a, b) in r0.iter().zip(&r1) {
            assert!(
                (b * c - a).abs() <= 1e-10 * a.abs().max(1.0),
                "{a} {}",
                b * c
            );
        }
    }

    #[test]
    fn momenta_and_area_of_fs_profile() {
        let p = Profile::from_fn(grid(400, 12.0), fubini_study(2.0, 1.0, 0.0)).unwrap();
        let (a, b) = p.momenta().unwrap();
        assert!((a - 2.0).abs() < 1e-9 && (b - 3.0).abs() < 1e-9, "{a} {b}");
        assert!((fiber_area(&p).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn log_density_reconstruction_matches_closed_form() {
        let g = grid(400, 12.0);
        let exact = Profile::from_fn(g, fubini_study(2.0, 1.0, 0.4)).unwrap();
        let rebuilt = Profile::from_log_density(g, exact.log_density(), 2.0, exact.u()[0]).unwrap();
        for (a, b) in exact.du().iter().zip(rebuilt.du()) {
            assert!((a - b).abs() < 1e-9);
        }
        for (a, b) in exact.u().iter().zip(rebuilt.u()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn traces_identities() {
        let m = AnsatzModel::product(3).unwrap();
        let t_sing = 1.0;
        let t = 0.6;
        let p = Profile::from_fn(grid(128, 10.0), fubini_study(0.0, 2.0 * (t_sing - t), 0.0))
            .unwrap()
            .with_base_level(1.0);
        let eig = metric_eigen(&m, &p).unwrap();
        let (self_tr, _) = traces(&m, &eig, &eig);
        assert!(self_tr.iter().all(|v| (v - 3.0).abs() < 1e-12));
        let sigma = MetricEigen {
            base: vec![1.0; 128],
            fiber: vec![0.0; 128],
        };
        let (tr_sigma, back) = traces(&m, &eig, &sigma);
        assert!(tr_sigma.iter().all(|v| (v - 2.0).abs() < 1e-12));
        assert!(back.iter().all(|v| v.is_infinite()));
    }

    #[test]
    fn reference_metric_endpoints() {
        let w0: MetricEigen<f64> = MetricEigen {
            base: vec![2.0, 2.5],
            fiber: vec![0.2, 0.1],
        };
        let at0 = ReferenceMetricEval::new(&w0, 1.5, 0.5, 0.0);
        assert_eq!(at0.eigen, w0);
        let late = ReferenceMetricEval::new(&w0, 1.5, 0.5, 0.25);
        assert!((late.eigen.fiber[0] - 0.1).abs() < 1e-15);
        assert!((late.eigen.base[0] - 1.75).abs() < 1e-15);
    }

    #[test]
    fn volume_datum_curvature_consistency() {
        let m = AnsatzModel::bundle(2).unwrap();
        let g = grid(512, 10.0);
        let p = Profile::from_fn(g, fubini_study(2.0, 1.0, 0.0)).unwrap();
        let (sigma, t_sing) = (1.5, 0.5);
        let vd = VolumeDatum::new(&m, &p, sigma, t_sing);
        let dd = vd.second_differences(&g);
        let d = vd.first_differences(&g);
        let d2u = p.d2u();
        let scale = d2u.iter().cloned().fold(0.0, f64::max) / t_sing;
        for (k, v) in dd.iter().enumerate() {
            let i = k + STENCIL_HALF;
            assert!((v + d2u[i] / t_sing).abs() <= 1e-6 * scale);
            assert!((d[k] - (sigma - p.du()[i]) / t_sing).abs() <= 1e-6 * 3.0 / t_sing);
        }
    }

    #[test]
    fn quadratures_agree() {
        let f: Vec<f64> = grid(301, 10.0)
            .interior()
            .iter()
            .map(|r| (-r * r / 4.0).exp())
            .collect();
        let h = 20.0 / 300.0;
        let exact = (4.0 * PI).sqrt();
        assert!((integrate(&f, h) - exact).abs() < 1e-10);
        assert!((trapezoid(&f, h) - exact).abs() < 1e-10);
        assert!((midpoint(&f, h) - exact).abs() < 1e-8);
    }

    #[test]
    fn nonintegrable_tail_detected() {
        let m = AnsatzModel::bundle(2).unwrap();
        let p = Profile::from_fn(grid(64, 4.0), flat()).unwrap();
        assert!(matches!(
            fiber_diameter(&m, &p),
            Err(GeometryError::NonIntegrableTail { side: "right", .. })
        ));
    }

    #[test]
    fn positivity_failure_names_node() {
        let err = Profile::from_fn(grid(32, 2.0), |r: f64| {
            [r, 1.0, if r > 0.5 { -1.0 } else { 1.0 }]
        })
        .unwrap_err();
        assert!(matches!(err, GeometryError::Positivity { .. }));
    }
}
