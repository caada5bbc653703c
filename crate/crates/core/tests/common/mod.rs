//! Shared fixtures for the integration tests: a seeded family of smooth
//! radial potentials and an independent complex-Hessian oracle on ℂ².
#![allow(dead_code)]

use std::path::PathBuf;

use krflow::calabi::{log_volume_form, ricci_eigenvalues, AnsatzModel};
use krflow::classes::{reference_volume_polynomial, IntersectionTable, KahlerClass};
use krflow::{Grid64, Profile64, Rational};
use num_bigint::BigInt;
use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Shipped model files, reachable from any crate of the workspace.
pub fn data_path(name: &str) -> PathBuf {
    let here = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    here.parent().expect("crate inside crates/").join("core").join("data").join(name)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `L(x0 + d) − L(x0) − L′(x0)·d` for the softplus `L`.
fn softplus_remainder(x0: f64, d: f64) -> f64 {
    if x0 > 0.0 {
        return softplus_remainder(-x0, -d);
    }
    let s0 = sigmoid(x0);
    (s0 * d.exp_m1()).ln_1p() - s0 * d
}

/// `σ(x0 + d) − σ(x0)`.
fn sigmoid_increment(x0: f64, d: f64) -> f64 {
    sigmoid(x0) * sigmoid(-(x0 + d)) * d.exp_m1()
}

/// `s(x0 + d) − s(x0)` with `s = σ(1 − σ)`.
fn bump_increment(x0: f64, d: f64) -> f64 {
    if x0 > 0.0 {
        return bump_increment(-x0, -d);
    }
    let s0 = sigmoid(x0) * sigmoid(-x0);
    s0 * (d - 2.0 * (sigmoid(x0) * d.exp_m1()).ln_1p()).exp_m1()
}

/// `u(ρ) = aρ + Σ λ w L((ρ − s)/w)`: strictly convex and increasing with
/// momentum endpoints `a` and `a + Σλ`.
#[derive(Debug, Clone)]
pub struct SoftplusSum {
    pub a: f64,
    /// `(λ, s, w)`
    pub terms: Vec<(f64, f64, f64)>,
}

impl SoftplusSum {
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = rng.gen_range(0.5..2.0);
        let k = rng.gen_range(1..=3);
        let terms = (0..k)
            .map(|_| (rng.gen_range(0.3..2.0), rng.gen_range(-4.0..4.0), rng.gen_range(0.8..1.5)))
            .collect();
        SoftplusSum { a, terms }
    }

    pub fn b(&self) -> f64 {
        self.a + self.terms.iter().map(|t| t.0).sum::<f64>()
    }

    pub fn jet(&self, rho: f64) -> [f64; 3] {
        let mut out = [self.a * rho, self.a, 0.0];
        for &(l, s, w) in &self.terms {
            let x = (rho - s) / w;
            out[0] += l * w * softplus(x);
            out[1] += l * sigmoid(x);
            out[2] += l / w * sigmoid(x) * sigmoid(-x);
        }
        out
    }

    fn u_remainder(&self, rho0: f64, d: f64) -> f64 {
        self.terms.iter().map(|&(l, s, w)| l * w * softplus_remainder((rho0 - s) / w, d / w)).sum()
    }

    /// `G(ρ0 + d) − G(ρ0)` for `n = 2`, `G = log u″ + log u′ − 2ρ`.
    fn g_increment(&self, rho0: f64, d: f64) -> f64 {
        let [_, du, d2u] = self.jet(rho0);
        let ddu: f64 = self.terms.iter().map(|&(l, s, w)| l * sigmoid_increment((rho0 - s) / w, d / w)).sum();
        let dd2u: f64 = self.terms.iter().map(|&(l, s, w)| l / w * bump_increment((rho0 - s) / w, d / w)).sum();
        (dd2u / d2u).ln_1p() + (ddu / du).ln_1p() - 2.0 * d
    }

    /// Closed-form `G′ = u‴/u″ + u″/u′ − 2`.
    pub fn g_prime(&self, rho: f64) -> f64 {
        let [_, du, d2u] = self.jet(rho);
        let d3u: f64 = self
            .terms
            .iter()
            .map(|&(l, s, w)| {
                let x = (rho - s) / w;
                l / (w * w) * sigmoid(x) * sigmoid(-x) * (1.0 - 2.0 * sigmoid(x))
            })
            .sum();
        d3u / d2u + d2u / du - 2.0
    }
}

const D2: [f64; 7] = [1.0 / 90.0, -3.0 / 20.0, 1.5, -49.0 / 18.0, 1.5, -3.0 / 20.0, 1.0 / 90.0];
const D1: [f64; 7] = [-1.0 / 60.0, 3.0 / 20.0, -0.75, 0.0, 0.75, -3.0 / 20.0, 1.0 / 60.0];

/// Real coordinates `(x1, y1, x2, y2)` of an offset from `z0 = (r, 0)`.
type Offset = [f64; 4];

/// `∂_i ∂_j̄ f` at the origin of the offsets for a real function `f`, from
/// sixth-order central differences with step `h`.
fn complex_hessian(f: &dyn Fn(Offset) -> f64, h: f64) -> ([f64; 2], (f64, f64)) {
    let axis = |k: usize| {
        let mut acc = 0.0;
        for (j, w) in D2.iter().enumerate() {
            let mut p = [0.0; 4];
            p[k] = (j as f64 - 3.0) * h;
            acc += w * f(p);
        }
        acc / (h * h)
    };
    let mixed = |k: usize, l: usize| {
        let mut acc = 0.0;
        for (i, wi) in D1.iter().enumerate() {
            for (j, wj) in D1.iter().enumerate() {
                if *wi == 0.0 || *wj == 0.0 {
                    continue;
                }
                let mut p = [0.0; 4];
                p[k] = (i as f64 - 3.0) * h;
                p[l] = (j as f64 - 3.0) * h;
                acc += wi * wj * f(p);
            }
        }
        acc / (h * h)
    };
    let g11 = 0.25 * (axis(0) + axis(1));
    let g22 = 0.25 * (axis(2) + axis(3));
    let re = 0.25 * (mixed(0, 2) + mixed(1, 3));
    let im = 0.25 * (mixed(0, 3) - mixed(1, 2));
    ([g11, g22], (re, im))
}

/// `log|z|² − ρ0` and `log|z₁|² − ρ0` at an offset, without cancellation.
fn log_radii(r: f64, p: Offset) -> (f64, f64) {
    let r2 = r * r;
    let q1 = p[0] * (2.0 * r + p[0]) + p[1] * p[1];
    let q2 = p[2] * p[2] + p[3] * p[3];
    (((q1 + q2) / r2).ln_1p(), (q1 / r2).ln_1p())
}

/// `log|z|² − log|z₁|² = log(1 + |z₂|²/|z₁|²)`.
fn log_ratio(r: f64, p: Offset) -> f64 {
    let z1 = (r + p[0]).powi(2) + p[1] * p[1];
    ((p[2] * p[2] + p[3] * p[3]) / z1).ln_1p()
}

/// Relative finite-difference step of the oracle.
pub const ORACLE_STEP: f64 = 2e-2;

/// `log det (∂_i∂_j̄ u(log|z|²))` at `z = (e^{ρ0/2}, 0)`. The pluriharmonic
/// part `u(ρ0) + u′(ρ0)(log|z₁|² − ρ0)` is removed before differencing so
/// that the fiber entry keeps its relative precision in the tails.
pub fn oracle_log_det(p: &SoftplusSum, rho0: f64) -> f64 {
    let r = (0.5 * rho0).exp();
    let du0 = p.jet(rho0)[1];
    let f = |o: Offset| {
        let (d, _) = log_radii(r, o);
        p.u_remainder(rho0, d) + du0 * log_ratio(r, o)
    };
    let ([g11, g22], (re, im)) = complex_hessian(&f, ORACLE_STEP * r);
    (g11 * g22 - re * re - im * im).ln()
}

/// `(ν_b, ν_f)` from `Ric = −√−1∂∂̄G` with `G` in closed form, read off at
/// `z = (e^{ρ0/2}, 0)` where `Ric_11̄ = ν_f/|z|²` and `Ric_22̄ = ν_b/|z|²`.
pub fn oracle_ricci(p: &SoftplusSum, rho0: f64) -> (f64, f64) {
    let r = (0.5 * rho0).exp();
    // any multiple of log|z₁|² is pluriharmonic; G′(ρ0) makes the rest small
    let eta = 1e-3;
    let c = (8.0 * (p.g_increment(rho0, eta) - p.g_increment(rho0, -eta))
        - (p.g_increment(rho0, 2.0 * eta) - p.g_increment(rho0, -2.0 * eta)))
        / (12.0 * eta);
    let f = |o: Offset| {
        let (d, d1) = log_radii(r, o);
        -(p.g_increment(rho0, d) - c * d1)
    };
    let ([h11, h22], _) = complex_hessian(&f, ORACLE_STEP * r);
    (h22 * r * r, h11 * r * r)
}

/// A trajectory CSV with exact power laws in `T − t`: `diam_fiber ∝ s^p`,
/// `R_sup ∝ s^{−1}`, `Rm_sup ∝ s^{−1}`, bounded remaining columns, sampled
/// geometrically down to `T − t = eps`.
pub fn synthetic_trajectory(t_sing: f64, eps: f64, diam_exponent: f64) -> String {
    let mut out = krflow::monitors::CSV_COLUMNS.join(",");
    out.push('\n');
    let m = 400;
    for i in 0..m {
        let s = t_sing * (eps / t_sing).powf(i as f64 / (m - 1) as f64);
        let t = t_sing - s;
        let row = [t, 1.3 * s.powf(diam_exponent), 1.0, 1.0, 0.5, 1.0, 1.0, 0.2, 1.0 / s, 4.0 / s, -1.0, 1.0];
        let row: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub const ORACLE_TOL: f64 = 1e-6;

/// Sup-norm relative errors over a subsample of the grid.
pub struct OracleErrors {
    pub log_det: f64,
    pub ricci: f64,
}

pub fn compare_with_oracle(seed: u64, nodes: usize) -> OracleErrors {
    let p = SoftplusSum::random(seed);
    let model = AnsatzModel::bundle(2).unwrap();
    let grid = Grid64::new(nodes, 12.0).unwrap();
    let profile = Profile64::from_fn(grid, |r| p.jet(r)).unwrap();
    let g = log_volume_form(&model, &profile).unwrap();
    let ric = ricci_eigenvalues(&model, &profile).unwrap();
    let rho = profile.rho();

    let (mut log_det, mut g_scale) = (0f64, 0f64);
    let mut num = [0f64; 2];
    let mut den = [0f64; 2];
    for i in (4..rho.len() - 4).step_by(7) {
        log_det = log_det.max((g[i] - oracle_log_det(&p, rho[i])).abs());
        g_scale = g_scale.max(g[i].abs());
        let (nb, nf) = oracle_ricci(&p, rho[i]);
        num[0] = num[0].max((ric.base[i] - nb).abs());
        num[1] = num[1].max((ric.fiber[i] - nf).abs());
        den[0] = den[0].max(nb.abs());
        den[1] = den[1].max(nf.abs());
    }
    OracleErrors { log_det: log_det / g_scale, ricci: (num[0] / den[0]).max(num[1] / den[1]) }
}


pub fn q(n: i64, d: i64) -> Rational {
    Rational::new(BigInt::from(n), BigInt::from(d))
}

/// `(ℂP¹)^n` in the basis of the factor hyperplanes: a top monomial pairs to
/// 1 when its factors are distinct and to 0 otherwise.
pub fn product_of_lines(n: usize) -> IntersectionTable<Rational> {
    let mut table = IntersectionTable::new(n, n);
    let mut idx = vec![0usize; n];
    loop {
        if idx.windows(2).all(|w| w[0] <= w[1]) {
            let distinct = idx.windows(2).all(|w| w[0] < w[1]);
            table.insert(&idx, if distinct { Rational::one() } else { Rational::zero() }).unwrap();
        }
        let mut pos = 0;
        loop {
            if pos == n {
                return table;
            }
            idx[pos] += 1;
            if idx[pos] < n {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

fn factorial(n: usize) -> Rational {
    (1..=n).fold(Rational::one(), |acc, k| acc * q(k as i64, 1))
}

/// Reference volume polynomial on `(ℂP¹)^4` with the last `r` factors as
/// fibers, against the factorised closed form `∫ĥ_t^4 = 4!·Π_i ĥ_i`.
pub fn check_synthetic_table(r: usize) -> Result<(), String> {
    let n = 4;
    let table = product_of_lines(n);
    let omega0 = KahlerClass::new(vec![q(3, 2), q(2, 1), q(5, 3), q(7, 4)]);
    let t_sing = q(5, 4);
    let sigma: Vec<Rational> =
        (0..n).map(|i| if i < n - r { q(i as i64 + 2, 3) } else { Rational::zero() }).collect();
    let sigma = KahlerClass::new(sigma);
    let poly = reference_volume_polynomial(&omega0, &sigma, &table, &t_sing).map_err(|e| e.to_string())?;
    if poly.lowest_power() != Some(r) {
        return Err(format!("r = {r}: lowest power {:?}", poly.lowest_power()));
    }
    let gap = poly.in_gap_variable();
    if !gap[..r].iter().all(|c| c.is_zero()) {
        return Err(format!("r = {r}: low coefficients {gap:?}"));
    }
    let closed = |t: &Rational| {
        let s = t_sing.clone() - t.clone();
        (0..n).fold(factorial(n), |acc, i| {
            acc * ((s.clone() * omega0.coeffs[i].clone() + t.clone() * sigma.coeffs[i].clone()) / t_sing.clone())
        })
    };
    for t in [q(0, 1), q(1, 3), q(9, 10), q(6, 5), t_sing.clone()] {
        if poly.eval(&t) != closed(&t) {
            return Err(format!("r = {r}, t = {t}: {} vs {}", poly.eval(&t), closed(&t)));
        }
    }
    // (T−t)^r coefficient: n!·T^{−r}·Π_fiber ω_j·Π_base σ_i
    let mut lead = factorial(n);
    for i in 0..n {
        lead = lead * if i < n - r { sigma.coeffs[i].clone() } else { omega0.coeffs[i].clone() / t_sing.clone() };
    }
    if gap[r] != lead {
        return Err(format!("r = {r}: leading coefficient {} vs {lead}", gap[r]));
    }
    Ok(())
}
