//! Generic Kähler curvature evaluator.
//!
//! Takes any Hermitian metric `g_{ij̄}(z)` on a coordinate patch of `ℂ^m` and
//! assembles
//!
//! `R_{ij̄kl̄} = −∂_k∂_l̄ g_{ij̄} + g^{pq̄} ∂_k g_{iq̄} ∂_l̄ g_{pj̄}`
//!
//! from sixth-order finite differences in the real coordinates. The norm is
//! taken in a unitary frame. Nothing here knows about the Calabi ansatz; the
//! profile adapter at the bottom feeds it a local model of the metric built
//! from the radial jets.

use num_complex::Complex;
use rayon::prelude::*;

use super::{AnsatzKind, AnsatzModel, GeometryError, Profile};
use crate::fd;
use crate::scalar::Real;

/// Dense `m × m` complex matrix, row-major; entry `(i, j)` is `g_{ij̄}`.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix<S> {
    pub dim: usize,
    pub data: Vec<Complex<S>>,
}

impl<S: Real> HermitianMatrix<S> {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![Complex::new(S::zero(), S::zero()); dim * dim],
        }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> Complex<S> {
        self.data[i * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: Complex<S>) {
        self.data[i * self.dim + j] = v;
    }

    fn axpy(&mut self, w: S, other: &Self) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + *b * w;
        }
    }

    /// Lower Cholesky factor, `None` unless positive definite.
    fn cholesky(&self) -> Option<Vec<Complex<S>>> {
        let m = self.dim;
        let zero = Complex::new(S::zero(), S::zero());
        let mut l = vec![zero; m * m];
        for j in 0..m {
            let mut d = self.at(j, j).re;
            for k in 0..j {
                d = d - l[j * m + k].norm_sqr();
            }
            if !(d > S::zero()) {
                return None;
            }
            let d = d.sqrt();
            l[j * m + j] = Complex::new(d, S::zero());
            for i in j + 1..m {
                let mut s = self.at(i, j);
                for k in 0..j {
                    s = s - l[i * m + k] * l[j * m + k].conj();
                }
                l[i * m + j] = s / d;
            }
        }
        Some(l)
    }
}

/// Curvature data at one point.
#[derive(Debug, Clone)]
pub struct CurvatureSample<S> {
    /// `|Rm|` in a unitary frame.
    pub norm: S,
    /// Eigenvalue-spread estimate of `g` (squared ratio of Cholesky pivots).
    pub condition: S,
    /// `Ric_{ij̄} = g^{kl̄} R_{ij̄kl̄}`.
    pub ricci: HermitianMatrix<S>,
}

fn shifted<S: Real>(z0: &[Complex<S>], moves: &[(usize, S)]) -> Vec<Complex<S>> {
    let mut z = z0.to_vec();
    for &(a, amount) in moves {
        let k = a / 2;
        if a % 2 == 0 {
            z[k].re = z[k].re + amount;
        } else {
            z[k].im = z[k].im + amount;
        }
    }
    z
}

pub fn kahler_curvature<S, F>(
    metric: F,
    z0: &[Complex<S>],
    step: S,
) -> Result<CurvatureSample<S>, GeometryError>
where
    S: Real,
    F: Fn(&[Complex<S>]) -> HermitianMatrix<S>,
{
    const HALF: usize = 3;
    let m = z0.len();
    let dims = 2 * m;
    let w1: Vec<S> = fd::central(1, HALF)
        .into_iter()
        .map(|w| S::lit(w) / step)
        .collect();
    let w2: Vec<S> = fd::central(2, HALF)
        .into_iter()
        .map(|w| S::lit(w) / (step * step))
        .collect();
    let off = |k: usize| S::lit(k as f64 - HALF as f64) * step;

    let g0 = metric(z0);
    let mut first = vec![HermitianMatrix::zeros(m); dims];
    let mut second = vec![vec![HermitianMatrix::zeros(m); dims]; dims];
    for a in 0..dims {
        for k in 0..=2 * HALF {
            if k == HALF {
                continue;
            }
            let mut g = metric(&shifted(z0, &[(a, off(k))]));
            g.axpy(-S::one(), &g0);
            first[a].axpy(w1[k], &g);
            second[a][a].axpy(w2[k], &g);
        }
    }
    for a in 0..dims {
        for b in a + 1..dims {
            let mut acc = HermitianMatrix::zeros(m);
            for k in 0..=2 * HALF {
                if k == HALF {
                    continue;
                }
                for l in 0..=2 * HALF {
                    if l == HALF {
                        continue;
                    }
                    let mut g = metric(&shifted(z0, &[(a, off(k)), (b, off(l))]));
                    g.axpy(-S::one(), &g0);
                    acc.axpy(w1[k] * w1[l], &g);
                }
            }
            second[b][a] = acc.clone();
            second[a][b] = acc;
        }
    }

    let half = S::lit(0.5);
    let quarter = S::lit(0.25);
    let i_unit = Complex::new(S::zero(), S::one());
    // ∂_k g and ∂_l̄ g
    let dk: Vec<HermitianMatrix<S>> = (0..m)
        .map(|k| {
            let mut out = HermitianMatrix::zeros(m);
            for e in 0..m * m {
                out.data[e] = (first[2 * k].data[e] - i_unit * first[2 * k + 1].data[e]) * half;
            }
            out
        })
        .collect();
    let dl: Vec<HermitianMatrix<S>> = (0..m)
        .map(|l| {
            let mut out = HermitianMatrix::zeros(m);
            for e in 0..m * m {
                out.data[e] = (first[2 * l].data[e] + i_unit * first[2 * l + 1].data[e]) * half;
            }
            out
        })
        .collect();

    let chol = g0.cholesky().ok_or_else(|| GeometryError::Positivity {
        node: 0,
        what: "metric not positive definite at curvature sample point".into(),
    })?;
    // A = L^{-1}
    let zero = Complex::new(S::zero(), S::zero());
    let mut a_inv = vec![zero; m * m];
    for col in 0..m {
        for i in 0..m {
            let mut s = if i == col {
                Complex::new(S::one(), S::zero())
            } else {
                zero
            };
            for k in 0..i {
                s = s - chol[i * m + k] * a_inv[k * m + col];
            }
            a_inv[i * m + col] = s / chol[i * m + i];
        }
    }
    // g^{-1} = A^H A
    let mut ginv = vec![zero; m * m];
    for i in 0..m {
        for j in 0..m {
            let mut s = zero;
            for k in 0..m {
                s = s + a_inv[k * m + i].conj() * a_inv[k * m + j];
            }
            ginv[i * m + j] = s;
        }
    }

    let idx = |i: usize, j: usize, k: usize, l: usize| ((i * m + j) * m + k) * m + l;
    let mut riem = vec![zero; m * m * m * m];
    for k in 0..m {
        for l in 0..m {
            let (xk, yk, xl, yl) = (2 * k, 2 * k + 1, 2 * l, 2 * l + 1);
            for i in 0..m {
                for j in 0..m {
                    let e = i * m + j;
                    let re = second[xk][xl].data[e] + second[yk][yl].data[e];
                    let im = second[xk][yl].data[e] - second[yk][xl].data[e];
                    let ddbar = (re + i_unit * im) * quarter;
                    let mut quad = zero;
                    for p in 0..m {
                        for q in 0..m {
                            quad = quad + ginv[q * m + p] * dk[k].at(i, q) * dl[l].at(p, j);
                        }
                    }
                    riem[idx(i, j, k, l)] = -ddbar + quad;
                }
            }
        }
    }

    let mut ricci = HermitianMatrix::zeros(m);
    for i in 0..m {
        for j in 0..m {
            let mut s = zero;
            for k in 0..m {
                for l in 0..m {
                    s = s + ginv[l * m + k] * riem[idx(i, j, k, l)];
                }
            }
            ricci.set(i, j, s);
        }
    }

    // unitary frame: R'_{αβ̄γδ̄} = A_{αi} Ā_{βj} A_{γk} Ā_{δl} R_{ij̄kl̄}
    let transform = |t: &[Complex<S>], slot: usize, conj: bool| -> Vec<Complex<S>> {
        let mut out = vec![zero; t.len()];
        for i in 0..m {
            for j in 0..m {
                for k in 0..m {
                    for l in 0..m {
                        let src = [i, j, k, l];
                        for alpha in src[slot]..m {
                            let mut dst = src;
                            dst[slot] = alpha;
                            let coef = a_inv[alpha * m + src[slot]];
                            let coef = if conj { coef.conj() } else { coef };
                            out[idx(dst[0], dst[1], dst[2], dst[3])] = out
                                [idx(dst[0], dst[1], dst[2], dst[3])]
                                + coef * t[idx(i, j, k, l)];
                        }
                    }
                }
            }
        }
        out
    };
    let mut t = transform(&riem, 0, false);
    t = transform(&t, 1, true);
    t = transform(&t, 2, false);
    t = transform(&t, 3, true);
    let norm = t.iter().map(|c| c.norm_sqr()).sum::<S>().sqrt();

    let diag: Vec<S> = (0..m).map(|i| chol[i * m + i].re).collect();
    let hi = diag.iter().cloned().fold(S::zero(), S::max);
    let lo = diag.iter().cloned().fold(S::infinity(), S::min);
    let condition = (hi / lo) * (hi / lo);
    Ok(CurvatureSample {
        norm,
        condition,
        ricci,
    })
}

/// `|Rm|` per node with a conditioning estimate per node.
#[derive(Debug, Clone)]
pub struct CurvatureNorm<S> {
    pub value: Vec<S>,
    pub condition: Vec<S>,
}

impl<S: Real> CurvatureNorm<S> {
    pub fn sup(&self) -> S {
        self.value.iter().cloned().fold(S::zero(), S::max)
    }
}

/// Finite-difference step in the log-affine chart.
const PATCH_STEP: f64 = 1e-2;

/// Sample of the curvature evaluator at node `i` (exposed for cross-checks).
///
/// The metric is written in the chart `w₁ = log z₁`, `w_k = z_k/z₁`, where
/// `ρ = 2 Re w₁ + log(1 + |w′|²)` and
/// `g_{ij̄} = u″ ∂_iρ ∂_j̄ρ + u′ ∂_i∂_j̄ρ`. At `w′ = 0` this is
/// `diag(u″, u′, …, u′)`, so strongly collapsed fibers stay well
/// conditioned. `u` is replaced by its Taylor jet at the node.
pub(crate) fn curvature_at_node<S: Real>(
    model: &AnsatzModel,
    rho: S,
    jet: [S; 4],
    base_level: Option<S>,
) -> Result<CurvatureSample<S>, GeometryError> {
    let [d1, d2, d3, d4] = jet;
    let half = S::lit(0.5);
    let sixth = S::lit(1.0 / 6.0);
    let two = S::lit(2.0);
    let local = move |s: S| {
        let up = d1 + s * (d2 + s * (d3 * half + s * d4 * sixth));
        let upp = d2 + s * (d3 + s * d4 * half);
        (up, upp)
    };
    let zero = Complex::new(S::zero(), S::zero());
    match model.kind {
        AnsatzKind::ProjectiveBundleK1 => {
            let n = model.n;
            let mut w0 = vec![zero; n];
            w0[0] = Complex::new(rho * half, S::zero());
            let metric = |w: &[Complex<S>]| {
                let norm: S = w[1..].iter().map(|c| c.norm_sqr()).sum();
                let d = S::one() + norm;
                let (up, upp) = local(two * w[0].re + d.ln() - rho);
                // ∂_iρ
                let mut grad = vec![Complex::new(S::one(), S::zero()); n];
                for k in 1..n {
                    grad[k] = w[k].conj() / d;
                }
                let mut g = HermitianMatrix::zeros(n);
                for i in 0..n {
                    for j in 0..n {
                        let mut v = grad[i] * grad[j].conj() * upp;
                        if i > 0 && j > 0 {
                            let mut fs = -(w[i].conj() * w[j]) / (d * d);
                            if i == j {
                                fs = fs + Complex::new(S::one() / d, S::zero());
                            }
                            v = v + fs * up;
                        }
                        g.set(i, j, v);
                    }
                }
                g
            };
            kahler_curvature(metric, &w0, S::lit(PATCH_STEP))
        }
        AnsatzKind::Product => {
            // the flat base factor contributes nothing to |Rm|
            let _ = base_level;
            let w0 = [Complex::new(rho * half, S::zero())];
            let metric = |w: &[Complex<S>]| {
                let (_, upp) = local(two * w[0].re - rho);
                let mut g = HermitianMatrix::zeros(1);
                g.set(0, 0, Complex::new(upp, S::zero()));
                g
            };
            kahler_curvature(metric, &w0, S::lit(PATCH_STEP))
        }
    }
}

/// Pointwise `|Rm|` of the profile metric.
pub fn riemann_norm<S: Real>(
    model: &AnsatzModel,
    profile: &Profile<S>,
) -> Result<CurvatureNorm<S>, GeometryError> {
    profile.check_positivity()?;
    let jets = profile.jets();
    let rho = profile.rho();
    let samples: Vec<Result<CurvatureSample<S>, GeometryError>> = (0..rho.len())
        .into_par_iter()
        .map(|i| {
            curvature_at_node(
                model,
                rho[i],
                [jets.d1[i], jets.d2[i], jets.d3[i], jets.d4[i]],
                profile.base_level(),
            )
            .map_err(|e| match e {
                GeometryError::Positivity { what, .. } => {
                    GeometryError::Positivity { node: i, what }
                }
                other => other,
            })
        })
        .collect();
    let mut value = Vec::with_capacity(rho.len());
    let mut condition = Vec::with_capacity(rho.len());
    for s in samples {
        let s = s?;
        value.push(s.norm);
        condition.push(s.condition);
    }
    Ok(CurvatureNorm { value, condition })
}

#[cfg(test)]
mod tests {
    use super::super::closed_form::*;
    use super::super::{ricci_eigenvalues, Grid};
    use super::*;

    #[test]
    fn euclidean_metric_is_flat() {
        let metric = |_z: &[Complex<f64>]| {
            let mut g = HermitianMatrix::zeros(2);
            g.set(0, 0, Complex::new(1.0, 0.0));
            g.set(1, 1, Complex::new(1.0, 0.0));
            g
        };
        let z0 = [Complex::new(0.3, 0.1), Complex::new(-0.2, 0.4)];
        let s = kahler_curvature(metric, &z0, 1e-2).unwrap();
        assert!(s.norm < 1e-12, "{}", s.norm);
    }

    #[test]
    fn fubini_study_cp1_closed_form() {
        // g = 1/(1+|w|²)², Ric = 2ω, |Rm| = 2 in the Kähler convention
        let metric = |z: &[Complex<f64>]| {
            let r = 1.0 + z[0].norm_sqr();
            let mut g = HermitianMatrix::zeros(1);
            g.set(0, 0, Complex::new(1.0 / (r * r), 0.0));
            g
        };
        for z in [
            Complex::new(0.0, 0.0),
            Complex::new(0.7, -0.3),
            Complex::new(2.0, 1.0),
        ] {
            let s = kahler_curvature(metric, &[z], 1e-2 * (1.0 + z.norm())).unwrap();
            assert!((s.norm - 2.0).abs() < 1e-8, "{}", s.norm);
            let g = 1.0 / (1.0 + z.norm_sqr()).powi(2);
            assert!((s.ricci.at(0, 0).re / g - 2.0).abs() < 1e-8);
        }
    }

    #[test]
    fn contraction_matches_ricci_eigenvalues_on_bundle() {
        let model = AnsatzModel::bundle(2).unwrap();
        let grid = Grid::new(400, 10.0).unwrap();
        let p = Profile::<f64>::from_fn(grid, fubini_study(2.0, 1.0, 0.4)).unwrap();
        let ric = ricci_eigenvalues(&model, &p).unwrap();
        let jets = p.jets();
        let rho = p.rho();
        for i in (20..380).step_by(37) {
            let s = curvature_at_node(
                &model,
                rho[i],
                [jets.d1[i], jets.d2[i], jets.d3[i], jets.d4[i]],
                None,
            )
            .unwrap();
            // in the log-affine chart at w′ = 0 Ric is diag(ν_f, ν_b)
            let nf = s.ricci.at(0, 0).re;
            let nb = s.ricci.at(1, 1).re;
            assert!(
                (nf - ric.fiber[i]).abs() < 1e-6 * (1.0 + ric.fiber[i].abs()),
                "{nf} {}",
                ric.fiber[i]
            );
            assert!(
                (nb - ric.base[i]).abs() < 1e-6 * (1.0 + ric.base[i].abs()),
                "{nb} {}",
                ric.base[i]
            );
        }
    }
}
