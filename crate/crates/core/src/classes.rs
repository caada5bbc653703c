//! Exact cohomology ledger.
//!
//! Kähler classes are coefficient vectors over a fixed generator basis of
//! `H^{1,1}`. Everything here is generic over [`Field`], and the shipped
//! configurations run it over `BigRational`, so identities such as the
//! collapsing condition hold exactly rather than to a tolerance.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::scalar::Field;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ClassError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Generator labels of `H^{1,1}(X)` together with `n = dim X` and the fiber
/// dimension `r`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratorBasis {
    labels: Vec<String>,
    dim_complex: usize,
    fiber_dim: usize,
}

impl GeneratorBasis {
    pub fn new(
        labels: Vec<String>,
        dim_complex: usize,
        fiber_dim: usize,
    ) -> Result<Self, ClassError> {
        if labels.is_empty() {
            return Err(ClassError::Config("generator basis is empty".into()));
        }
        if fiber_dim == 0 || fiber_dim >= dim_complex {
            return Err(ClassError::Config(format!(
                "fiber dimension r = {fiber_dim} must satisfy 0 < r < n = {dim_complex}"
            )));
        }
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(ClassError::Config(format!(
                    "duplicate generator label `{l}`"
                )));
            }
        }
        Ok(Self {
            labels,
            dim_complex,
            fiber_dim,
        })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim_complex(&self) -> usize {
        self.dim_complex
    }

    pub fn fiber_dim(&self) -> usize {
        self.fiber_dim
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

/// A class in `H^{1,1}` written in the generator basis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KahlerClass<F> {
    pub coeffs: Vec<F>,
}

impl<F: Field> KahlerClass<F> {
    pub fn new(coeffs: Vec<F>) -> Self {
        Self { coeffs }
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_zero())
    }

    fn check_same_basis(&self, other: &Self) -> Result<(), ClassError> {
        if self.len() != other.len() {
            return Err(ClassError::Config(format!(
                "basis mismatch: {} vs {} coefficients",
                self.len(),
                other.len()
            )));
        }
        Ok(())
    }

    /// `self + s * other`
    pub fn axpy(&self, s: &F, other: &Self) -> Result<Self, ClassError> {
        self.check_same_basis(other)?;
        let coeffs = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a.clone() + s.clone() * b.clone())
            .collect();
        Ok(Self { coeffs })
    }

    pub fn sub(&self, other: &Self) -> Result<Self, ClassError> {
        self.axpy(&(-F::one()), other)
    }

    pub fn scale(&self, s: &F) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|c| s.clone() * c.clone()).collect(),
        }
    }
}

impl<F: fmt::Display> fmt::Display for KahlerClass<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.coeffs.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

/// Top-degree intersection numbers of generators. Keys are sorted index
/// multisets of length `n`, so the table is symmetric by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct IntersectionTable<F> {
    degree: usize,
    num_generators: usize,
    pairings: BTreeMap<Vec<usize>, F>,
}

impl<F: Field> IntersectionTable<F> {
    pub fn new(degree: usize, num_generators: usize) -> Self {
        Self {
            degree,
            num_generators,
            pairings: BTreeMap::new(),
        }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Records the pairing of the given generator monomial. Re-inserting a
    /// permutation of an existing key with a different value is an error.
    pub fn insert(&mut self, monomial: &[usize], value: F) -> Result<(), ClassError> {
        if monomial.len() != self.degree {
            return Err(ClassError::Config(format!(
                "monomial {monomial:?} has degree {}, expected {}",
                monomial.len(),
                self.degree
            )));
        }
        if let Some(&g) = monomial.iter().find(|&&g| g >= self.num_generators) {
            return Err(ClassError::Config(format!(
                "generator index {g} out of range"
            )));
        }
        let mut key = monomial.to_vec();
        key.sort_unstable();
        if let Some(old) = self.pairings.get(&key) {
            if *old != value {
                return Err(ClassError::Config(format!(
                    "conflicting pairing for {key:?}: {old} vs {value}"
                )));
            }
        }
        self.pairings.insert(key, value);
        Ok(())
    }

    pub fn get(&self, monomial: &[usize]) -> Option<&F> {
        let mut key = monomial.to_vec();
        key.sort_unstable();
        self.pairings.get(&key)
    }

    /// Multilinear top product `[c_1]·[c_2]···[c_n]`.
    pub fn top_product(&self, classes: &[&KahlerClass<F>]) -> Result<F, ClassError> {
        if classes.len() != self.degree {
            return Err(ClassError::Config(format!(
                "top product needs {} factors, got {}",
                self.degree,
                classes.len()
            )));
        }
        for c in classes {
            if c.len() != self.num_generators {
                return Err(ClassError::Config("basis mismatch in top product".into()));
            }
        }
        let g = self.num_generators;
        let mut total = F::zero();
        let mut idx = vec![0usize; self.degree];
        loop {
            let coeff = idx
                .iter()
                .zip(classes)
                .fold(F::one(), |acc, (&i, c)| acc * c.coeffs[i].clone());
            if !coeff.is_zero() {
                let pairing = self.get(&idx).ok_or_else(|| {
                    ClassError::Config(format!("missing intersection entry for monomial {idx:?}"))
                })?;
                total = total + coeff * pairing.clone();
            }
            // odometer increment
            let mut pos = 0;
            loop {
                if pos == self.degree {
                    return Ok(total);
                }
                idx[pos] += 1;
                if idx[pos] < g {
                    break;
                }
                idx[pos] = 0;
                pos += 1;
            }
        }
    }

    /// `[a]^k · [b]^{n-k}`
    pub fn mixed_power(
        &self,
        a: &KahlerClass<F>,
        k: usize,
        b: &KahlerClass<F>,
    ) -> Result<F, ClassError> {
        let factors: Vec<&KahlerClass<F>> = (0..self.degree)
            .map(|i| if i < k { a } else { b })
            .collect();
        self.top_product(&factors)
    }
}

/// Open cone cut out by finitely many linear functionals, all of which must
/// be strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct PositivityCone<F> {
    pub functionals: Vec<Vec<F>>,
}

impl<F: Field> PositivityCone<F> {
    pub fn new(functionals: Vec<Vec<F>>) -> Self {
        Self { functionals }
    }

    fn pair(row: &[F], class: &KahlerClass<F>) -> Result<F, ClassError> {
        if row.len() != class.len() {
            return Err(ClassError::Config(format!(
                "cone functional has {} entries, class has {}",
                row.len(),
                class.len()
            )));
        }
        Ok(row
            .iter()
            .zip(&class.coeffs)
            .fold(F::zero(), |acc, (l, c)| acc + l.clone() * c.clone()))
    }

    pub fn evaluate(&self, class: &KahlerClass<F>) -> Result<Vec<F>, ClassError> {
        self.functionals
            .iter()
            .map(|row| Self::pair(row, class))
            .collect()
    }

    pub fn contains(&self, class: &KahlerClass<F>) -> Result<bool, ClassError> {
        Ok(self.evaluate(class)?.iter().all(|v| v.is_positive()))
    }
}

/// Maximal existence time of the flow in class terms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SingularTime<F> {
    Finite(F),
    Infinite,
}

impl<F: Clone> SingularTime<F> {
    pub fn finite(&self) -> Option<F> {
        match self {
            SingularTime::Finite(t) => Some(t.clone()),
            SingularTime::Infinite => None,
        }
    }
}

impl<F: fmt::Display> fmt::Display for SingularTime<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SingularTime::Finite(t) => write!(f, "{t}"),
            SingularTime::Infinite => write!(f, "inf"),
        }
    }
}

/// `[ω₀] − t·c₁(X)`
pub fn class_at<F: Field>(
    omega0: &KahlerClass<F>,
    c1: &KahlerClass<F>,
    t: &F,
) -> Result<KahlerClass<F>, ClassError> {
    omega0.axpy(&(-t.clone()), c1)
}

/// First time at which a cone functional vanishes along `[ω₀] − t·c₁`.
pub fn singular_time<F: Field>(
    omega0: &KahlerClass<F>,
    c1: &KahlerClass<F>,
    cone: &PositivityCone<F>,
) -> Result<SingularTime<F>, ClassError> {
    omega0.check_same_basis(c1)?;
    let start = cone.evaluate(omega0)?;
    if let Some(i) = start.iter().position(|v| !v.is_positive()) {
        return Err(ClassError::InvalidInput(format!(
            "initial class {omega0} is not inside the positivity cone (functional {i} = {})",
            start[i]
        )));
    }
    let rates = cone.evaluate(c1)?;
    let mut best: Option<F> = None;
    for (value, rate) in start.into_iter().zip(rates) {
        if rate.is_positive() {
            let hit = value / rate;
            best = Some(match best {
                Some(b) if b <= hit => b,
                _ => hit,
            });
        }
    }
    Ok(best.map_or(SingularTime::Infinite, SingularTime::Finite))
}

/// `([ω₀] − T·c₁) − target`, all zero exactly when the limiting class is
/// the pulled-back base class.
pub fn collapsing_condition_residual<F: Field>(
    omega0: &KahlerClass<F>,
    c1: &KahlerClass<F>,
    singular_time: &F,
    target: &KahlerClass<F>,
) -> Result<KahlerClass<F>, ClassError> {
    class_at(omega0, c1, singular_time)?.sub(target)
}

fn binomial<F: Field>(n: usize, k: usize) -> F {
    let mut acc = F::one();
    for i in 0..k {
        acc = acc * F::from_usize(n - i).expect("small integer")
            / F::from_usize(i + 1).expect("small integer");
    }
    acc
}

/// Total volume of the reference metric
/// `ĥ_t = ((T−t)ω₀ + t·π*ω_Σ)/T`, grouped by powers of `(T − t)`:
///
/// `∫ ĥ_t^n = Σ_k grouped[k] · t^{n−k} · (T−t)^k`
/// with `grouped[k] = T^{−n} C(n,k) [ω₀]^k [π*ω_Σ]^{n−k}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceVolumePolynomial<F> {
    pub degree: usize,
    pub singular_time: F,
    pub grouped: Vec<F>,
    /// `[ω₀]^n ≤ 0`: the configured initial class carries no volume.
    pub degenerate: bool,
}

impl<F: Field> ReferenceVolumePolynomial<F> {
    /// Coefficient of `(T−t)^k` at time `t`.
    pub fn coefficient_at(&self, k: usize, t: &F) -> F {
        let mut tp = F::one();
        for _ in 0..(self.degree - k) {
            tp = tp * t.clone();
        }
        self.grouped[k].clone() * tp
    }

    pub fn eval(&self, t: &F) -> F {
        let gap = self.singular_time.clone() - t.clone();
        let mut total = F::zero();
        let mut gp = F::one();
        for k in 0..=self.degree {
            total = total + self.coefficient_at(k, t) * gp.clone();
            gp = gp * gap.clone();
        }
        total
    }

    /// Fully expanded polynomial in `s = T − t`: returns the coefficients of
    /// `s^0, …, s^n` after substituting `t = T − s`.
    pub fn in_gap_variable(&self) -> Vec<F> {
        let n = self.degree;
        let big_t = &self.singular_time;
        let mut out = vec![F::zero(); n + 1];
        for k in 0..=n {
            // s^k (T − s)^{n−k} = Σ_j C(n−k, j) T^{n−k−j} (−s)^j s^k
            let m = n - k;
            for j in 0..=m {
                let mut term = self.grouped[k].clone() * binomial::<F>(m, j);
                for _ in 0..(m - j) {
                    term = term * big_t.clone();
                }
                if j % 2 == 1 {
                    term = -term;
                }
                out[k + j] = out[k + j].clone() + term;
            }
        }
        out
    }

    pub fn is_identically_zero(&self) -> bool {
        self.grouped.iter().all(|c| c.is_zero())
    }

    /// Smallest `k` with a nonzero grouped coefficient.
    pub fn lowest_power(&self) -> Option<usize> {
        self.grouped.iter().position(|c| !c.is_zero())
    }
}

pub fn reference_volume_polynomial<F: Field>(
    omega0: &KahlerClass<F>,
    sigma_pullback: &KahlerClass<F>,
    table: &IntersectionTable<F>,
    singular_time: &F,
) -> Result<ReferenceVolumePolynomial<F>, ClassError> {
    omega0.check_same_basis(sigma_pullback)?;
    if !singular_time.is_positive() {
        return Err(ClassError::InvalidInput(format!(
            "singular time must be positive, got {singular_time}"
        )));
    }
    let n = table.degree();
    let mut t_pow = F::one();
    for _ in 0..n {
        t_pow = t_pow * singular_time.clone();
    }
    let grouped = (0..=n)
        .map(|k| {
            let p = table.mixed_power(omega0, k, sigma_pullback)?;
            Ok(binomial::<F>(n, k) * p / t_pow.clone())
        })
        .collect::<Result<Vec<F>, ClassError>>()?;
    let volume = table.mixed_power(omega0, n, sigma_pullback)?;
    Ok(ReferenceVolumePolynomial {
        degree: n,
        singular_time: singular_time.clone(),
        grouped,
        degenerate: !volume.is_positive(),
    })
}
