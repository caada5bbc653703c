//! Scalar abstractions.
//!
//! The floating-point side of the crate (geometry, flow, monitors, rate fits)
//! is written against [`Real`]; the cohomology ledger is written against
//! [`Field`] so that it runs in exact rational arithmetic as well as in
//! floating point.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, Num, Signed};

/// Floating-point scalar used by the numerical modules (`f32` or `f64`).
pub trait Real:
    Float + FromPrimitive + Debug + Display + Sum + Send + Sync + Default + 'static
{
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn from_usize_lossy(x: usize) -> Self {
        Self::from_usize(x).expect("usize representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Ordered field used by the class ledger: `BigRational` for exact work,
/// `f64` for quick floating-point evaluation of the same formulas.
pub trait Field:
    Num + Signed + Clone + PartialOrd + FromPrimitive + Debug + Display + Send + Sync
{
}

impl<T> Field for T where
    T: Num + Signed + Clone + PartialOrd + FromPrimitive + Debug + Display + Send + Sync
{
}
