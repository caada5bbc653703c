//! Numerical laboratory for the Kähler–Ricci flow with a collapsing fiber.
//!
//! * [`classes`]: exact Kähler-class bookkeeping (singular time, collapsing
//!   condition, reference volume polynomial).
//! * [`calabi`]: Calabi-ansatz geometry on a radial grid.
//! * [`flow`]: time integration of the flow up to the singular time.
//! * [`monitors`]: per-snapshot diagnostics.
//! * [`rates`]: power-law exponent fits.
//! * [`config`] and [`cli`]: experiment files and the batch driver.
//!
//! The numerical modules are generic over [`Real`]; the class ledger is
//! generic over [`Field`] and normally runs over [`Rational`].

pub mod banded;
pub mod calabi;
pub mod classes;
pub mod cli;
pub mod config;
pub mod fd;
pub mod flow;
pub mod monitors;
pub mod rates;
pub mod scalar;

pub use scalar::{Field, Real};

pub type Rational = num_rational::BigRational;

pub type ExactClass = classes::KahlerClass<Rational>;
pub type ExactTable = classes::IntersectionTable<Rational>;
pub type ExactCone = classes::PositivityCone<Rational>;

pub type Grid64 = calabi::Grid<f64>;
pub type Profile64 = calabi::Profile<f64>;

pub type Grid32 = calabi::Grid<f32>;
pub type Profile32 = calabi::Profile<f32>;

pub type FlowState64 = flow::FlowState<f64>;
pub type MonitorRecord64 = monitors::MonitorRecord<f64>;
pub type RateFit64 = rates::RateFit<f64>;
