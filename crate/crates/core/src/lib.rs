//! Constrained Fokker-Planck dynamics of many-particle storage systems in
//! even double-well potentials, with the reduced models that describe its
//! small-parameter limits: two-peak dynamics, peak widening, mass splitting,
//! the event-driven limit model and the Kramers (fast reaction) regime.

pub mod fast_reaction;
pub mod fp_solver;
pub mod limit_dynamics;
pub mod mass_splitting;
pub mod ode;
pub mod path;
pub mod peak_widening;
pub mod potential;
pub mod quad;
pub mod roots;
pub mod scalar;
pub mod two_peaks;

pub use path::{ConstraintPath, LinearPath, PiecewiseLinearPath};
pub use potential::{ArctanModel, Branch, Potential, Quartic};
pub use scalar::Real;

pub type DoubleWell = potential::DoubleWell<f64>;
pub type Landmarks = potential::Landmarks<f64>;
