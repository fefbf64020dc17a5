//! Weighted b-spline finite elements with L2-1σ time stepping for the
//! time-fractional biharmonic equation
//! `D_t^α u + Δ²u - Δu = u - u³ + g` with `u = Δu = 0` on the boundary.

pub mod assembly;
pub mod bspline;
pub mod domain;
pub mod error;
pub mod experiments;
pub mod fractional;
pub mod linalg;
pub mod manufactured;
pub mod quadrature;
pub mod stepper;

pub use error::{Error, Result};
