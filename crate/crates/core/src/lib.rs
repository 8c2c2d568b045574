//! Newton-like fixed-time extremum seeking.
//!
//! A static map `φ` is sampled through a sinusoidal probe; the controller
//! estimates the gradient and the inverse Hessian from those samples and
//! steers its input with a fixed-time Newton flow.

pub mod dither;
pub mod dynamics;
pub mod exec;
pub mod experiments;
pub mod params;
pub mod plant;
pub mod sim;

pub use exec::Execution;
pub use params::{ControllerParams, ParamError, Rational, ValidatedParams};
pub use plant::{Analytic, CostMap, Measure};
