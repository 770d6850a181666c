//! Safe stabilization of control-affine stochastic time-delay systems.
//!
//! The crate is organised bottom-up:
//!
//! - [`history`]: the delayed state `x_t` sampled on a uniform grid over `[-Δ, 0]`.
//! - [`sim`]: the SDDE model `dx = (f(x_t) + g(x_t) u) dt + ρ(x_t) dw` and an
//!   Euler–Maruyama closed-loop driver.
//! - [`functionals`]: separable Krasovskii functionals, class-K functions, the
//!   Lyapunov (SCLKF) and barrier (SCBKF) structures and their Itô drifts.
//! - [`controllers`]: the Sontag-type stabilizer, the barrier admissibility
//!   test and the sliding-mode safe-stabilizing controller.
//! - [`verification`]: Monte Carlo safety/stability estimation and pointwise
//!   identity suites.
//! - [`car_following`]: the stochastic delayed car-following benchmark.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod car_following;
pub mod controllers;
pub mod error;
pub mod functionals;
pub mod history;
pub mod sim;
pub mod verification;

pub use error::{Error, Result};
pub use history::HistorySegment;

pub use nalgebra::{DMatrix, DVector};
