//! Control laws built from the Lyapunov and barrier functionals.

mod admissible;
mod sliding;
mod sontag;

pub use admissible::{safety_admissible, Admissibility};
pub use sliding::{
    aux_j, AdditiveSurface, ScalarMap, SlidingController, SlidingSurface, SlidingTerms, SurfaceMap, TraceWeighting,
    DEFAULT_SMOOTHING, DEFAULT_TRANSVERSALITY_TOL,
};
pub use sontag::{sontag_kappa, SontagController, DEFAULT_ZERO_THRESHOLD};
