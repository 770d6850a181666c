//! Monte Carlo estimation of safety and stability, and batch checks of the
//! pointwise control identities.

mod boundary;
mod identities;
mod monte_carlo;
mod stats;

pub use boundary::{boundary_check, project_to_boundary, BoundaryReport, BoundaryStatus, BISECTION_TOL, MAX_RAYS};
pub use identities::{identity_suite, IdentityCheck, IdentityOptions, IdentityReport};
pub use monte_carlo::{
    estimate_safety, estimate_stability, functional_observables, run_paths, MonteCarloOptions, MonteCarloReport,
    NamedCurve, PathOutcome, StabilityOptions, StabilityReport,
};
pub use stats::{wilson_interval, ProbabilityEstimate, WILSON_Z95};
