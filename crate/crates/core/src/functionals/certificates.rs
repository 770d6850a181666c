use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{ClassK, SeparableFunctional};
use crate::error::{Error, Result};
use crate::history::HistorySegment;

/// Half-width of the band `|h| ≤ tol` classified as boundary.
pub const DEFAULT_BOUNDARY_TOL: f64 = 1e-9;

/// Stochastic control Lyapunov–Krasovskii functional.
///
/// The infimum condition on the drift is not certified; it is a modelling
/// assumption of whoever registers the functional.
#[derive(Clone)]
pub struct Sclkf {
    pub functional: Arc<dyn SeparableFunctional>,
    pub gamma1: ClassK,
    pub alpha1: ClassK,
    pub alpha2: ClassK,
}

/// One buffer on which a sampled sandwich bound failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichViolation {
    pub index: usize,
    pub lower: f64,
    pub value: f64,
    pub upper: f64,
}

impl Sclkf {
    pub fn new(functional: Arc<dyn SeparableFunctional>, gamma1: ClassK, alpha1: ClassK, alpha2: ClassK) -> Self {
        Self {
            functional,
            gamma1,
            alpha1,
            alpha2,
        }
    }

    pub fn value(&self, phi: &HistorySegment) -> Result<f64> {
        self.functional.value(phi)
    }

    /// Checks `α₁(|φ(0)|) ≤ V(φ) ≤ α₂(‖φ‖)` on the given buffers. The bound is
    /// global, so a clean sample is evidence, not proof.
    pub fn spot_check_sandwich(&self, buffers: &[HistorySegment]) -> Result<Vec<SandwichViolation>> {
        let mut out = Vec::new();
        for (index, phi) in buffers.iter().enumerate() {
            let now = phi.newest().iter().map(|x| x * x).sum::<f64>().sqrt();
            let value = self.value(phi)?;
            let lower = self.alpha1.eval(now);
            let upper = self.alpha2.eval(phi.sup_norm());
            if value < lower || value > upper {
                out.push(SandwichViolation {
                    index,
                    lower,
                    value,
                    upper,
                });
            }
        }
        Ok(out)
    }
}

/// Where a buffer lies relative to the safe set `𝕊 = {h ≥ 0}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Region {
    Interior,
    Boundary { tol: f64 },
    Exterior,
}

/// Stochastic control barrier–Krasovskii functional `B` for the safe set of `h`.
#[derive(Clone)]
pub struct Scbkf {
    pub barrier: Arc<dyn SeparableFunctional>,
    pub safe_set: Arc<dyn SeparableFunctional>,
    pub gamma2: ClassK,
    pub alpha1: ClassK,
    pub alpha2: ClassK,
    pub boundary_tol: f64,
}

impl Scbkf {
    pub fn new(
        barrier: Arc<dyn SeparableFunctional>,
        safe_set: Arc<dyn SeparableFunctional>,
        gamma2: ClassK,
        alpha1: ClassK,
        alpha2: ClassK,
    ) -> Self {
        Self {
            barrier,
            safe_set,
            gamma2,
            alpha1,
            alpha2,
            boundary_tol: DEFAULT_BOUNDARY_TOL,
        }
    }

    pub fn eval_h(&self, phi: &HistorySegment) -> Result<f64> {
        self.safe_set.value(phi)
    }

    /// Ties at `|h| = tol` count as boundary.
    pub fn classify(&self, h: f64) -> Region {
        if h.abs() <= self.boundary_tol {
            Region::Boundary { tol: self.boundary_tol }
        } else if h > 0.0 {
            Region::Interior
        } else {
            Region::Exterior
        }
    }

    pub fn region(&self, phi: &HistorySegment) -> Result<Region> {
        Ok(self.classify(self.eval_h(phi)?))
    }

    /// `B(φ)`; fails with [`Error::SafeSetViolation`] unless `h(φ) > 0`.
    pub fn eval_barrier(&self, phi: &HistorySegment) -> Result<f64> {
        let h = self.eval_h(phi)?;
        if !(h > 0.0) {
            return Err(Error::SafeSetViolation { h });
        }
        self.barrier.value(phi)
    }

    /// Checks `α₁(h) ≤ 1/B ≤ α₂(h)` on interior buffers; exterior ones are skipped.
    pub fn spot_check_reciprocal(&self, buffers: &[HistorySegment]) -> Result<Vec<SandwichViolation>> {
        let mut out = Vec::new();
        for (index, phi) in buffers.iter().enumerate() {
            let h = self.eval_h(phi)?;
            if h <= 0.0 {
                continue;
            }
            let value = 1.0 / self.eval_barrier(phi)?;
            let lower = self.alpha1.eval(h);
            let upper = self.alpha2.eval(h);
            if value < lower || value > upper {
                out.push(SandwichViolation {
                    index,
                    lower,
                    value,
                    upper,
                });
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functionals::{HeadwaySafeSet, LogReciprocalBarrier};

    fn scbkf() -> Scbkf {
        let h: Arc<dyn SeparableFunctional> = Arc::new(HeadwaySafeSet::new(3, 0, 2, 1.8, 0.01));
        let b = Arc::new(LogReciprocalBarrier::new("headway_barrier", h.clone()));
        Scbkf::new(b, h, ClassK::identity(), ClassK::identity(), ClassK::identity())
    }

    #[test]
    fn region_classification() {
        let s = scbkf();
        let inside = HistorySegment::constant(0.2, 0.1, &[10.0, 0.0, 150.0]).unwrap();
        assert_eq!(s.region(&inside).unwrap(), Region::Interior);
        let outside = HistorySegment::constant(0.2, 0.1, &[10.0, 0.0, 0.0]).unwrap();
        assert_eq!(s.region(&outside).unwrap(), Region::Exterior);
        assert_eq!(
            s.classify(0.0),
            Region::Boundary {
                tol: DEFAULT_BOUNDARY_TOL
            }
        );
        assert_eq!(
            s.classify(1e-9),
            Region::Boundary {
                tol: DEFAULT_BOUNDARY_TOL
            }
        );
        assert_eq!(s.classify(-2e-9), Region::Exterior);
    }

    #[test]
    fn barrier_requires_interior() {
        let s = scbkf();
        let outside = HistorySegment::constant(0.2, 0.1, &[10.0, 0.0, 0.0]).unwrap();
        assert_eq!(s.eval_barrier(&outside).unwrap_err().category(), "safe_set_violation");
        let on = HistorySegment::constant(0.2, 0.1, &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(s.eval_barrier(&on).unwrap_err(), Error::SafeSetViolation { h: 0.0 });
    }
}
