use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::controllers::SlidingSurface;
use crate::error::{Error, Result};
use crate::functionals::{Region, Scbkf};
use crate::history::HistorySegment;

/// Bisection stops once `0 < h ≤ BISECTION_TOL` on the interior end.
pub const BISECTION_TOL: f64 = 1e-10;

/// Rays tried per sample before giving up.
pub const MAX_RAYS: usize = 100;

const MAX_RAY_DOUBLINGS: usize = 60;
const MAX_BISECTIONS: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryStatus {
    Pass,
    Warn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryReport {
    pub count: usize,
    /// `U²(ξ)`.
    pub reference: f64,
    /// `min U²(φ_b) / U²(ξ)` over the projected buffers.
    pub min_ratio: Option<f64>,
    /// Largest `h` among the projected buffers.
    pub max_boundary_h: Option<f64>,
    pub status: BoundaryStatus,
}

/// Projects `inside` onto `{h = 0}` along a random ray: the ray is extended
/// until `h < 0`, then the segment is bisected. Returns the interior end,
/// with `0 < h ≤ BISECTION_TOL` unless floating point stalls the bisection
/// first.
pub fn project_to_boundary<R: Rng + ?Sized>(
    scbkf: &Scbkf,
    inside: &HistorySegment,
    rng: &mut R,
) -> Result<HistorySegment> {
    let h_in = scbkf.eval_h(inside)?;
    if scbkf.classify(h_in) != Region::Interior {
        return Err(Error::Domain(format!(
            "projection needs an interior buffer, h = {h_in}"
        )));
    }
    let scale = 1.0 + inside.sup_norm();
    for _ in 0..MAX_RAYS {
        let c0: Vec<f64> = (0..inside.state_dim())
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let c1: Vec<f64> = (0..inside.state_dim())
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let dir = HistorySegment::new(inside.delay(), inside.grid_step(), |t| {
            DVector::from_fn(c0.len(), |i, _| scale * (c0[i] + c1[i] * t))
        })?;
        let mut step = 1.0;
        let mut exterior = None;
        for _ in 0..MAX_RAY_DOUBLINGS {
            let probe = inside.combine(1.0, &dir, step)?;
            if scbkf.eval_h(&probe)? < 0.0 {
                exterior = Some(step);
                break;
            }
            step *= 2.0;
        }
        let Some(mut hi) = exterior else { continue };
        let mut lo = 0.0;
        let mut best = inside.clone();
        for _ in 0..MAX_BISECTIONS {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let probe = inside.combine(1.0, &dir, mid)?;
            let h = scbkf.eval_h(&probe)?;
            if h > 0.0 {
                lo = mid;
                best = probe;
                if h <= BISECTION_TOL {
                    break;
                }
            } else {
                hi = mid;
            }
        }
        if lo > 0.0 {
            return Ok(best);
        }
    }
    Err(Error::Sampling(format!(
        "no exterior point found along {MAX_RAYS} random rays"
    )))
}

/// Sampled check of `U²(φ) ≥ U²(ξ)` near the boundary of the safe set.
///
/// A ratio below one is a warning: the boundary is infinite-dimensional and
/// the sample cannot certify or refute the condition.
pub fn boundary_check<R: Rng + ?Sized>(
    surface: &SlidingSurface,
    xi: &HistorySegment,
    count: usize,
    rng: &mut R,
    sampler: &mut dyn FnMut(&mut R) -> Result<HistorySegment>,
) -> Result<BoundaryReport> {
    let scbkf = &surface.scbkf;
    let h_xi = scbkf.eval_h(xi)?;
    if scbkf.classify(h_xi) != Region::Interior {
        return Err(Error::SafeSetViolation { h: h_xi });
    }
    let reference = surface.value(xi)?.powi(2);
    let mut min_ratio: Option<f64> = None;
    let mut max_h: Option<f64> = None;
    for _ in 0..count {
        let inside = sampler(rng)?;
        let projected = project_to_boundary(scbkf, &inside, rng)?;
        let h = scbkf.eval_h(&projected)?;
        let ratio = surface.value(&projected)?.powi(2) / reference;
        min_ratio = Some(min_ratio.map_or(ratio, |m| m.min(ratio)));
        max_h = Some(max_h.map_or(h, |m| m.max(h)));
    }
    let status = match min_ratio {
        Some(r) if !(r >= 1.0) => BoundaryStatus::Warn,
        _ => BoundaryStatus::Pass,
    };
    Ok(BoundaryReport {
        count,
        reference,
        min_ratio,
        max_boundary_h: max_h,
        status,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::car_following::{build_functionals, build_surface, sample_interior_buffer, CarFollowingParams};
    use crate::controllers::{AdditiveSurface, ScalarMap};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn xi() -> HistorySegment {
        HistorySegment::constant(0.2, 1e-2, &[16.0, 10.0, 150.0]).unwrap()
    }

    #[test]
    fn projection_lands_on_boundary() {
        let params = CarFollowingParams::default();
        let f = build_functionals(&params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let inside = sample_interior_buffer(&mut rng, &params, 1e-2).unwrap();
            let b = project_to_boundary(&f.scbkf, &inside, &mut rng).unwrap();
            let h = f.scbkf.eval_h(&b).unwrap();
            assert!(h > 0.0 && h <= 1e-8, "h = {h}");
        }
    }

    #[test]
    fn barrier_surface_passes() {
        let params = CarFollowingParams::default();
        let surface = build_surface(&params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = boundary_check(&surface, &xi(), 20, &mut rng, &mut |rng| {
            sample_interior_buffer(rng, &params, 1e-2)
        })
        .unwrap();
        assert_eq!(r.status, BoundaryStatus::Pass);
        assert!(r.min_ratio.unwrap() >= 1.0);
    }

    #[test]
    fn lyapunov_only_surface_warns() {
        let params = CarFollowingParams::default();
        let f = build_functionals(&params).unwrap();
        let psi = AdditiveSurface::new(ScalarMap::identity(), ScalarMap::zero(), (0.0, 1e3)).unwrap();
        let surface = SlidingSurface::new(f.sclkf, f.scbkf, Arc::new(psi)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // Far from the target speed, U(ξ) = V(ξ) dominates boundary buffers near v_d.
        let xi = HistorySegment::constant(0.2, 1e-2, &[2.0, 10.0, 150.0]).unwrap();
        let r = boundary_check(&surface, &xi, 30, &mut rng, &mut |rng| {
            sample_interior_buffer(rng, &params, 1e-2)
        })
        .unwrap();
        assert_eq!(r.status, BoundaryStatus::Warn);
    }

    #[test]
    fn zero_samples_pass_vacuously() {
        let params = CarFollowingParams::default();
        let surface = build_surface(&params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r = boundary_check(&surface, &xi(), 0, &mut rng, &mut |rng| {
            sample_interior_buffer(rng, &params, 1e-2)
        })
        .unwrap();
        assert_eq!(r.status, BoundaryStatus::Pass);
        assert!(r.min_ratio.is_none());
    }
}
