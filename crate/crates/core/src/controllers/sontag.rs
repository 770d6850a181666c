use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::functionals::{drift_decomposition, Sclkf};
use crate::history::HistorySegment;
use crate::sim::{FeedbackController, SddeModel};

/// Below this, `‖q‖²` (and `‖φ‖`) count as zero.
pub const DEFAULT_ZERO_THRESHOLD: f64 = 1e-12;

/// Universal formula `κ(λ, p, q) = -(p + √(p² + λ‖q‖⁴)) / ‖q‖² · q`, and `0` for `q ≈ 0`.
pub fn sontag_kappa(lambda: f64, p: f64, q: &DVector<f64>, zero_threshold: f64) -> DVector<f64> {
    let q2 = q.norm_squared();
    if q2 <= zero_threshold {
        return DVector::zeros(q.len());
    }
    let scale = -(p + (p * p + lambda * q2 * q2).sqrt()) / q2;
    q * scale
}

/// Stabilizer `u(φ) = κ(λ, 𝔞(φ), (L_g V₁(φ))ᵀ)` with
/// `𝔞 = 𝓛ₐV₁ + D⁺V₂ + γ₁(V)`.
#[derive(Clone)]
pub struct SontagController {
    sclkf: Sclkf,
    model: Arc<dyn SddeModel>,
    lambda: f64,
    zero_threshold: f64,
}

impl SontagController {
    pub fn new(sclkf: Sclkf, model: Arc<dyn SddeModel>, lambda: f64, zero_threshold: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::config("lambda", format!("must be positive, got {lambda}")));
        }
        if !(zero_threshold > 0.0) {
            return Err(Error::config(
                "zero_threshold",
                format!("must be positive, got {zero_threshold}"),
            ));
        }
        Ok(Self {
            sclkf,
            model,
            lambda,
            zero_threshold,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn sclkf(&self) -> &Sclkf {
        &self.sclkf
    }

    /// `(𝔞(φ), 𝔟(φ)ᵀ)`.
    pub fn terms(&self, t: f64, phi: &HistorySegment) -> Result<(f64, DVector<f64>)> {
        let d = drift_decomposition(self.sclkf.functional.as_ref(), self.model.as_ref(), t, phi)?;
        Ok((d.a_drift + self.sclkf.gamma1.eval(d.value), d.b_row))
    }

    pub fn stabilizing_control(&self, t: f64, phi: &HistorySegment) -> Result<DVector<f64>> {
        let m = self.model.dims().input;
        if phi.sup_norm() <= self.zero_threshold {
            return Ok(DVector::zeros(m));
        }
        let (a, b) = self.terms(t, phi)?;
        Ok(sontag_kappa(self.lambda, a, &b, self.zero_threshold))
    }
}

impl FeedbackController for SontagController {
    fn input_dim(&self) -> usize {
        self.model.dims().input
    }

    fn control(&self, t: f64, phi: &HistorySegment) -> Result<DVector<f64>> {
        self.stabilizing_control(t, phi)
    }
}
