//! Smoothly separable functionals `V(φ) = V₁(φ(0)) + V₂(φ)` and their Itô drift.
//!
//! A functional supplies the pointwise part `V₁` together with its gradient and
//! Hessian, and the history part `V₂` together with its analytic upper Dini
//! derivative `D⁺V₂`. The pointwise part is allowed to read the rest of the
//! buffer as frozen context; the log-barrier wrap uses this to keep the
//! separable structure for `ln(1 + 1/h(φ))`.

mod builtin;
mod certificates;
mod class_k;

pub use builtin::{HeadwaySafeSet, IntegralSeparable, LogReciprocalBarrier, QuadraticTracking};
pub use certificates::{Region, SandwichViolation, Scbkf, Sclkf, DEFAULT_BOUNDARY_TOL};
pub use class_k::{ClassK, ClassKKind, DEFAULT_CLASS_K_RANGE};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::history::HistorySegment;
use crate::sim::{checked_coefficients, SddeModel};

/// Everything a controller needs from one functional on one buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalEval {
    /// `V(φ) = V₁(φ(0)) + V₂(φ)`.
    pub value: f64,
    /// `∂V₁/∂x` at `φ(0)`.
    pub gradient: DVector<f64>,
    /// `∂²V₁/∂x²` at `φ(0)`.
    pub hessian: DMatrix<f64>,
    /// `D⁺V₂(φ)`.
    pub dini: f64,
}

pub trait SeparableFunctional: Send + Sync {
    fn name(&self) -> &str;

    fn state_dim(&self) -> usize;

    /// `V₁(x)` with `phi` as frozen context.
    fn pointwise(&self, phi: &HistorySegment, x: &[f64]) -> Result<f64>;

    fn pointwise_gradient(&self, phi: &HistorySegment, x: &[f64]) -> Result<DVector<f64>>;

    fn pointwise_hessian(&self, phi: &HistorySegment, x: &[f64]) -> Result<DMatrix<f64>>;

    /// `V₂(φ)`.
    fn history(&self, phi: &HistorySegment) -> Result<f64>;

    /// `D⁺V₂(φ)`.
    fn history_dini(&self, phi: &HistorySegment) -> Result<f64>;

    fn value(&self, phi: &HistorySegment) -> Result<f64> {
        let v = self.pointwise(phi, phi.newest())? + self.history(phi)?;
        finite(v, self.name())
    }

    /// Value, derivatives and Dini term in one pass. Implementations override
    /// this when the pieces share work (an integral over the window, say).
    fn evaluate(&self, phi: &HistorySegment) -> Result<FunctionalEval> {
        let x = phi.newest();
        Ok(FunctionalEval {
            value: self.value(phi)?,
            gradient: self.pointwise_gradient(phi, x)?,
            hessian: self.pointwise_hessian(phi, x)?,
            dini: self.history_dini(phi)?,
        })
    }
}

pub(crate) fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numeric(format!("{what} evaluated to {v}")))
    }
}

fn check_dim(functional: &dyn SeparableFunctional, phi: &HistorySegment) -> Result<()> {
    if functional.state_dim() != phi.state_dim() {
        return Err(Error::Domain(format!(
            "functional `{}` expects dimension {}, history has {}",
            functional.name(),
            functional.state_dim(),
            phi.state_dim()
        )));
    }
    Ok(())
}

/// `V(φ)`.
pub fn eval(functional: &dyn SeparableFunctional, phi: &HistorySegment) -> Result<f64> {
    check_dim(functional, phi)?;
    functional.value(phi)
}

/// Split of the Itô drift `𝓛V₁ + D⁺V₂ = a_drift + b_row · u`.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftTerms {
    /// `∇V₁·f + ½ tr[ρᵀ ∇²V₁ ρ] + D⁺V₂`.
    pub a_drift: f64,
    /// `∇V₁·g`, one entry per input.
    pub b_row: DVector<f64>,
    /// `V(φ)`, returned since it was computed anyway.
    pub value: f64,
}

impl DriftTerms {
    /// Full drift under input `u`.
    pub fn drift_under(&self, u: &DVector<f64>) -> f64 {
        self.a_drift + self.b_row.dot(u)
    }
}

/// `½ tr[ρᵀ M ρ]`.
pub(crate) fn half_trace(diffusion: &DMatrix<f64>, m: &DMatrix<f64>) -> f64 {
    0.5 * (diffusion.transpose() * m * diffusion).trace()
}

pub fn drift_decomposition(
    functional: &dyn SeparableFunctional,
    model: &dyn SddeModel,
    t: f64,
    phi: &HistorySegment,
) -> Result<DriftTerms> {
    check_dim(functional, phi)?;
    let c = checked_coefficients(model, t, phi)?;
    let e = functional.evaluate(phi)?;
    let a_drift = e.gradient.dot(&c.drift) + half_trace(&c.diffusion, &e.hessian) + e.dini;
    let b_row = c.input_gain.transpose() * &e.gradient;
    Ok(DriftTerms {
        a_drift: finite(a_drift, "drift term")?,
        b_row,
        value: e.value,
    })
}

/// Central-difference gradient of `V₁` at `x`, holding the context fixed.
pub fn finite_difference_gradient(
    functional: &dyn SeparableFunctional,
    phi: &HistorySegment,
    x: &[f64],
    step: f64,
) -> Result<DVector<f64>> {
    let mut probe = x.to_vec();
    let mut grad = DVector::zeros(x.len());
    for i in 0..x.len() {
        let h = step * (1.0 + x[i].abs());
        probe[i] = x[i] + h;
        let up = functional.pointwise(phi, &probe)?;
        probe[i] = x[i] - h;
        let down = functional.pointwise(phi, &probe)?;
        probe[i] = x[i];
        grad[i] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}

/// Central-difference Hessian of `V₁` from the analytic gradient.
pub fn finite_difference_hessian(
    functional: &dyn SeparableFunctional,
    phi: &HistorySegment,
    x: &[f64],
    step: f64,
) -> Result<DMatrix<f64>> {
    let n = x.len();
    let mut probe = x.to_vec();
    let mut hess = DMatrix::zeros(n, n);
    for j in 0..n {
        let h = step * (1.0 + x[j].abs());
        probe[j] = x[j] + h;
        let up = functional.pointwise_gradient(phi, &probe)?;
        probe[j] = x[j] - h;
        let down = functional.pointwise_gradient(phi, &probe)?;
        probe[j] = x[j];
        hess.set_column(j, &((up - down) / (2.0 * h)));
    }
    Ok(hess)
}

/// Largest componentwise excess `|a - b| - max(abs_tol, rel_tol·|b|)`; `≤ 0` means agreement.
pub fn worst_excess(a: &[f64], b: &[f64], abs_tol: f64, rel_tol: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() - abs_tol.max(rel_tol * y.abs()))
        .fold(f64::NEG_INFINITY, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{Dims, FnModel};
    use std::sync::Arc;

    fn scalar_diffusion_model(sigma: f64) -> FnModel {
        FnModel::new(
            Dims {
                state: 1,
                input: 1,
                noise: 1,
            },
            |_, _| DVector::zeros(1),
            |_, _| DMatrix::zeros(1, 1),
            move |_, _| DMatrix::from_element(1, 1, sigma),
        )
    }

    fn square() -> IntegralSeparable {
        IntegralSeparable::pointwise_only(
            "square",
            1,
            |x| x[0] * x[0],
            |x| DVector::from_element(1, 2.0 * x[0]),
            |_| DMatrix::from_element(1, 1, 2.0),
        )
    }

    #[test]
    fn diffusion_trace_term_for_square() {
        let sigma = 0.7;
        let phi = HistorySegment::constant(0.2, 0.1, &[3.0]).unwrap();
        let d = drift_decomposition(&square(), &scalar_diffusion_model(sigma), 0.0, &phi).unwrap();
        assert!((d.a_drift - sigma * sigma).abs() < 1e-15);
        assert_eq!(d.b_row[0], 0.0);
    }

    #[test]
    fn deterministic_drift_is_lie_derivative() {
        let model = FnModel::new(
            Dims {
                state: 2,
                input: 1,
                noise: 1,
            },
            |_, phi| DVector::from_vec(vec![phi.newest()[1], -phi.newest()[0]]),
            |_, _| DMatrix::from_vec(2, 1, vec![0.0, 1.0]),
            |_, _| DMatrix::zeros(2, 1),
        );
        let v = IntegralSeparable::pointwise_only(
            "quad2",
            2,
            |x| x[0] * x[0] + 3.0 * x[1] * x[1],
            |x| DVector::from_vec(vec![2.0 * x[0], 6.0 * x[1]]),
            |_| DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 6.0])),
        );
        let phi = HistorySegment::constant(0.2, 0.1, &[1.0, 2.0]).unwrap();
        let d = drift_decomposition(&v, &model, 0.0, &phi).unwrap();
        // ∇V·f = 2·1·2 + 12·(-1)
        assert!((d.a_drift - (4.0 - 12.0)).abs() < 1e-14);
        assert!((d.b_row[0] - 12.0).abs() < 1e-14);
    }

    #[test]
    fn constant_history_has_zero_dini() {
        let v = QuadraticTracking::new(3, 0, 22.0, 1.0);
        let phi = HistorySegment::constant(0.2, 0.1, &[16.0, 10.0, 150.0]).unwrap();
        assert_eq!(v.history_dini(&phi).unwrap(), 0.0);
        assert!((eval(&v, &phi).unwrap() - 43.2).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_domain_error() {
        let v: Arc<dyn SeparableFunctional> = Arc::new(QuadraticTracking::new(3, 0, 22.0, 1.0));
        let phi = HistorySegment::constant(0.2, 0.1, &[1.0]).unwrap();
        assert_eq!(eval(v.as_ref(), &phi).unwrap_err().category(), "domain");
    }
}
