use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{finite, FunctionalEval, SeparableFunctional};
use crate::error::{Error, Result};
use crate::history::HistorySegment;

type ScalarFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type GradientFn = dyn Fn(&[f64]) -> DVector<f64> + Send + Sync;
type HessianFn = dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync;

/// `V(φ) = V₁(φ(0)) + c·∫_{-Δ}^0 w(φ(τ)) dτ` from closures.
///
/// The history part has `D⁺V₂(φ) = c·(w(φ(0)) - w(φ(-Δ)))`.
#[derive(Clone)]
pub struct IntegralSeparable {
    name: String,
    dim: usize,
    v1: Arc<ScalarFn>,
    grad: Arc<GradientFn>,
    hess: Arc<HessianFn>,
    weight: Option<(f64, Arc<ScalarFn>)>,
}

impl IntegralSeparable {
    pub fn new<V, G, H, W>(name: impl Into<String>, dim: usize, v1: V, grad: G, hess: H, scale: f64, w: W) -> Self
    where
        V: Fn(&[f64]) -> f64 + Send + Sync + 'static,
        G: Fn(&[f64]) -> DVector<f64> + Send + Sync + 'static,
        H: Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
        W: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            dim,
            v1: Arc::new(v1),
            grad: Arc::new(grad),
            hess: Arc::new(hess),
            weight: Some((scale, Arc::new(w))),
        }
    }

    /// A functional with `V₂ ≡ 0`.
    pub fn pointwise_only<V, G, H>(name: impl Into<String>, dim: usize, v1: V, grad: G, hess: H) -> Self
    where
        V: Fn(&[f64]) -> f64 + Send + Sync + 'static,
        G: Fn(&[f64]) -> DVector<f64> + Send + Sync + 'static,
        H: Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            dim,
            v1: Arc::new(v1),
            grad: Arc::new(grad),
            hess: Arc::new(hess),
            weight: None,
        }
    }
}

impl SeparableFunctional for IntegralSeparable {
    fn name(&self) -> &str {
        &self.name
    }

    fn state_dim(&self) -> usize {
        self.dim
    }

    fn pointwise(&self, _phi: &HistorySegment, x: &[f64]) -> Result<f64> {
        finite((self.v1)(x), &self.name)
    }

    fn pointwise_gradient(&self, _phi: &HistorySegment, x: &[f64]) -> Result<DVector<f64>> {
        Ok((self.grad)(x))
    }

    fn pointwise_hessian(&self, _phi: &HistorySegment, x: &[f64]) -> Result<DMatrix<f64>> {
        Ok((self.hess)(x))
    }

    fn history(&self, phi: &HistorySegment) -> Result<f64> {
        match &self.weight {
            Some((c, w)) => Ok(c * phi.integrate(|s| w(s))?),
            None => Ok(0.0),
        }
    }

    fn history_dini(&self, phi: &HistorySegment) -> Result<f64> {
        match &self.weight {
            Some((c, w)) => finite(c * (w(phi.newest()) - w(phi.oldest())), &self.name),
            None => Ok(0.0),
        }
    }
}

/// `V(φ) = (φᵢ(0) - r)² + c·∫_{-Δ}^0 (φᵢ(τ) - r)² dτ`, tracking of one component.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticTracking {
    dim: usize,
    component: usize,
    target: f64,
    integral_weight: f64,
}

impl QuadraticTracking {
    pub fn new(dim: usize, component: usize, target: f64, integral_weight: f64) -> Self {
        assert!(component < dim, "tracked component out of range");
        Self {
            dim,
            component,
            target,
            integral_weight,
        }
    }

    pub fn target(&self) -> f64 {
        self.target
    }

    pub fn component(&self) -> usize {
        self.component
    }

    fn err_sq(&self, x: &[f64]) -> f64 {
        let e = x[self.component] - self.target;
        e * e
    }
}

impl SeparableFunctional for QuadraticTracking {
    fn name(&self) -> &str {
        "quadratic_tracking"
    }

    fn state_dim(&self) -> usize {
        self.dim
    }

    fn pointwise(&self, _phi: &HistorySegment, x: &[f64]) -> Result<f64> {
        finite(self.err_sq(x), self.name())
    }

    fn pointwise_gradient(&self, _phi: &HistorySegment, x: &[f64]) -> Result<DVector<f64>> {
        let mut g = DVector::zeros(self.dim);
        g[self.component] = 2.0 * (x[self.component] - self.target);
        Ok(g)
    }

    fn pointwise_hessian(&self, _phi: &HistorySegment, _x: &[f64]) -> Result<DMatrix<f64>> {
        let mut h = DMatrix::zeros(self.dim, self.dim);
        h[(self.component, self.component)] = 2.0;
        Ok(h)
    }

    fn history(&self, phi: &HistorySegment) -> Result<f64> {
        Ok(self.integral_weight * phi.integrate(|s| self.err_sq(s))?)
    }

    fn history_dini(&self, phi: &HistorySegment) -> Result<f64> {
        finite(
            self.integral_weight * (self.err_sq(phi.newest()) - self.err_sq(phi.oldest())),
            self.name(),
        )
    }
}

/// Headway safe set `h(φ) = z(φ(0)) - c·∫_{-Δ}^0 z(φ(τ))² dτ` with
/// `z(x) = x_gap - t_h·x_speed`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadwaySafeSet {
    dim: usize,
    speed: usize,
    gap: usize,
    headway: f64,
    penalty: f64,
}

impl HeadwaySafeSet {
    pub fn new(dim: usize, speed: usize, gap: usize, headway: f64, penalty: f64) -> Self {
        assert!(speed < dim && gap < dim, "headway components out of range");
        Self {
            dim,
            speed,
            gap,
            headway,
            penalty,
        }
    }

    /// `x_gap - t_h·x_speed`, the pointwise headway margin.
    pub fn margin(&self, x: &[f64]) -> f64 {
        x[self.gap] - self.headway * x[self.speed]
    }

    fn margin_gradient(&self) -> DVector<f64> {
        let mut g = DVector::zeros(self.dim);
        g[self.gap] = 1.0;
        g[self.speed] = -self.headway;
        g
    }
}

impl SeparableFunctional for HeadwaySafeSet {
    fn name(&self) -> &str {
        "headway_safe_set"
    }

    fn state_dim(&self) -> usize {
        self.dim
    }

    fn pointwise(&self, _phi: &HistorySegment, x: &[f64]) -> Result<f64> {
        finite(self.margin(x), self.name())
    }

    fn pointwise_gradient(&self, _phi: &HistorySegment, _x: &[f64]) -> Result<DVector<f64>> {
        Ok(self.margin_gradient())
    }

    fn pointwise_hessian(&self, _phi: &HistorySegment, _x: &[f64]) -> Result<DMatrix<f64>> {
        Ok(DMatrix::zeros(self.dim, self.dim))
    }

    fn history(&self, phi: &HistorySegment) -> Result<f64> {
        Ok(-self.penalty * phi.integrate(|s| self.margin(s).powi(2))?)
    }

    fn history_dini(&self, phi: &HistorySegment) -> Result<f64> {
        let now = self.margin(phi.newest());
        let then = self.margin(phi.oldest());
        finite(-self.penalty * (now * now - then * then), self.name())
    }
}

/// `B(φ) = ln(1 + 1/h(φ))` for a separable safe-set functional `h = h₁ + h₂`.
///
/// Registered as `B₁(x) = b(h₁(x) + h₂(φ))` with `h₂` frozen and `B₂ ≡ 0`
/// whose Dini derivative carries the chain-rule correction
/// `D⁺B₂ = b'(h)·D⁺h₂`, where `b(s) = ln(1 + 1/s)`. The Itô drift of this
/// split equals that of `B` itself.
#[derive(Clone)]
pub struct LogReciprocalBarrier {
    name: String,
    safe_set: Arc<dyn SeparableFunctional>,
}

/// `b'(h) = -1 / (h(1+h))`.
fn wrap_first(h: f64) -> f64 {
    -1.0 / (h * (1.0 + h))
}

/// `b''(h) = (2h + 1) / (h²(1+h)²)`.
fn wrap_second(h: f64) -> f64 {
    let d = h * (1.0 + h);
    (2.0 * h + 1.0) / (d * d)
}

impl LogReciprocalBarrier {
    pub fn new(name: impl Into<String>, safe_set: Arc<dyn SeparableFunctional>) -> Self {
        Self {
            name: name.into(),
            safe_set,
        }
    }

    pub fn safe_set(&self) -> &Arc<dyn SeparableFunctional> {
        &self.safe_set
    }

    /// `ln(1 + 1/h)`; `h ≤ 0` is a safe-set violation.
    pub fn wrap(h: f64) -> Result<f64> {
        if h > 0.0 {
            Ok((1.0 / h).ln_1p())
        } else {
            Err(Error::SafeSetViolation { h })
        }
    }

    fn h_at(&self, phi: &HistorySegment, x: &[f64]) -> Result<f64> {
        let h = self.safe_set.pointwise(phi, x)? + self.safe_set.history(phi)?;
        if h > 0.0 {
            Ok(h)
        } else {
            Err(Error::SafeSetViolation { h })
        }
    }
}

impl SeparableFunctional for LogReciprocalBarrier {
    fn name(&self) -> &str {
        &self.name
    }

    fn state_dim(&self) -> usize {
        self.safe_set.state_dim()
    }

    fn pointwise(&self, phi: &HistorySegment, x: &[f64]) -> Result<f64> {
        Self::wrap(self.h_at(phi, x)?)
    }

    fn pointwise_gradient(&self, phi: &HistorySegment, x: &[f64]) -> Result<DVector<f64>> {
        let h = self.h_at(phi, x)?;
        Ok(self.safe_set.pointwise_gradient(phi, x)? * wrap_first(h))
    }

    fn pointwise_hessian(&self, phi: &HistorySegment, x: &[f64]) -> Result<DMatrix<f64>> {
        let h = self.h_at(phi, x)?;
        let g = self.safe_set.pointwise_gradient(phi, x)?;
        let hess = self.safe_set.pointwise_hessian(phi, x)?;
        Ok(&g * g.transpose() * wrap_second(h) + hess * wrap_first(h))
    }

    fn history(&self, _phi: &HistorySegment) -> Result<f64> {
        Ok(0.0)
    }

    fn history_dini(&self, phi: &HistorySegment) -> Result<f64> {
        let h = self.h_at(phi, phi.newest())?;
        finite(wrap_first(h) * self.safe_set.history_dini(phi)?, &self.name)
    }

    fn evaluate(&self, phi: &HistorySegment) -> Result<FunctionalEval> {
        let x = phi.newest();
        let h = self.h_at(phi, x)?;
        let (d1, d2) = (wrap_first(h), wrap_second(h));
        let g = self.safe_set.pointwise_gradient(phi, x)?;
        let hess = self.safe_set.pointwise_hessian(phi, x)?;
        Ok(FunctionalEval {
            value: Self::wrap(h)?,
            hessian: &g * g.transpose() * d2 + hess * d1,
            gradient: g * d1,
            dini: finite(d1 * self.safe_set.history_dini(phi)?, &self.name)?,
        })
    }
}
