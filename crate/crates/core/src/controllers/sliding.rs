//! Sliding-mode safe stabilization on the surface `U(φ) = ψ(V(φ), B(φ))`.
//!
//! Along the closed loop the drift of `U` splits as `F + G·u + L` with
//! `H = ψ_V ∇V₁ + ψ_B ∇B₁`, `F = H·f` and `G = H·g`. The controller picks `u`
//! so that this drift equals `-K(φ) = -𝖪·U/(|U| + ϖ)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functionals::{half_trace, worst_excess, Region, Scbkf, Sclkf};
use crate::history::HistorySegment;
use crate::sim::{checked_coefficients, FeedbackController, SddeModel};

/// `ϖ` in the switching term `𝖪·U/(|U| + ϖ)`.
pub const DEFAULT_SMOOTHING: f64 = 0.1;

/// `‖G‖²` at or below this violates transversality.
pub const DEFAULT_TRANSVERSALITY_TOL: f64 = 1e-10;

const SAMPLE_POINTS: usize = 100;

/// The combination `ψ(V, B)` and its partials.
pub trait SurfaceMap: Send + Sync {
    fn value(&self, v: f64, b: f64) -> f64;

    /// `(∂ψ/∂V, ∂ψ/∂B)`.
    fn partials(&self, v: f64, b: f64) -> (f64, f64);
}

type RealFn = dyn Fn(f64) -> f64 + Send + Sync;

/// A scalar function with its derivative, checked against central differences
/// when constructed.
#[derive(Clone)]
pub struct ScalarMap {
    label: String,
    f: Arc<RealFn>,
    df: Arc<RealFn>,
}

impl fmt::Debug for ScalarMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarMap").field("label", &self.label).finish()
    }
}

impl ScalarMap {
    pub fn new<F, D>(label: impl Into<String>, f: F, df: D, range: (f64, f64)) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let label = label.into();
        let (lo, hi) = range;
        if !(hi > lo && lo.is_finite() && hi.is_finite()) {
            return Err(Error::config("range", format!("invalid sampling range [{lo}, {hi}]")));
        }
        for i in 0..SAMPLE_POINTS {
            let s = lo + (hi - lo) * (i as f64 + 0.5) / SAMPLE_POINTS as f64;
            let h = 1e-6 * (1.0 + s.abs());
            let fd = (f(s + h) - f(s - h)) / (2.0 * h);
            if worst_excess(&[df(s)], &[fd], 1e-6, 1e-4) > 0.0 {
                return Err(Error::Domain(format!(
                    "derivative of `{label}` disagrees with finite differences at s = {s}"
                )));
            }
        }
        Ok(Self {
            label,
            f: Arc::new(f),
            df: Arc::new(df),
        })
    }

    /// `s ↦ c·s`.
    pub fn linear(c: f64) -> Self {
        Self {
            label: format!("{c}*s"),
            f: Arc::new(move |s| c * s),
            df: Arc::new(move |_| c),
        }
    }

    pub fn identity() -> Self {
        Self::linear(1.0)
    }

    pub fn zero() -> Self {
        Self::linear(0.0)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn eval(&self, s: f64) -> f64 {
        (self.f)(s)
    }

    pub fn derivative(&self, s: f64) -> f64 {
        (self.df)(s)
    }
}

/// `ψ(V, B) = α(V) + β(B)` with `α, β ≥ 0`.
#[derive(Debug, Clone)]
pub struct AdditiveSurface {
    alpha: ScalarMap,
    beta: ScalarMap,
    barrier_floor: f64,
}

impl AdditiveSurface {
    /// Checks `α, β ≥ 0` on `SAMPLE_POINTS` points of `range`.
    pub fn new(alpha: ScalarMap, beta: ScalarMap, range: (f64, f64)) -> Result<Self> {
        let (lo, hi) = range;
        if !(lo >= 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::config("range", format!("invalid sampling range [{lo}, {hi}]")));
        }
        for i in 0..SAMPLE_POINTS {
            let s = lo + (hi - lo) * i as f64 / (SAMPLE_POINTS - 1) as f64;
            for (name, m) in [("alpha", &alpha), ("beta", &beta)] {
                let v = m.eval(s);
                if !(v >= 0.0) {
                    return Err(Error::Domain(format!("{name} = `{}` is {v} at s = {s}", m.label())));
                }
            }
        }
        Ok(Self {
            alpha,
            beta,
            barrier_floor: 0.0,
        })
    }

    /// `ψ(V, B) = V + ϱ·B`.
    pub fn weighted(varrho: f64) -> Result<Self> {
        if !(varrho >= 0.0 && varrho.is_finite()) {
            return Err(Error::config("varrho", format!("must be nonnegative, got {varrho}")));
        }
        Self::new(ScalarMap::identity(), ScalarMap::linear(varrho), (0.0, 1e3))
    }

    /// Declares the lower bound of `B` on the safe set used by
    /// [`Self::excludes_zero_barrier`].
    pub fn with_barrier_floor(mut self, floor: f64) -> Self {
        self.barrier_floor = floor;
        self
    }

    pub fn barrier_floor(&self) -> f64 {
        self.barrier_floor
    }

    pub fn alpha(&self) -> &ScalarMap {
        &self.alpha
    }

    pub fn beta(&self) -> &ScalarMap {
        &self.beta
    }

    /// Whether `β(s) > 0` for sampled `s` above the barrier floor. For this
    /// form, `U = 0` then forces `β(B) = 0`, which cannot happen inside the
    /// safe set, so the sliding set stays in its interior.
    pub fn excludes_zero_barrier(&self) -> bool {
        let lo = self.barrier_floor;
        (1..=SAMPLE_POINTS).all(|i| {
            let s = lo + 1e3 * i as f64 / SAMPLE_POINTS as f64;
            self.beta.eval(s) > 0.0
        })
    }
}

impl SurfaceMap for AdditiveSurface {
    fn value(&self, v: f64, b: f64) -> f64 {
        self.alpha.eval(v) + self.beta.eval(b)
    }

    fn partials(&self, v: f64, b: f64) -> (f64, f64) {
        (self.alpha.derivative(v), self.beta.derivative(b))
    }
}

/// How the Hessian terms enter `L`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceWeighting {
    /// `½ tr[ρᵀ(∇²V₁ + ∇²B₁)ρ]`, without the ψ-partials.
    #[default]
    AsPrinted,
    /// `½ tr[ρᵀ(ψ_V ∇²V₁ + ψ_B ∇²B₁)ρ]`.
    StrictIto,
}

/// `U(φ) = ψ(V(φ), B(φ))` built from a Lyapunov and a barrier functional.
#[derive(Clone)]
pub struct SlidingSurface {
    pub sclkf: Sclkf,
    pub scbkf: Scbkf,
    pub psi: Arc<dyn SurfaceMap>,
    pub weighting: TraceWeighting,
}

/// Everything in the drift decomposition of `U` on one buffer.
#[derive(Debug, Clone)]
pub struct SlidingTerms {
    pub h_row: RowDVector<f64>,
    pub f_cap: f64,
    pub g_row: RowDVector<f64>,
    pub l_cap: f64,
    pub u_value: f64,
    pub v_value: f64,
    pub b_value: f64,
    pub drift: DVector<f64>,
    pub input_gain: DMatrix<f64>,
}

impl SlidingTerms {
    /// `F + G·u + L`.
    pub fn drift_under(&self, u: &DVector<f64>) -> f64 {
        self.f_cap + (&self.g_row * u)[0] + self.l_cap
    }
}

impl SlidingSurface {
    pub fn new(sclkf: Sclkf, scbkf: Scbkf, psi: Arc<dyn SurfaceMap>) -> Result<Self> {
        let (n, m) = (sclkf.functional.state_dim(), scbkf.barrier.state_dim());
        if n != m || scbkf.safe_set.state_dim() != n {
            return Err(Error::Domain(format!(
                "Lyapunov functional has dimension {n}, barrier {m}"
            )));
        }
        Ok(Self {
            sclkf,
            scbkf,
            psi,
            weighting: TraceWeighting::AsPrinted,
        })
    }

    pub fn with_weighting(mut self, weighting: TraceWeighting) -> Self {
        self.weighting = weighting;
        self
    }

    /// `U(φ)`; needs `φ` in the interior of the safe set.
    pub fn value(&self, phi: &HistorySegment) -> Result<f64> {
        let v = self.sclkf.value(phi)?;
        let b = self.scbkf.eval_barrier(phi)?;
        Ok(self.psi.value(v, b))
    }

    pub fn terms(&self, model: &dyn SddeModel, t: f64, phi: &HistorySegment) -> Result<SlidingTerms> {
        let h = self.scbkf.eval_h(phi)?;
        if self.scbkf.classify(h) != Region::Interior {
            return Err(Error::SafeSetViolation { h });
        }
        let c = checked_coefficients(model, t, phi)?;
        let ev = self.sclkf.functional.evaluate(phi)?;
        let eb = self.scbkf.barrier.evaluate(phi)?;
        let (pv, pb) = self.psi.partials(ev.value, eb.value);
        let h_row = (&ev.gradient * pv + &eb.gradient * pb).transpose();
        let (wv, wb) = match self.weighting {
            TraceWeighting::AsPrinted => (1.0, 1.0),
            TraceWeighting::StrictIto => (pv, pb),
        };
        let trace = half_trace(&c.diffusion, &(&ev.hessian * wv + &eb.hessian * wb));
        let l_cap = pv * ev.dini + pb * eb.dini + trace;
        let f_cap = (&h_row * &c.drift)[0];
        let g_row = &h_row * &c.input_gain;
        let u_value = self.psi.value(ev.value, eb.value);
        if !(l_cap.is_finite() && f_cap.is_finite() && u_value.is_finite()) {
            return Err(Error::Numeric(format!(
                "sliding terms not finite (F = {f_cap}, L = {l_cap}, U = {u_value})"
            )));
        }
        Ok(SlidingTerms {
            h_row,
            f_cap,
            g_row,
            l_cap,
            u_value,
            v_value: ev.value,
            b_value: eb.value,
            drift: c.drift,
            input_gain: c.input_gain,
        })
    }
}

/// `(J₁, J₂) = (g·Gᵀ·fᵀ ∓ f·G·gᵀ) / (2‖G‖²)`.
pub fn aux_j(
    drift: &DVector<f64>,
    input_gain: &DMatrix<f64>,
    g_row: &RowDVector<f64>,
    tol: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let norm_sq = g_row.norm_squared();
    if !(norm_sq > tol) {
        return Err(Error::Transversality { norm_sq, tol });
    }
    let left = input_gain * g_row.transpose() * drift.transpose();
    let right = drift * g_row * input_gain.transpose();
    let scale = 0.5 / norm_sq;
    Ok(((&left - &right) * scale, (left + right) * scale))
}

/// `u = -Gᵀ(H·J₂·Hᵀ + L + K(φ)) / ‖G‖²`.
#[derive(Clone)]
pub struct SlidingController {
    surface: SlidingSurface,
    model: Arc<dyn SddeModel>,
    gain: f64,
    smoothing: f64,
    transversality_tol: f64,
}

impl SlidingController {
    pub fn new(surface: SlidingSurface, model: Arc<dyn SddeModel>, gain: f64, smoothing: f64) -> Result<Self> {
        if !(gain > 0.0 && gain.is_finite()) {
            return Err(Error::config("gain", format!("must be positive, got {gain}")));
        }
        if !(smoothing > 0.0 && smoothing.is_finite()) {
            return Err(Error::config("smoothing", format!("must be positive, got {smoothing}")));
        }
        if model.dims().state != surface.sclkf.functional.state_dim() {
            return Err(Error::Domain("surface and model state dimensions differ".into()));
        }
        Ok(Self {
            surface,
            model,
            gain,
            smoothing,
            transversality_tol: DEFAULT_TRANSVERSALITY_TOL,
        })
    }

    pub fn with_transversality_tol(mut self, tol: f64) -> Result<Self> {
        if !(tol > 0.0) {
            return Err(Error::config(
                "transversality_tol",
                format!("must be positive, got {tol}"),
            ));
        }
        self.transversality_tol = tol;
        Ok(self)
    }

    pub fn surface(&self) -> &SlidingSurface {
        &self.surface
    }

    pub fn model(&self) -> &Arc<dyn SddeModel> {
        &self.model
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    pub fn transversality_tol(&self) -> f64 {
        self.transversality_tol
    }

    /// `K(φ) = 𝖪·U/(|U| + ϖ)`.
    pub fn switching(&self, u_value: f64) -> f64 {
        self.gain * u_value / (u_value.abs() + self.smoothing)
    }

    pub fn terms(&self, t: f64, phi: &HistorySegment) -> Result<SlidingTerms> {
        self.surface.terms(self.model.as_ref(), t, phi)
    }

    /// The input that makes the drift of `U` equal `-k`.
    pub fn control_from_terms(&self, terms: &SlidingTerms, k: f64) -> Result<DVector<f64>> {
        let (_, j2) = aux_j(&terms.drift, &terms.input_gain, &terms.g_row, self.transversality_tol)?;
        let hj2h = (&terms.h_row * j2 * terms.h_row.transpose())[0];
        self.control_from_parts(terms, hj2h, k)
    }

    /// `-Gᵀ(hj2h + L + k)/‖G‖²` for a precomputed `hj2h = H·J₂·Hᵀ`.
    pub fn control_from_parts(&self, terms: &SlidingTerms, hj2h: f64, k: f64) -> Result<DVector<f64>> {
        let norm_sq = terms.g_row.norm_squared();
        if !(norm_sq > self.transversality_tol) {
            return Err(Error::Transversality {
                norm_sq,
                tol: self.transversality_tol,
            });
        }
        let u = terms.g_row.transpose() * (-(hj2h + terms.l_cap + k) / norm_sq);
        if u.iter().all(|x| x.is_finite()) {
            Ok(u)
        } else {
            Err(Error::Numeric("sliding control is not finite".into()))
        }
    }

    pub fn sliding_control(&self, t: f64, phi: &HistorySegment) -> Result<DVector<f64>> {
        let terms = self.terms(t, phi)?;
        self.control_from_terms(&terms, self.switching(terms.u_value))
    }

    /// The equivalent control `u_e`, keeping `U` constant along the drift.
    pub fn ideal_control(&self, t: f64, phi: &HistorySegment) -> Result<DVector<f64>> {
        let terms = self.terms(t, phi)?;
        self.control_from_terms(&terms, 0.0)
    }
}

impl FeedbackController for SlidingController {
    fn input_dim(&self) -> usize {
        self.model.dims().input
    }

    fn control(&self, t: f64, phi: &HistorySegment) -> Result<DVector<f64>> {
        self.sliding_control(t, phi)
    }
}
