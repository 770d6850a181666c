//! Stochastic car-following benchmark with delayed drag.
//!
//! State `x = (v_f, v_l, d)`: follower speed, leader speed and gap. The
//! follower is actuated directly, the leader accelerates by an exogenous
//! profile `a(t)`, and the drag `F(v) = (a₀ + a₁v + a₂v²)/M` acts with delay
//! `Δ`. Tracking uses `V = (v_f - v_d)² + ∫(v_f - v_d)²` and safety the
//! headway functional `h = d - t_h·v_f - c∫(d - t_h·v_f)²`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::controllers::{AdditiveSurface, SlidingController, SlidingSurface, SontagController, DEFAULT_SMOOTHING};
use crate::error::{Error, Result};
use crate::functionals::{
    ClassK, ClassKKind, HeadwaySafeSet, LogReciprocalBarrier, QuadraticTracking, Scbkf, Sclkf, SeparableFunctional,
    DEFAULT_CLASS_K_RANGE,
};
use crate::history::HistorySegment;
use crate::sim::{Dims, SddeModel};

/// Largest admissible lead-car acceleration magnitude, m/s².
pub const LEAD_ACCEL_BOUND: f64 = 2.5;

pub const SPEED: usize = 0;
pub const LEAD_SPEED: usize = 1;
pub const GAP: usize = 2;

/// Lead-car acceleration `a(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LeadProfile {
    Constant {
        accel: f64,
    },
    /// `values[i]` holds on `[times[i], times[i+1])`; `values[0]` also before
    /// `times[0]` and the last value after the last breakpoint.
    PiecewiseConstant {
        times: Vec<f64>,
        values: Vec<f64>,
    },
}

impl Default for LeadProfile {
    fn default() -> Self {
        LeadProfile::Constant { accel: 0.0 }
    }
}

impl LeadProfile {
    pub fn validate(&self) -> Result<()> {
        let values: &[f64] = match self {
            LeadProfile::Constant { accel } => std::slice::from_ref(accel),
            LeadProfile::PiecewiseConstant { times, values } => {
                if times.len() != values.len() || times.is_empty() {
                    return Err(Error::config(
                        "lead_accel",
                        "piecewise profile needs one value per breakpoint",
                    ));
                }
                if times.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(Error::config("lead_accel", "breakpoints must be strictly increasing"));
                }
                values
            }
        };
        if let Some(a) = values.iter().find(|a| !(a.abs() <= LEAD_ACCEL_BOUND)) {
            return Err(Error::config(
                "lead_accel",
                format!("acceleration {a} outside [-{LEAD_ACCEL_BOUND}, {LEAD_ACCEL_BOUND}]"),
            ));
        }
        Ok(())
    }

    pub fn at(&self, t: f64) -> f64 {
        match self {
            LeadProfile::Constant { accel } => *accel,
            LeadProfile::PiecewiseConstant { times, values } => {
                let k = times.partition_point(|&s| s <= t);
                values[k.saturating_sub(1)]
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CarFollowingParams {
    pub mass: f64,
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
    pub v_d: f64,
    pub varrho: f64,
    pub delay: f64,
    pub headway: f64,
    /// Weight of the integral term in the headway functional.
    pub penalty: f64,
    pub noise_scale: f64,
    pub gain: f64,
    pub smoothing: f64,
    pub lead_accel: LeadProfile,
}

impl Default for CarFollowingParams {
    fn default() -> Self {
        Self {
            mass: 1650.0,
            a0: 0.1,
            a1: 5.0,
            a2: 0.25,
            v_d: 22.0,
            varrho: 50.0,
            delay: 0.2,
            headway: 1.8,
            penalty: 0.01,
            noise_scale: 0.05,
            gain: 10.0,
            smoothing: DEFAULT_SMOOTHING,
            lead_accel: LeadProfile::default(),
        }
    }
}

impl CarFollowingParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mass", self.mass),
            ("delay", self.delay),
            ("headway", self.headway),
            ("gain", self.gain),
            ("smoothing", self.smoothing),
        ];
        for (field, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(field, format!("must be positive, got {v}")));
            }
        }
        let nonnegative = [
            ("noise_scale", self.noise_scale),
            ("varrho", self.varrho),
            ("penalty", self.penalty),
        ];
        for (field, v) in nonnegative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(field, format!("must be nonnegative, got {v}")));
            }
        }
        for (field, v) in [("a0", self.a0), ("a1", self.a1), ("a2", self.a2), ("v_d", self.v_d)] {
            if !v.is_finite() {
                return Err(Error::config(field, format!("must be finite, got {v}")));
            }
        }
        self.lead_accel.validate()
    }

    /// Drag per unit mass, `F(v) = (a₀ + a₁v + a₂v²)/M`.
    pub fn drag(&self, v: f64) -> f64 {
        (self.a0 + self.a1 * v + self.a2 * v * v) / self.mass
    }
}

#[derive(Debug, Clone)]
pub struct CarFollowingModel {
    params: CarFollowingParams,
}

impl CarFollowingModel {
    pub fn params(&self) -> &CarFollowingParams {
        &self.params
    }
}

impl SddeModel for CarFollowingModel {
    fn dims(&self) -> Dims {
        Dims {
            state: 3,
            input: 1,
            noise: 1,
        }
    }

    fn drift(&self, t: f64, phi: &HistorySegment) -> DVector<f64> {
        let p = &self.params;
        let x = phi.newest();
        let lagged = phi.oldest();
        DVector::from_vec(vec![
            p.drag(lagged[SPEED]) - p.drag(x[SPEED]),
            p.lead_accel.at(t),
            x[LEAD_SPEED] - x[SPEED],
        ])
    }

    fn input_gain(&self, _t: f64, _phi: &HistorySegment) -> DMatrix<f64> {
        DMatrix::from_vec(3, 1, vec![1.0, 0.0, 0.0])
    }

    fn diffusion(&self, _t: f64, phi: &HistorySegment) -> DMatrix<f64> {
        let x = phi.newest();
        let l = self.params.noise_scale;
        DMatrix::from_vec(3, 1, vec![l * x[SPEED], 0.0, l * x[GAP]])
    }
}

pub fn build_model(params: &CarFollowingParams) -> Result<CarFollowingModel> {
    params.validate()?;
    Ok(CarFollowingModel { params: params.clone() })
}

/// Tracking and headway certificates plus the raw safe-set functional.
#[derive(Clone)]
pub struct CarFollowingFunctionals {
    pub sclkf: Sclkf,
    pub scbkf: Scbkf,
    pub tracking: Arc<QuadraticTracking>,
    pub safe_set: Arc<HeadwaySafeSet>,
}

pub fn build_functionals(params: &CarFollowingParams) -> Result<CarFollowingFunctionals> {
    params.validate()?;
    let tracking = Arc::new(QuadraticTracking::new(3, SPEED, params.v_d, 1.0));
    let safe_set = Arc::new(HeadwaySafeSet::new(3, SPEED, GAP, params.headway, params.penalty));
    let h: Arc<dyn SeparableFunctional> = safe_set.clone();
    let barrier = Arc::new(LogReciprocalBarrier::new("headway_barrier", h.clone()));

    // V only sees the follower speed, so no class-K sandwich in |φ(0)| holds
    // globally; the identity pair is nominal and the spot check will flag it.
    let sclkf = Sclkf::new(
        tracking.clone(),
        ClassK::identity(),
        ClassK::identity(),
        ClassK::identity(),
    );
    // h ≤ 1/ln(1 + 1/h) ≤ 2/ln(1 + 1/h)
    let reciprocal_upper = ClassK::new(
        ClassKKind::KInfinity,
        "2/ln(1+1/s)",
        |s: f64| if s > 0.0 { 2.0 / (1.0 / s).ln_1p() } else { 0.0 },
        DEFAULT_CLASS_K_RANGE,
    )?;
    let scbkf = Scbkf::new(barrier, h, ClassK::identity(), ClassK::identity(), reciprocal_upper);
    Ok(CarFollowingFunctionals {
        sclkf,
        scbkf,
        tracking,
        safe_set,
    })
}

/// `U = V + ϱ·B`.
pub fn build_surface(params: &CarFollowingParams) -> Result<SlidingSurface> {
    let f = build_functionals(params)?;
    SlidingSurface::new(f.sclkf, f.scbkf, Arc::new(AdditiveSurface::weighted(params.varrho)?))
}

pub fn build_sliding_controller(params: &CarFollowingParams) -> Result<SlidingController> {
    let model: Arc<dyn SddeModel> = Arc::new(build_model(params)?);
    SlidingController::new(build_surface(params)?, model, params.gain, params.smoothing)
}

pub fn build_sontag_controller(params: &CarFollowingParams, lambda: f64) -> Result<SontagController> {
    let model: Arc<dyn SddeModel> = Arc::new(build_model(params)?);
    SontagController::new(
        build_functionals(params)?.sclkf,
        model,
        lambda,
        crate::controllers::DEFAULT_ZERO_THRESHOLD,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PresetFamily {
    /// Initial follower speed `8 + 2l`, `l = 1..6`, noise 0.05, gain 10.
    #[serde(rename = "fig1_l")]
    Fig1L,
    /// Noise scale `ℓ = 1..10` from `(16, 10, 150)`, gain 15.
    #[serde(rename = "fig2_ell")]
    Fig2Ell,
}

impl PresetFamily {
    pub fn name(self) -> &'static str {
        match self {
            PresetFamily::Fig1L => "fig1_l",
            PresetFamily::Fig2Ell => "fig2_ell",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "fig1_l" => Ok(PresetFamily::Fig1L),
            "fig2_ell" => Ok(PresetFamily::Fig2Ell),
            other => Err(Error::config("preset", format!("unknown preset family `{other}`"))),
        }
    }

    pub fn indices(self) -> std::ops::RangeInclusive<usize> {
        match self {
            PresetFamily::Fig1L => 1..=6,
            PresetFamily::Fig2Ell => 1..=10,
        }
    }
}

/// A fully specified car-following experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub params: CarFollowingParams,
    /// Constant initial history `ξ`.
    pub initial: Vec<f64>,
    pub dt: f64,
    pub horizon: f64,
}

pub const PRESET_DT: f64 = 1e-3;
pub const PRESET_HORIZON: f64 = 60.0;

pub fn preset(family: PresetFamily, index: usize) -> Result<Scenario> {
    if !family.indices().contains(&index) {
        let r = family.indices();
        return Err(Error::config(
            "index",
            format!("{} accepts {}..={}, got {index}", family.name(), r.start(), r.end()),
        ));
    }
    let mut params = CarFollowingParams::default();
    let initial = match family {
        PresetFamily::Fig1L => {
            params.noise_scale = 0.05;
            params.gain = 10.0;
            vec![8.0 + 2.0 * index as f64, 10.0, 150.0]
        }
        PresetFamily::Fig2Ell => {
            params.noise_scale = index as f64;
            params.gain = 15.0;
            vec![16.0, 10.0, 150.0]
        }
    };
    Ok(Scenario {
        name: format!("{}_{index}", family.name()),
        params,
        initial,
        dt: PRESET_DT,
        horizon: PRESET_HORIZON,
    })
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.initial.len() != 3 {
            return Err(Error::config(
                "initial",
                format!("needs 3 entries, got {}", self.initial.len()),
            ));
        }
        if !(self.dt > 0.0) {
            return Err(Error::config("dt", format!("must be positive, got {}", self.dt)));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::config(
                "horizon",
                format!("must be positive, got {}", self.horizon),
            ));
        }
        self.initial_history().map(|_| ())
    }

    pub fn initial_history(&self) -> Result<HistorySegment> {
        HistorySegment::constant(self.params.delay, self.dt, &self.initial)
    }

    pub fn model(&self) -> Result<CarFollowingModel> {
        build_model(&self.params)
    }

    pub fn functionals(&self) -> Result<CarFollowingFunctionals> {
        build_functionals(&self.params)
    }

    pub fn controller(&self) -> Result<SlidingController> {
        build_sliding_controller(&self.params)
    }
}

/// A random buffer strictly inside the headway safe set.
///
/// Each component is affine in `θ` with a random slope, speeds in
/// `[5, 30]` m/s and gaps at least 5 m beyond the headway distance.
pub fn sample_interior_buffer<R: Rng + ?Sized>(
    rng: &mut R,
    params: &CarFollowingParams,
    dt: f64,
) -> Result<HistorySegment> {
    let safe_set = HeadwaySafeSet::new(3, SPEED, GAP, params.headway, params.penalty);
    for _ in 0..1000 {
        let v = rng.random_range(5.0..30.0);
        let vl = rng.random_range(5.0..30.0);
        let d = params.headway * v + rng.random_range(5.0..150.0);
        let slope = [
            rng.random_range(-10.0..10.0),
            rng.random_range(-5.0..5.0),
            rng.random_range(-20.0..20.0),
        ];
        let now = [v, vl, d];
        let phi = HistorySegment::new(params.delay, dt, |t| DVector::from_fn(3, |i, _| now[i] + slope[i] * t))?;
        if safe_set.value(&phi)? > 1e-3 {
            return Ok(phi);
        }
    }
    Err(Error::Sampling(
        "could not draw an interior car-following buffer".into(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn drift_examples() {
        let model = build_model(&CarFollowingParams::default()).unwrap();
        let phi = HistorySegment::constant(0.2, 1e-3, &[10.0, 10.0, 42.0]).unwrap();
        let f = model.drift(0.0, &phi);
        assert_eq!(f[0], 0.0);
        assert_eq!(f[2], 0.0);
        assert_eq!(f[1], 0.0);
    }

    #[test]
    fn diffusion_example() {
        let model = build_model(&CarFollowingParams::default()).unwrap();
        let phi = HistorySegment::constant(0.2, 1e-3, &[16.0, 10.0, 150.0]).unwrap();
        let rho = model.diffusion(0.0, &phi);
        assert!((rho[(0, 0)] - 0.8).abs() < 1e-15);
        assert_eq!(rho[(1, 0)], 0.0);
        assert!((rho[(2, 0)] - 7.5).abs() < 1e-15);
    }

    #[test]
    fn delayed_drag_uses_oldest_sample() {
        let params = CarFollowingParams::default();
        let model = build_model(&params).unwrap();
        let phi = HistorySegment::new(0.2, 1e-3, |t| DVector::from_vec(vec![20.0 + 10.0 * t, 10.0, 100.0])).unwrap();
        let f = model.drift(0.0, &phi);
        assert!((f[0] - (params.drag(18.0) - params.drag(20.0))).abs() < 1e-12);
    }

    #[test]
    fn surface_value_on_constant_history() {
        let params = CarFollowingParams::default();
        let surface = build_surface(&params).unwrap();
        let phi = HistorySegment::constant(0.2, 1e-3, &[10.0, 0.0, 150.0]).unwrap();
        // V = 144·1.2, h = 150 - 18 - 0.01·0.2·132², B = ln(1 + 1/h)
        let h = 150.0 - 18.0 - 0.01 * 0.2 * 132.0_f64.powi(2);
        let expected = 172.8 + 50.0 * (1.0 / h).ln_1p();
        assert!((surface.value(&phi).unwrap() - expected).abs() < 1e-9);
        assert!((expected - 173.312).abs() < 1e-3);
    }

    #[test]
    fn presets() {
        let s = preset(PresetFamily::Fig1L, 1).unwrap();
        assert_eq!(s.initial, vec![10.0, 10.0, 150.0]);
        assert_eq!(s.params.noise_scale, 0.05);
        assert_eq!(s.params.gain, 10.0);
        assert_eq!(s.params.smoothing, 0.1);
        assert_eq!((s.dt, s.horizon), (1e-3, 60.0));
        let s = preset(PresetFamily::Fig2Ell, 3).unwrap();
        assert_eq!(s.initial, vec![16.0, 10.0, 150.0]);
        assert_eq!(s.params.noise_scale, 3.0);
        assert_eq!(s.params.gain, 15.0);
        assert_eq!(preset(PresetFamily::Fig1L, 7).unwrap_err().category(), "config");
        assert_eq!(preset(PresetFamily::Fig2Ell, 0).unwrap_err().category(), "config");
        assert!(s.validate().is_ok());
        assert_eq!(PresetFamily::parse("fig2_ell").unwrap(), PresetFamily::Fig2Ell);
    }

    #[test]
    fn lead_profiles() {
        let p = LeadProfile::PiecewiseConstant {
            times: vec![0.0, 10.0, 20.0],
            values: vec![1.0, -2.0, 0.0],
        };
        p.validate().unwrap();
        assert_eq!(p.at(-1.0), 1.0);
        assert_eq!(p.at(5.0), 1.0);
        assert_eq!(p.at(10.0), -2.0);
        assert_eq!(p.at(30.0), 0.0);
        assert!(LeadProfile::Constant { accel: 3.0 }.validate().is_err());
        let unsorted = LeadProfile::PiecewiseConstant {
            times: vec![1.0, 0.0],
            values: vec![0.0, 0.0],
        };
        assert!(unsorted.validate().is_err());
    }

    #[test]
    fn invalid_params_are_config_errors() {
        let p = CarFollowingParams {
            mass: 0.0,
            ..CarFollowingParams::default()
        };
        assert_eq!(build_model(&p).unwrap_err().category(), "config");
        let p = CarFollowingParams {
            noise_scale: -1.0,
            ..CarFollowingParams::default()
        };
        assert!(build_functionals(&p).is_err());
    }

    #[test]
    fn sampled_buffers_are_interior_and_safe_set_implies_headway() {
        let params = CarFollowingParams::default();
        let f = build_functionals(&params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let buffers: Vec<_> = (0..100)
            .map(|_| sample_interior_buffer(&mut rng, &params, 1e-2).unwrap())
            .collect();
        for phi in &buffers {
            let h = f.scbkf.eval_h(phi).unwrap();
            assert!(h > 0.0);
            assert!(f.safe_set.margin(phi.newest()) >= h);
        }
        assert!(f.scbkf.spot_check_reciprocal(&buffers).unwrap().is_empty());
    }
}
