//! Control-affine SDDE `dx = (f(x_t) + g(x_t) u) dt + ρ(x_t) dw` and its
//! Euler–Maruyama closed-loop integration.
//!
//! The control is held constant over each step. Every path owns a
//! [`ChaCha8Rng`] seeded with `seed_base + path_index`, so a batch of paths is
//! reproducible regardless of execution order.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::history::HistorySegment;

/// Paths whose state norm exceeds this are aborted as blown up.
pub const BLOWUP_THRESHOLD: f64 = 1e9;

/// `(n, m, p)`: state, input and noise dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub state: usize,
    pub input: usize,
    pub noise: usize,
}

/// `f(φ)`, `g(φ)` and `ρ(φ)` evaluated on one buffer.
#[derive(Debug, Clone)]
pub struct Coefficients {
    pub drift: DVector<f64>,
    pub input_gain: DMatrix<f64>,
    pub diffusion: DMatrix<f64>,
}

/// The functional triple `(f, g, ρ)`.
///
/// `t` is passed through for models with exogenous time-varying terms (the
/// lead-car acceleration of the car-following benchmark, for instance).
pub trait SddeModel: Send + Sync {
    fn dims(&self) -> Dims;

    fn drift(&self, t: f64, phi: &HistorySegment) -> DVector<f64>;

    fn input_gain(&self, t: f64, phi: &HistorySegment) -> DMatrix<f64>;

    fn diffusion(&self, t: f64, phi: &HistorySegment) -> DMatrix<f64>;

    fn coefficients(&self, t: f64, phi: &HistorySegment) -> Coefficients {
        Coefficients {
            drift: self.drift(t, phi),
            input_gain: self.input_gain(t, phi),
            diffusion: self.diffusion(t, phi),
        }
    }
}

type VectorFn = dyn Fn(f64, &HistorySegment) -> DVector<f64> + Send + Sync;
type MatrixFn = dyn Fn(f64, &HistorySegment) -> DMatrix<f64> + Send + Sync;

/// A model assembled from closures.
#[derive(Clone)]
pub struct FnModel {
    dims: Dims,
    f: Arc<VectorFn>,
    g: Arc<MatrixFn>,
    rho: Arc<MatrixFn>,
}

impl FnModel {
    pub fn new<F, G, R>(dims: Dims, f: F, g: G, rho: R) -> Self
    where
        F: Fn(f64, &HistorySegment) -> DVector<f64> + Send + Sync + 'static,
        G: Fn(f64, &HistorySegment) -> DMatrix<f64> + Send + Sync + 'static,
        R: Fn(f64, &HistorySegment) -> DMatrix<f64> + Send + Sync + 'static,
    {
        Self {
            dims,
            f: Arc::new(f),
            g: Arc::new(g),
            rho: Arc::new(rho),
        }
    }

    /// Enforces `f(0) = 0`, `g(0) = 0`, `ρ(0) = 0` on the zero buffer of the given grid.
    pub fn with_zero_equilibrium(self, delay: f64, grid_step: f64) -> Result<Self> {
        check_zero_equilibrium(&self, delay, grid_step)?;
        Ok(self)
    }
}

impl SddeModel for FnModel {
    fn dims(&self) -> Dims {
        self.dims
    }

    fn drift(&self, t: f64, phi: &HistorySegment) -> DVector<f64> {
        (self.f)(t, phi)
    }

    fn input_gain(&self, t: f64, phi: &HistorySegment) -> DMatrix<f64> {
        (self.g)(t, phi)
    }

    fn diffusion(&self, t: f64, phi: &HistorySegment) -> DMatrix<f64> {
        (self.rho)(t, phi)
    }
}

pub fn check_zero_equilibrium(model: &dyn SddeModel, delay: f64, grid_step: f64) -> Result<()> {
    let dims = model.dims();
    let zero = HistorySegment::zeros(delay, grid_step, dims.state)?;
    let c = checked_coefficients(model, 0.0, &zero)?;
    let worst = c.drift.amax().max(c.input_gain.amax()).max(c.diffusion.amax());
    if worst > 1e-12 {
        return Err(Error::Domain(format!(
            "model does not vanish on the zero history (max |coefficient| = {worst:e})"
        )));
    }
    Ok(())
}

/// Coefficients with their shapes checked against [`SddeModel::dims`].
pub fn checked_coefficients(model: &dyn SddeModel, t: f64, phi: &HistorySegment) -> Result<Coefficients> {
    let dims = model.dims();
    if phi.state_dim() != dims.state {
        return Err(Error::Domain(format!(
            "history dimension {} does not match model state dimension {}",
            phi.state_dim(),
            dims.state
        )));
    }
    let c = model.coefficients(t, phi);
    if c.drift.len() != dims.state
        || c.input_gain.shape() != (dims.state, dims.input)
        || c.diffusion.shape() != (dims.state, dims.noise)
    {
        return Err(Error::Domain(format!(
            "model outputs have shapes f: {}, g: {:?}, rho: {:?}; expected n = {}, m = {}, p = {}",
            c.drift.len(),
            c.input_gain.shape(),
            c.diffusion.shape(),
            dims.state,
            dims.input,
            dims.noise
        )));
    }
    Ok(c)
}

/// `p` independent `N(0, dt)` draws.
pub fn brownian_increment<R: Rng + ?Sized>(rng: &mut R, dt: f64, p: usize) -> DVector<f64> {
    let scale = dt.max(0.0).sqrt();
    DVector::from_fn(p, |_, _| {
        let z: f64 = rng.sample(StandardNormal);
        scale * z
    })
}

/// One Euler–Maruyama step: `φ(0) + (f(φ) + g(φ) u) dt + ρ(φ) dW`.
///
/// `dt` must equal the grid step of `hist`. A non-finite result is reported as
/// [`Error::Blowup`] with `step = 0`; [`simulate`] rewrites the step index.
pub fn em_step(
    model: &dyn SddeModel,
    t: f64,
    hist: &HistorySegment,
    u: &DVector<f64>,
    dt: f64,
    dw: &DVector<f64>,
) -> Result<DVector<f64>> {
    if (dt - hist.grid_step()).abs() > 1e-12 * hist.grid_step() {
        return Err(Error::config(
            "dt",
            format!("step {dt} differs from the history grid step {}", hist.grid_step()),
        ));
    }
    let dims = model.dims();
    if u.len() != dims.input || dw.len() != dims.noise {
        return Err(Error::Domain(format!(
            "input/noise lengths ({}, {}) do not match model (m = {}, p = {})",
            u.len(),
            dw.len(),
            dims.input,
            dims.noise
        )));
    }
    let c = checked_coefficients(model, t, hist)?;
    let mut next = hist.newest_vector();
    next += (c.drift + &c.input_gain * u) * dt;
    next += &c.diffusion * dw;
    if next.iter().any(|x| !x.is_finite()) {
        return Err(Error::Blowup {
            step: 0,
            message: "non-finite state".into(),
        });
    }
    Ok(next)
}

/// A state-feedback law on the delayed state.
pub trait FeedbackController: Send + Sync {
    fn input_dim(&self) -> usize;

    fn control(&self, t: f64, phi: &HistorySegment) -> Result<DVector<f64>>;
}

/// Always returns the zero input.
#[derive(Debug, Clone, Copy)]
pub struct ZeroController {
    pub input_dim: usize,
}

impl FeedbackController for ZeroController {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn control(&self, _t: f64, _phi: &HistorySegment) -> Result<DVector<f64>> {
        Ok(DVector::zeros(self.input_dim))
    }
}

/// Wraps a closure as a controller.
pub struct FnController<F> {
    input_dim: usize,
    law: F,
}

impl<F> FnController<F>
where
    F: Fn(f64, &HistorySegment) -> Result<DVector<f64>> + Send + Sync,
{
    pub fn new(input_dim: usize, law: F) -> Self {
        Self { input_dim, law }
    }
}

impl<F> FeedbackController for FnController<F>
where
    F: Fn(f64, &HistorySegment) -> Result<DVector<f64>> + Send + Sync,
{
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn control(&self, t: f64, phi: &HistorySegment) -> Result<DVector<f64>> {
        (self.law)(t, phi)
    }
}

type ObservableFn = dyn Fn(f64, &HistorySegment) -> Result<f64> + Send + Sync;

/// A named scalar functional logged along a trace (V, B, h, U, ...).
#[derive(Clone)]
pub struct Observable {
    name: String,
    eval: Arc<ObservableFn>,
}

impl Observable {
    pub fn new<F>(name: impl Into<String>, eval: F) -> Self
    where
        F: Fn(f64, &HistorySegment) -> Result<f64> + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            eval: Arc::new(eval),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn eval(&self, t: f64, phi: &HistorySegment) -> Result<f64> {
        (self.eval)(t, phi)
    }

    /// Evaluation errors are logged as NaN.
    pub fn eval_or_nan(&self, t: f64, phi: &HistorySegment) -> f64 {
        self.eval(t, phi).unwrap_or(f64::NAN)
    }
}

impl std::fmt::Debug for Observable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Observable").field("name", &self.name).finish()
    }
}

/// Why and where a path stopped early.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathFailure {
    pub step: usize,
    pub category: String,
    pub message: String,
}

impl PathFailure {
    fn from_error(step: usize, err: &Error) -> Self {
        Self {
            step,
            category: err.category().to_string(),
            message: err.to_string(),
        }
    }
}

/// Callbacks invoked by [`drive_path`] at each grid step.
pub trait PathObserver {
    /// Called with the buffer `x_{t_k}` before the controller is evaluated.
    fn state(&mut self, step: usize, t: f64, phi: &HistorySegment);

    /// Called with the input applied over `[t_k, t_{k+1})`.
    fn input(&mut self, _step: usize, _u: &DVector<f64>) {}
}

/// Number of steps `horizon / dt`, which must be integral.
pub fn step_count(horizon: f64, dt: f64) -> Result<usize> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::config("horizon", format!("must be positive, got {horizon}")));
    }
    let ratio = horizon / dt;
    let n = ratio.round();
    if n < 1.0 || (ratio - n).abs() > 1e-9 * ratio {
        return Err(Error::config(
            "horizon",
            format!("horizon {horizon} is not an integer multiple of dt {dt}"),
        ));
    }
    Ok(n as usize)
}

/// Runs one closed-loop path for `steps` steps from `init`.
///
/// The observer sees steps `0..=steps` unless the path fails; the returned
/// failure names the step at which the controller failed or the state blew up.
pub fn drive_path<O: PathObserver>(
    model: &dyn SddeModel,
    controller: &dyn FeedbackController,
    init: &HistorySegment,
    steps: usize,
    seed: u64,
    observer: &mut O,
) -> Option<PathFailure> {
    let dims = model.dims();
    let dt = init.grid_step();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut phi = init.clone();
    for k in 0..=steps {
        let t = k as f64 * dt;
        observer.state(k, t, &phi);
        let u = match controller.control(t, &phi) {
            Ok(u) if u.len() != dims.input => {
                let err = Error::Domain(format!(
                    "controller returned {} inputs, expected {}",
                    u.len(),
                    dims.input
                ));
                return Some(PathFailure::from_error(k, &err));
            }
            Ok(u) if u.iter().any(|v| !v.is_finite()) => {
                let err = Error::Numeric("controller returned a non-finite input".into());
                return Some(PathFailure::from_error(k, &err));
            }
            Ok(u) => u,
            Err(err) => return Some(PathFailure::from_error(k, &err)),
        };
        observer.input(k, &u);
        if k == steps {
            break;
        }
        let dw = brownian_increment(&mut rng, dt, dims.noise);
        let next = match em_step(model, t, &phi, &u, dt, &dw) {
            Ok(x) => x,
            Err(Error::Blowup { message, .. }) => {
                let err = Error::Blowup { step: k + 1, message };
                return Some(PathFailure::from_error(k + 1, &err));
            }
            Err(err) => return Some(PathFailure::from_error(k, &err)),
        };
        if next.norm() > BLOWUP_THRESHOLD {
            let err = Error::Blowup {
                step: k + 1,
                message: format!("|x| = {:e} exceeds {BLOWUP_THRESHOLD:e}", next.norm()),
            };
            return Some(PathFailure::from_error(k + 1, &err));
        }
        // Dimension and finiteness are already guaranteed here.
        phi.advance(next.as_slice()).expect("validated state");
    }
    None
}

/// A time-stamped closed-loop sample path.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub logs: Vec<(String, Vec<f64>)>,
    pub seed: u64,
    pub failure: Option<PathFailure>,
}

struct TraceRecorder<'a> {
    observables: &'a [Observable],
    trace: SimulationTrace,
}

impl PathObserver for TraceRecorder<'_> {
    fn state(&mut self, _step: usize, t: f64, phi: &HistorySegment) {
        // Rows are only committed once the input is known, keeping series aligned.
        self.trace.times.push(t);
        self.trace.states.push(phi.newest_vector());
        for (obs, (_, series)) in self.observables.iter().zip(self.trace.logs.iter_mut()) {
            series.push(obs.eval_or_nan(t, phi));
        }
    }

    fn input(&mut self, _step: usize, u: &DVector<f64>) {
        self.trace.inputs.push(u.clone());
    }
}

/// Integrates the closed loop from `init` over `horizon` seconds with step
/// `init.grid_step()`. Controller failures and blow-ups do not return an
/// error; they truncate the trace and set [`SimulationTrace::failure`].
pub fn simulate(
    model: &dyn SddeModel,
    controller: &dyn FeedbackController,
    init: &HistorySegment,
    horizon: f64,
    seed: u64,
    observables: &[Observable],
) -> Result<SimulationTrace> {
    let dims = model.dims();
    if init.state_dim() != dims.state {
        return Err(Error::config(
            "init",
            format!(
                "initial history has dimension {}, model expects {}",
                init.state_dim(),
                dims.state
            ),
        ));
    }
    if controller.input_dim() != dims.input {
        return Err(Error::config(
            "controller",
            format!(
                "controller has {} inputs, model expects {}",
                controller.input_dim(),
                dims.input
            ),
        ));
    }
    let steps = step_count(horizon, init.grid_step())?;
    let mut rec = TraceRecorder {
        observables,
        trace: SimulationTrace {
            times: Vec::with_capacity(steps + 1),
            states: Vec::with_capacity(steps + 1),
            inputs: Vec::with_capacity(steps + 1),
            logs: observables.iter().map(|o| (o.name().to_string(), Vec::new())).collect(),
            seed,
            failure: None,
        },
    };
    let failure = drive_path(model, controller, init, steps, seed, &mut rec);
    let mut trace = rec.trace;
    // Drop a trailing row whose input was never computed.
    let rows = trace.inputs.len();
    trace.times.truncate(rows);
    trace.states.truncate(rows);
    for (_, series) in &mut trace.logs {
        series.truncate(rows);
    }
    trace.failure = failure;
    Ok(trace)
}

/// Formats a float with 17 significant digits.
pub fn format_sig17(x: f64) -> String {
    format!("{x:.16e}")
}

impl SimulationTrace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> Option<&DVector<f64>> {
        self.states.last()
    }

    /// Euclidean norm of the applied input at each row.
    pub fn input_norms(&self) -> Vec<f64> {
        self.inputs.iter().map(|u| u.norm()).collect()
    }

    pub fn log(&self, name: &str) -> Option<&[f64]> {
        self.logs.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    /// CSV with header `t,x1..xn,u1..um,<log names>`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let n = self.states.first().map_or(0, |s| s.len());
        let m = self.inputs.first().map_or(0, |u| u.len());
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend((1..=m).map(|i| format!("u{i}")));
        header.extend(self.logs.iter().map(|(name, _)| name.clone()));
        writeln!(out, "{}", header.join(","))?;
        for k in 0..self.len() {
            let mut row = Vec::with_capacity(header.len());
            row.push(format_sig17(self.times[k]));
            row.extend(self.states[k].iter().map(|&v| format_sig17(v)));
            row.extend(self.inputs[k].iter().map(|&v| format_sig17(v)));
            row.extend(self.logs.iter().map(|(_, s)| format_sig17(s[k])));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}
