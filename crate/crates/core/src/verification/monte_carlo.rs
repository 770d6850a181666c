use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::stats::ProbabilityEstimate;
use crate::controllers::SlidingSurface;
use crate::error::{Error, Result};
use crate::functionals::{Scbkf, Sclkf};
use crate::history::HistorySegment;
use crate::sim::{
    drive_path, format_sig17, step_count, FeedbackController, Observable, PathFailure, PathObserver, SddeModel,
};

/// Per-path bookkeeping for a Monte Carlo batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathOutcome {
    pub index: usize,
    pub seed: u64,
    /// Minimum of the safety observable over the grid steps that were reached.
    pub min_safety: f64,
    /// Final state, for paths that reached the horizon.
    pub terminal: Option<Vec<f64>>,
    pub failure: Option<PathFailure>,
    /// Curve samples, one series per observable, taken every `curve_stride` steps.
    pub curves: Vec<Vec<f64>>,
}

impl PathOutcome {
    /// Completed, and the safety observable never went negative. Failed paths
    /// are unsafe.
    pub fn is_safe(&self) -> bool {
        self.failure.is_none() && self.min_safety >= 0.0
    }
}

struct OutcomeRecorder<'a> {
    safety: &'a Observable,
    curves: &'a [Observable],
    stride: usize,
    steps: usize,
    outcome: PathOutcome,
    last: Option<DVector<f64>>,
}

impl PathObserver for OutcomeRecorder<'_> {
    fn state(&mut self, step: usize, t: f64, phi: &HistorySegment) {
        let s = self.safety.eval_or_nan(t, phi);
        // NaN counts as unsafe.
        self.outcome.min_safety = if s.is_nan() {
            f64::NEG_INFINITY
        } else {
            self.outcome.min_safety.min(s)
        };
        if step.is_multiple_of(self.stride) || step == self.steps {
            for (obs, series) in self.curves.iter().zip(self.outcome.curves.iter_mut()) {
                series.push(obs.eval_or_nan(t, phi));
            }
        }
        if step == self.steps {
            self.last = Some(phi.newest_vector());
        }
    }
}

/// Curve sample times for a horizon of `steps` steps.
fn curve_steps(steps: usize, stride: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (0..=steps).step_by(stride).collect();
    if out.last() != Some(&steps) {
        out.push(steps);
    }
    out
}

/// Runs `paths` independent closed-loop paths, path `i` seeded with
/// `seed_base + i`. Results are ordered by path index whatever the
/// scheduling.
#[allow(clippy::too_many_arguments)]
pub fn run_paths(
    model: &dyn SddeModel,
    controller: &dyn FeedbackController,
    init: &HistorySegment,
    horizon: f64,
    paths: usize,
    seed_base: u64,
    safety: &Observable,
    curves: &[Observable],
    curve_stride: usize,
) -> Result<Vec<PathOutcome>> {
    if paths == 0 {
        return Err(Error::config("paths", "must be at least 1"));
    }
    if curve_stride == 0 {
        return Err(Error::config("curve_stride", "must be at least 1"));
    }
    if init.state_dim() != model.dims().state {
        return Err(Error::config(
            "init",
            "initial history does not match the model dimension",
        ));
    }
    let steps = step_count(horizon, init.grid_step())?;
    let outcomes = (0..paths)
        .into_par_iter()
        .map(|index| {
            let seed = seed_base.wrapping_add(index as u64);
            let mut rec = OutcomeRecorder {
                safety,
                curves,
                stride: curve_stride,
                steps,
                outcome: PathOutcome {
                    index,
                    seed,
                    min_safety: f64::INFINITY,
                    terminal: None,
                    failure: None,
                    curves: vec![Vec::new(); curves.len()],
                },
                last: None,
            };
            let failure = drive_path(model, controller, init, steps, seed, &mut rec);
            let mut outcome = rec.outcome;
            if failure.is_none() {
                outcome.terminal = rec.last.map(|x| x.as_slice().to_vec());
            }
            outcome.failure = failure;
            outcome
        })
        .collect();
    Ok(outcomes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedCurve {
    pub name: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct MonteCarloOptions {
    /// Logged every `curve_stride` steps and averaged over completed paths.
    pub curves: Vec<Observable>,
    pub curve_stride: usize,
    /// Replaces `h` as the safety indicator; a path is safe when this stays `≥ 0`.
    pub safety_override: Option<Observable>,
    /// `(component, target)` pairs for terminal tracking error.
    pub targets: Vec<(usize, f64)>,
}

impl Default for MonteCarloOptions {
    fn default() -> Self {
        Self {
            curves: Vec::new(),
            curve_stride: 100,
            safety_override: None,
            targets: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub paths: usize,
    pub horizon: f64,
    pub dt: f64,
    pub seed_base: u64,
    pub safety_indicator: String,
    pub safety_probability: ProbabilityEstimate,
    pub curve_times: Vec<f64>,
    /// Means over the paths that reached the horizon.
    pub mean_functional_curves: Vec<NamedCurve>,
    pub failed_paths: usize,
    pub failure_reasons: BTreeMap<String, usize>,
    /// Per path, in path order; `-inf` marks a path whose indicator was not finite.
    pub min_safety_over_time: Vec<f64>,
    /// Per path, in path order.
    pub path_safe: Vec<bool>,
    /// Mean `|x_i(T) - target|` over completed paths, one per target; NaN if none completed.
    pub terminal_mean_abs_error: Vec<f64>,
}

impl MonteCarloReport {
    fn from_outcomes(
        outcomes: &[PathOutcome],
        curve_names: &[String],
        curve_times: Vec<f64>,
        (horizon, dt, seed_base): (f64, f64, u64),
        safety_indicator: String,
        targets: &[(usize, f64)],
    ) -> Self {
        let safe = outcomes.iter().filter(|o| o.is_safe()).count();
        let mut failure_reasons = BTreeMap::new();
        for f in outcomes.iter().filter_map(|o| o.failure.as_ref()) {
            *failure_reasons.entry(f.category.clone()).or_insert(0) += 1;
        }
        let completed: Vec<&PathOutcome> = outcomes.iter().filter(|o| o.failure.is_none()).collect();
        let mean_functional_curves = curve_names
            .iter()
            .enumerate()
            .map(|(j, name)| NamedCurve {
                name: name.clone(),
                values: mean_series(completed.iter().map(|o| &o.curves[j]), curve_times.len()),
            })
            .collect();
        let terminal_mean_abs_error = targets
            .iter()
            .map(|&(i, target)| {
                let errs: Vec<f64> = completed
                    .iter()
                    .filter_map(|o| o.terminal.as_ref().map(|x| (x[i] - target).abs()))
                    .collect();
                if errs.is_empty() {
                    f64::NAN
                } else {
                    errs.iter().sum::<f64>() / errs.len() as f64
                }
            })
            .collect();
        Self {
            paths: outcomes.len(),
            horizon,
            dt,
            seed_base,
            safety_indicator,
            safety_probability: ProbabilityEstimate::new(safe, outcomes.len()),
            curve_times,
            mean_functional_curves,
            failed_paths: outcomes.len() - completed.len(),
            failure_reasons,
            min_safety_over_time: outcomes.iter().map(|o| o.min_safety).collect(),
            path_safe: outcomes.iter().map(PathOutcome::is_safe).collect(),
            terminal_mean_abs_error,
        }
    }

    /// `path,min_safety,safe` rows.
    pub fn write_minima_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "path,min_safety,safe")?;
        for (i, m) in self.min_safety_over_time.iter().enumerate() {
            writeln!(out, "{i},{},{}", format_sig17(*m), u8::from(self.path_safe[i]))?;
        }
        Ok(())
    }

    /// Plain-text summary.
    pub fn summary(&self) -> String {
        let p = &self.safety_probability;
        let mut s = format!(
            "paths: {}\nhorizon: {} s (dt = {})\nseed_base: {}\nsafety indicator: {}\nsafety probability: {:.4} (95% Wilson [{:.4}, {:.4}], {}/{})\nfailed paths: {}\n",
            self.paths, self.horizon, self.dt, self.seed_base, self.safety_indicator, p.estimate, p.ci_lo, p.ci_hi,
            p.successes, p.trials, self.failed_paths
        );
        for (category, n) in &self.failure_reasons {
            s.push_str(&format!("  {category}: {n}\n"));
        }
        for (i, e) in self.terminal_mean_abs_error.iter().enumerate() {
            s.push_str(&format!("terminal mean |error| [{i}]: {e:.6}\n"));
        }
        s.push_str(
            "The probability is a finite-sample estimate at one confidence level, judged on the integration grid.\n",
        );
        s
    }
}

fn mean_series<'a>(series: impl Iterator<Item = &'a Vec<f64>>, len: usize) -> Vec<f64> {
    let mut sum = vec![0.0; len];
    let mut n = 0usize;
    for s in series {
        for (acc, v) in sum.iter_mut().zip(s) {
            *acc += v;
        }
        n += 1;
    }
    if n == 0 {
        return vec![f64::NAN; len];
    }
    sum.iter().map(|v| v / n as f64).collect()
}

/// `V`, `B`, `h` and `U` as loggable observables.
pub fn functional_observables(sclkf: &Sclkf, scbkf: &Scbkf, surface: &SlidingSurface) -> Vec<Observable> {
    let (v, b, h, u) = (sclkf.clone(), scbkf.clone(), scbkf.clone(), surface.clone());
    vec![
        Observable::new("V", move |_, phi| v.value(phi)),
        Observable::new("B", move |_, phi| b.eval_barrier(phi)),
        Observable::new("h", move |_, phi| h.eval_h(phi)),
        Observable::new("U", move |_, phi| u.value(phi)),
    ]
}

/// Fraction of paths whose safe-set functional stays nonnegative on every
/// grid step, with its Wilson interval.
#[allow(clippy::too_many_arguments)]
pub fn estimate_safety(
    model: &dyn SddeModel,
    controller: &dyn FeedbackController,
    scbkf: &Scbkf,
    init: &HistorySegment,
    horizon: f64,
    paths: usize,
    seed_base: u64,
    options: &MonteCarloOptions,
) -> Result<MonteCarloReport> {
    let safety = match &options.safety_override {
        Some(obs) => obs.clone(),
        None => {
            let s = scbkf.clone();
            Observable::new("h", move |_, phi| s.eval_h(phi))
        }
    };
    let outcomes = run_paths(
        model,
        controller,
        init,
        horizon,
        paths,
        seed_base,
        &safety,
        &options.curves,
        options.curve_stride,
    )?;
    let dt = init.grid_step();
    let steps = step_count(horizon, dt)?;
    let times = curve_steps(steps, options.curve_stride)
        .iter()
        .map(|&k| k as f64 * dt)
        .collect();
    let names: Vec<String> = options.curves.iter().map(|o| o.name().to_string()).collect();
    Ok(MonteCarloReport::from_outcomes(
        &outcomes,
        &names,
        times,
        (horizon, dt, seed_base),
        safety.name().to_string(),
        &options.targets,
    ))
}

#[derive(Debug, Clone)]
pub struct StabilityOptions {
    /// Start of the monotonicity test; `None` means `horizon / 10`.
    pub burn_in: Option<f64>,
    /// Moving-average window in seconds.
    pub window: f64,
    pub curve_stride: usize,
    pub targets: Vec<(usize, f64)>,
}

impl Default for StabilityOptions {
    fn default() -> Self {
        Self {
            burn_in: None,
            window: 1.0,
            curve_stride: 10,
            targets: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub paths: usize,
    pub completed_paths: usize,
    pub curve_times: Vec<f64>,
    /// Mean of `V(x_t)` over completed paths.
    pub mean_v: Vec<f64>,
    pub smoothed_mean_v: Vec<f64>,
    pub burn_in: f64,
    /// Whether the smoothed curve is non-increasing after the burn-in.
    pub eventually_decreasing: bool,
    pub terminal_mean_abs_error: Vec<f64>,
}

/// Empirical decay of `E[V(x_t)]`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_stability(
    model: &dyn SddeModel,
    controller: &dyn FeedbackController,
    sclkf: &Sclkf,
    init: &HistorySegment,
    horizon: f64,
    paths: usize,
    seed_base: u64,
    options: &StabilityOptions,
) -> Result<StabilityReport> {
    if !(options.window > 0.0) {
        return Err(Error::config("window", "must be positive"));
    }
    let v = sclkf.clone();
    let curves = [Observable::new("V", move |_, phi| v.value(phi))];
    let always_safe = Observable::new("none", |_, _| Ok(0.0));
    let outcomes = run_paths(
        model,
        controller,
        init,
        horizon,
        paths,
        seed_base,
        &always_safe,
        &curves,
        options.curve_stride,
    )?;
    let dt = init.grid_step();
    let steps = step_count(horizon, dt)?;
    let curve_times: Vec<f64> = curve_steps(steps, options.curve_stride)
        .iter()
        .map(|&k| k as f64 * dt)
        .collect();
    let report = MonteCarloReport::from_outcomes(
        &outcomes,
        &["V".to_string()],
        curve_times.clone(),
        (horizon, dt, seed_base),
        "none".into(),
        &options.targets,
    );
    let mean_v = report.mean_functional_curves[0].values.clone();
    let sample_dt = options.curve_stride as f64 * dt;
    let window = ((options.window / sample_dt).round() as usize).max(1);
    let smoothed_mean_v = moving_average(&mean_v, window);
    let burn_in = options.burn_in.unwrap_or(horizon / 10.0);
    let tail: Vec<f64> = curve_times
        .iter()
        .zip(&smoothed_mean_v)
        .filter(|(t, _)| **t >= burn_in)
        .map(|(_, v)| *v)
        .collect();
    let scale = tail.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let eventually_decreasing =
        !tail.is_empty() && tail.iter().all(|v| v.is_finite()) && tail.windows(2).all(|w| w[1] <= w[0] + 1e-12 * scale);
    Ok(StabilityReport {
        paths,
        completed_paths: paths - report.failed_paths,
        curve_times,
        mean_v,
        smoothed_mean_v,
        burn_in,
        eventually_decreasing,
        terminal_mean_abs_error: report.terminal_mean_abs_error,
    })
}

/// Trailing moving average; the first `window - 1` entries average what is available.
fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for (i, v) in values.iter().enumerate() {
        sum += v;
        if i >= window {
            sum -= values[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}
