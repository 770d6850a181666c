//! The time-delay state `φ = x_t ∈ PC([-Δ, 0], ℝⁿ)` as a uniform-grid buffer.
//!
//! Samples are stored in a flat ring so that shifting the window by one grid
//! step is O(n). Index `0` is always the oldest sample (`θ = -Δ`) and index
//! [`HistorySegment::intervals`] the newest (`θ = 0`).

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Relative tolerance on `Δ / dt` being an integer.
const GRID_RATIO_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct HistorySegment {
    delay: f64,
    grid_step: f64,
    intervals: usize,
    state_dim: usize,
    data: Vec<f64>,
    head: usize,
}

fn grid_intervals(delay: f64, grid_step: f64) -> Result<usize> {
    if !(delay.is_finite() && delay > 0.0) {
        return Err(Error::config(
            "delay",
            format!("must be positive and finite, got {delay}"),
        ));
    }
    if !(grid_step.is_finite() && grid_step > 0.0) {
        return Err(Error::config(
            "grid_step",
            format!("must be positive and finite, got {grid_step}"),
        ));
    }
    let ratio = delay / grid_step;
    let rounded = ratio.round();
    if rounded < 1.0 || (ratio - rounded).abs() > GRID_RATIO_TOL * ratio {
        return Err(Error::config(
            "grid_step",
            format!("delay {delay} is not an integer multiple of grid step {grid_step}"),
        ));
    }
    Ok(rounded as usize)
}

impl HistorySegment {
    /// Samples `init(θ)` on the grid `θ_k = -(N - k)·dt`, `k = 0..=N`, `N = Δ/dt`.
    pub fn new<F>(delay: f64, grid_step: f64, init: F) -> Result<Self>
    where
        F: Fn(f64) -> DVector<f64>,
    {
        let intervals = grid_intervals(delay, grid_step)?;
        let mut data = Vec::new();
        let mut state_dim = 0;
        for k in 0..=intervals {
            let theta = -((intervals - k) as f64) * grid_step;
            let v = init(theta);
            if k == 0 {
                state_dim = v.len();
                if state_dim == 0 {
                    return Err(Error::Domain("initializer returned an empty vector".into()));
                }
                data.reserve(state_dim * (intervals + 1));
            } else if v.len() != state_dim {
                return Err(Error::Domain(format!(
                    "initializer dimension changed from {state_dim} to {} at theta = {theta}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Domain(format!("non-finite initial value at theta = {theta}")));
            }
            data.extend(v.iter());
        }
        Ok(Self {
            delay,
            grid_step,
            intervals,
            state_dim,
            data,
            head: 0,
        })
    }

    /// History that is identically `value` over the window.
    pub fn constant(delay: f64, grid_step: f64, value: &[f64]) -> Result<Self> {
        let v = DVector::from_column_slice(value);
        Self::new(delay, grid_step, |_| v.clone())
    }

    pub fn zeros(delay: f64, grid_step: f64, state_dim: usize) -> Result<Self> {
        Self::new(delay, grid_step, |_| DVector::zeros(state_dim))
    }

    /// Builds a buffer from samples ordered oldest first.
    pub fn from_samples(delay: f64, grid_step: f64, samples: &[DVector<f64>]) -> Result<Self> {
        let intervals = grid_intervals(delay, grid_step)?;
        if samples.len() != intervals + 1 {
            return Err(Error::Domain(format!(
                "expected {} samples, got {}",
                intervals + 1,
                samples.len()
            )));
        }
        Self::new(delay, grid_step, |theta| {
            let k = intervals - (-theta / grid_step).round() as usize;
            samples[k].clone()
        })
    }

    pub fn delay(&self) -> f64 {
        self.delay
    }

    pub fn grid_step(&self) -> f64 {
        self.grid_step
    }

    /// Number of grid intervals `Δ / dt`.
    pub fn intervals(&self) -> usize {
        self.intervals
    }

    /// Number of stored samples, `Δ / dt + 1`.
    pub fn len(&self) -> usize {
        self.intervals + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    /// Grid time of sample `k`.
    pub fn theta(&self, k: usize) -> f64 {
        -((self.intervals - k) as f64) * self.grid_step
    }

    fn slot(&self, k: usize) -> usize {
        let slots = self.intervals + 1;
        let s = self.head + k;
        if s >= slots {
            s - slots
        } else {
            s
        }
    }

    /// Sample `k`, counted from the oldest.
    pub fn get(&self, k: usize) -> &[f64] {
        assert!(k <= self.intervals, "sample index {k} out of range");
        let s = self.slot(k) * self.state_dim;
        &self.data[s..s + self.state_dim]
    }

    /// `φ(0)`.
    pub fn newest(&self) -> &[f64] {
        self.get(self.intervals)
    }

    /// `φ(-Δ)`.
    pub fn oldest(&self) -> &[f64] {
        self.get(0)
    }

    pub fn newest_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(self.newest())
    }

    /// Samples in time order, oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        let split = self.head * self.state_dim;
        let (front, back) = self.data.split_at(split);
        back.chunks_exact(self.state_dim)
            .chain(front.chunks_exact(self.state_dim))
    }

    /// Drops the oldest sample and appends `state` as the new `θ = 0` sample.
    pub fn advance(&mut self, state: &[f64]) -> Result<()> {
        if state.len() != self.state_dim {
            return Err(Error::Domain(format!(
                "state dimension {} does not match history dimension {}",
                state.len(),
                self.state_dim
            )));
        }
        if state.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("cannot append a non-finite state".into()));
        }
        let s = self.head * self.state_dim;
        self.data[s..s + self.state_dim].copy_from_slice(state);
        self.head = self.slot(1);
        Ok(())
    }

    /// Non-mutating form of [`advance`](Self::advance).
    pub fn advanced(&self, state: &[f64]) -> Result<Self> {
        let mut next = self.clone();
        next.advance(state)?;
        Ok(next)
    }

    /// `φ(θ)` by linear interpolation between bracketing grid samples.
    pub fn sample(&self, theta: f64) -> Result<DVector<f64>> {
        let tol = 1e-12 * self.delay;
        if !theta.is_finite() || theta > tol || theta < -self.delay - tol {
            return Err(Error::Range {
                theta,
                delay: self.delay,
            });
        }
        let pos = (self.intervals as f64 + theta / self.grid_step).clamp(0.0, self.intervals as f64);
        let nearest = pos.round();
        if (pos - nearest).abs() <= 1e-9 {
            return Ok(DVector::from_column_slice(self.get(nearest as usize)));
        }
        let lo = pos.floor() as usize;
        let w = pos - lo as f64;
        let a = self.get(lo);
        let b = self.get(lo + 1);
        Ok(DVector::from_iterator(
            self.state_dim,
            a.iter().zip(b).map(|(x, y)| (1.0 - w) * x + w * y),
        ))
    }

    /// `‖φ‖ = sup_θ |φ(θ)|`, the maximum Euclidean norm over grid samples.
    pub fn sup_norm(&self) -> f64 {
        self.iter()
            .map(|s| s.iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// Composite trapezoid approximation of `∫_{-Δ}^0 w(φ(τ)) dτ`.
    pub fn integrate<W>(&self, w: W) -> Result<f64>
    where
        W: Fn(&[f64]) -> f64,
    {
        let mut sum = 0.0;
        for s in self.iter() {
            sum += w(s);
        }
        let ends = 0.5 * (w(self.oldest()) + w(self.newest()));
        let value = self.grid_step * (sum - ends);
        if value.is_finite() {
            Ok(value)
        } else {
            Err(Error::Numeric("non-finite integrand over the delay window".into()))
        }
    }

    /// Pointwise `a·self + b·other` on a shared grid.
    pub fn combine(&self, a: f64, other: &HistorySegment, b: f64) -> Result<Self> {
        if self.intervals != other.intervals
            || self.state_dim != other.state_dim
            || (self.grid_step - other.grid_step).abs() > 1e-12 * self.grid_step
        {
            return Err(Error::Domain("histories do not share a grid".into()));
        }
        let mut out = self.clone();
        out.head = 0;
        out.data.clear();
        for (x, y) in self.iter().zip(other.iter()) {
            out.data.extend(x.iter().zip(y).map(|(p, q)| a * p + b * q));
        }
        if out.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("combination produced non-finite samples".into()));
        }
        Ok(out)
    }

    /// `α·φ`.
    pub fn scaled(&self, alpha: f64) -> Result<Self> {
        self.combine(alpha, self, 0.0)
    }
}
