use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Grid range over which monotonicity is sampled unless told otherwise.
pub const DEFAULT_CLASS_K_RANGE: (f64, f64) = (0.0, 1e3);

const MONOTONE_SAMPLES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassKKind {
    K,
    KInfinity,
}

/// A comparison function `α: ℝ⁺ → ℝ⁺`, validated on a sampled grid.
///
/// Monotonicity is checked on 100 points of the declared range and
/// unboundedness (for K∞) by `α(10⁶) > 10³`. Neither is a proof.
#[derive(Clone)]
pub struct ClassK {
    kind: ClassKKind,
    label: String,
    f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl fmt::Debug for ClassK {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ClassK")
            .field("kind", &self.kind)
            .field("label", &self.label)
            .finish()
    }
}

impl ClassK {
    pub fn new<F>(kind: ClassKKind, label: impl Into<String>, f: F, range: (f64, f64)) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let label = label.into();
        let zero = f(0.0);
        if !(zero.abs() <= 1e-12) {
            return Err(Error::Domain(format!(
                "class-K function `{label}` has value {zero} at 0"
            )));
        }
        let (lo, hi) = range;
        if !(lo >= 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::config("range", format!("invalid sampling range [{lo}, {hi}]")));
        }
        let mut prev = f(lo);
        for i in 1..MONOTONE_SAMPLES {
            let s = lo + (hi - lo) * i as f64 / (MONOTONE_SAMPLES - 1) as f64;
            let v = f(s);
            if !(v > prev) {
                return Err(Error::Domain(format!(
                    "class-K function `{label}` is not strictly increasing near s = {s}"
                )));
            }
            prev = v;
        }
        if kind == ClassKKind::KInfinity && !(f(1e6) > 1e3) {
            return Err(Error::Domain(format!("class-K∞ function `{label}` looks bounded")));
        }
        Ok(Self {
            kind,
            label,
            f: Arc::new(f),
        })
    }

    /// `s ↦ c·s`.
    pub fn linear(c: f64) -> Result<Self> {
        Self::new(
            ClassKKind::KInfinity,
            format!("{c}*s"),
            move |s| c * s,
            DEFAULT_CLASS_K_RANGE,
        )
    }

    pub fn identity() -> Self {
        Self::linear(1.0).expect("identity is class K-infinity")
    }

    /// `s ↦ c·s^p`.
    pub fn power(c: f64, p: f64) -> Result<Self> {
        Self::new(
            ClassKKind::KInfinity,
            format!("{c}*s^{p}"),
            move |s| c * s.powf(p),
            DEFAULT_CLASS_K_RANGE,
        )
    }

    pub fn kind(&self) -> ClassKKind {
        self.kind
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn eval(&self, s: f64) -> f64 {
        (self.f)(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_functions_validate() {
        assert_eq!(ClassK::identity().eval(3.5), 3.5);
        assert_eq!(ClassK::power(2.0, 2.0).unwrap().eval(3.0), 18.0);
        let bounded = ClassK::new(ClassKKind::K, "tanh", f64::tanh, (0.0, 10.0)).unwrap();
        assert_eq!(bounded.kind(), ClassKKind::K);
    }

    #[test]
    fn rejects_non_class_k() {
        assert!(ClassK::new(ClassKKind::K, "shifted", |s| s + 1.0, DEFAULT_CLASS_K_RANGE).is_err());
        assert!(ClassK::new(ClassKKind::K, "flat", |s: f64| s.min(1.0), DEFAULT_CLASS_K_RANGE).is_err());
        assert!(ClassK::new(ClassKKind::KInfinity, "tanh", f64::tanh, (0.0, 10.0)).is_err());
        assert!(ClassK::linear(-1.0).is_err());
    }
}
