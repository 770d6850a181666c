use serde::{Deserialize, Serialize};

use crate::controllers::{aux_j, SlidingController, SontagController};
use crate::error::{Error, Result};
use crate::history::HistorySegment;

/// Worst observed violation of one identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub name: String,
    pub tolerance: String,
    pub evaluated: usize,
    pub failures: usize,
    /// `None` until a buffer has been evaluated.
    pub worst_abs: Option<f64>,
    /// Worst `|residual| / allowed`; `≤ 1` means within tolerance.
    pub worst_ratio: Option<f64>,
}

impl IdentityCheck {
    fn new(name: &str, tolerance: &str) -> Self {
        Self {
            name: name.into(),
            tolerance: tolerance.into(),
            evaluated: 0,
            failures: 0,
            worst_abs: None,
            worst_ratio: None,
        }
    }

    fn record(&mut self, residual: f64, allowed: f64) {
        let abs = residual.abs();
        let ratio = if allowed > 0.0 {
            abs / allowed
        } else if abs == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        self.evaluated += 1;
        // NaN residuals fail.
        if !(abs <= allowed) {
            self.failures += 1;
        }
        let nan_max =
            |old: Option<f64>, new: f64| Some(old.map_or(new, |o| if new.is_nan() || new > o { new } else { o }));
        self.worst_abs = nan_max(self.worst_abs, abs);
        self.worst_ratio = nan_max(self.worst_ratio, if abs.is_nan() { f64::NAN } else { ratio });
    }

    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct IdentityOptions {
    /// Flips the sign of `J₂` when forming the control, to check that the
    /// drift identity notices.
    pub flip_j2: bool,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub count: usize,
    /// Buffers on which `‖G‖²` was at or below the transversality tolerance.
    pub transversality_violations: usize,
    /// Buffers on which the Sontag input gain `b` was numerically zero.
    pub sontag_zero_branch: usize,
    pub checks: Vec<IdentityCheck>,
}

impl IdentityReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(IdentityCheck::passed)
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "buffers: {}\ntransversality violations (skipped): {}\nSontag zero-branch buffers: {}\n",
            self.count, self.transversality_violations, self.sontag_zero_branch
        );
        for c in &self.checks {
            let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.3e}"));
            s.push_str(&format!(
                "{} [{}]: {} ({} evaluated, {} failed, worst |r| {}, worst |r|/tol {})\n",
                c.name,
                c.tolerance,
                if c.passed() { "PASS" } else { "FAIL" },
                c.evaluated,
                c.failures,
                fmt(c.worst_abs),
                fmt(c.worst_ratio)
            ));
        }
        s
    }
}

/// Evaluates the pointwise control identities on `count` buffers drawn from
/// `sampler`:
///
/// * `a + b·u = -√(a² + λ‖b‖⁴)` for the Sontag input, relative `1e-9`;
/// * `H·J₁·Hᵀ = 0` and `H·(J₁ + J₂)·Hᵀ = F`, within `1e-10·(1 + ‖H‖²‖J₁‖)`;
/// * `F + G·u + L = -K(φ)` for the sliding input, relative `1e-9` of the
///   summed magnitudes;
/// * `U·(F + G·u + L) ≤ 0`.
///
/// Buffers violating transversality are counted and skipped for the sliding
/// checks. Evaluation errors other than that one abort the suite.
pub fn identity_suite(
    sliding: &SlidingController,
    sontag: &SontagController,
    count: usize,
    sampler: &mut dyn FnMut() -> Result<HistorySegment>,
    options: IdentityOptions,
) -> Result<IdentityReport> {
    let mut decrement = IdentityCheck::new("sontag_decrement", "1e-9 relative");
    let mut j1 = IdentityCheck::new("h_j1_h_zero", "1e-10*(1+|H|^2 |J1|)");
    let mut j_sum = IdentityCheck::new("h_j1_j2_h_equals_f", "1e-10*(1+|H|^2 |J1|)");
    let mut drift = IdentityCheck::new("sliding_drift", "1e-9 relative");
    let mut sign = IdentityCheck::new("sliding_sign", "U*drift <= 0");
    let mut transversality_violations = 0;
    let mut sontag_zero_branch = 0;
    let t = options.t;
    for _ in 0..count {
        let phi = sampler()?;

        let (a, b) = sontag.terms(t, &phi)?;
        let b_norm_sq = b.norm_squared();
        if b_norm_sq > crate::controllers::DEFAULT_ZERO_THRESHOLD {
            let u = sontag.stabilizing_control(t, &phi)?;
            let lhs = a + b.dot(&u);
            let rhs = -(a * a + sontag.lambda() * b_norm_sq * b_norm_sq).sqrt();
            decrement.record(lhs - rhs, 1e-9 * rhs.abs());
        } else {
            sontag_zero_branch += 1;
        }

        let terms = sliding.terms(t, &phi)?;
        let (m1, m2) = match aux_j(
            &terms.drift,
            &terms.input_gain,
            &terms.g_row,
            sliding.transversality_tol(),
        ) {
            Ok(m) => m,
            Err(Error::Transversality { .. }) => {
                transversality_violations += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let h = &terms.h_row;
        let algebra_tol = 1e-10 * (1.0 + h.norm_squared() * m1.norm());
        j1.record((h * &m1 * h.transpose())[0], algebra_tol);
        j_sum.record((h * (&m1 + &m2) * h.transpose())[0] - terms.f_cap, algebra_tol);

        let k = sliding.switching(terms.u_value);
        let mut hj2h = (h * &m2 * h.transpose())[0];
        if options.flip_j2 {
            hj2h = -hj2h;
        }
        let u = sliding.control_from_parts(&terms, hj2h, k)?;
        let gu = (&terms.g_row * &u)[0];
        let closed = terms.f_cap + gu + terms.l_cap;
        let scale = terms.f_cap.abs() + gu.abs() + terms.l_cap.abs() + k.abs();
        drift.record(closed + k, 1e-9 * scale);
        sign.record((terms.u_value * closed).max(0.0), 0.0);
    }
    Ok(IdentityReport {
        count,
        transversality_violations,
        sontag_zero_branch,
        checks: vec![decrement, j1, j_sum, drift, sign],
    })
}
