use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functionals::{drift_decomposition, Region, Scbkf};
use crate::history::HistorySegment;
use crate::sim::SddeModel;

/// Membership of an input in `𝕂 = {u : 𝓛B₁ + D⁺B₂ < γ₂(h)}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Admissibility {
    pub admissible: bool,
    /// `γ₂(h(φ)) - (a_B + b_B·u)`; positive iff admissible.
    pub margin: f64,
}

pub fn safety_admissible(
    scbkf: &Scbkf,
    model: &dyn SddeModel,
    t: f64,
    phi: &HistorySegment,
    u: &DVector<f64>,
) -> Result<Admissibility> {
    let h = scbkf.eval_h(phi)?;
    if scbkf.classify(h) != Region::Interior {
        return Err(Error::SafeSetViolation { h });
    }
    let d = drift_decomposition(scbkf.barrier.as_ref(), model, t, phi)?;
    let margin = scbkf.gamma2.eval(h) - d.drift_under(u);
    Ok(Admissibility {
        admissible: margin > 0.0,
        margin,
    })
}
