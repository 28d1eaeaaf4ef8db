//! Checkpoint programs.
//!
//! The birth-death programs traverse an observed (reconstructed) tree in
//! pre-order with one checkpoint per branch, augmenting each branch with
//! hidden speciations whose subtrees must die out before the present.

pub mod bisse;
pub mod crbd;
pub mod posterior;
pub mod toy;

use serde::{Deserialize, Serialize};

use crate::delayed::{GammaNode, RateVar};
use crate::dists::sample_gamma;
use crate::rng::Stream;
use crate::smc::ModelError;

/// Default cap on hidden branches simulated within one step.
pub const DEFAULT_HIDDEN_LIMIT: u64 = 1_000_000;

/// Gamma prior with shape `k` and scale `θ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaPrior {
    pub shape: f64,
    pub scale: f64,
}

impl GammaPrior {
    pub fn new(shape: f64, scale: f64) -> Result<Self, ModelError> {
        if !(shape > 0.0 && shape.is_finite() && scale > 0.0 && scale.is_finite()) {
            return Err(ModelError::Invalid(format!(
                "gamma prior ({shape}, {scale})"
            )));
        }
        Ok(GammaPrior { shape, scale })
    }
}

/// How a rate enters a model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum RateSpec {
    Fixed(f64),
    Prior(GammaPrior),
}

impl RateSpec {
    pub fn validate(&self, what: &str) -> Result<(), ModelError> {
        match *self {
            RateSpec::Fixed(v) if !(v >= 0.0 && v.is_finite()) => {
                Err(ModelError::Invalid(format!("{what} rate {v}")))
            }
            RateSpec::Fixed(_) => Ok(()),
            RateSpec::Prior(p) => GammaPrior::new(p.shape, p.scale).map(|_| ()),
        }
    }

    /// The value a particle starts with.
    pub fn realise(&self, sampling: Sampling, rng: &mut Stream) -> RateVar {
        match (*self, sampling) {
            (RateSpec::Fixed(v), _) => RateVar::Known(v),
            (RateSpec::Prior(p), Sampling::Immediate) => {
                RateVar::Known(sample_gamma(p.shape, p.scale, rng))
            }
            (RateSpec::Prior(p), Sampling::Delayed) => {
                RateVar::Marginal(GammaNode::new(p.shape, p.scale).expect("validated prior"))
            }
        }
    }
}

/// Whether gamma-distributed rates are drawn at initialisation or
/// marginalised.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampling {
    Immediate,
    Delayed,
}

/// Counts hidden branches simulated during one step.
pub(crate) struct HiddenBudget {
    used: u64,
    limit: u64,
}

impl HiddenBudget {
    pub(crate) fn new(limit: u64) -> Self {
        HiddenBudget { used: 0, limit }
    }

    pub(crate) fn spend(&mut self) -> Result<(), ModelError> {
        self.used += 1;
        if self.used > self.limit {
            Err(ModelError::Explosion { limit: self.limit })
        } else {
            Ok(())
        }
    }
}
