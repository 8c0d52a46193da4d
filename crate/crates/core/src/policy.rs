//! Decision policy: loss-driven threshold adaptation and the three-way decision rule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Adaptive approval threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdState<T> {
    pub tau: T,
    pub last_loss: Option<T>,
    pub updates_applied: u64,
}

impl<T: Scalar> ThresholdState<T> {
    pub fn new(tau_init: T) -> Self {
        Self {
            tau: tau_init,
            last_loss: None,
            updates_applied: 0,
        }
    }

    /// `tau ← clamp(tau + eta·(loss − last_loss), tau_min, tau_max)`.
    ///
    /// The first loss only primes `last_loss`.
    pub fn update(&mut self, loss: T, eta: T, (tau_min, tau_max): (T, T)) -> Result<()> {
        if !(loss >= T::zero() && loss <= T::one()) {
            return Err(Error::InvalidLoss(loss.as_f64()));
        }
        if let Some(prev) = self.last_loss {
            self.tau = (self.tau + eta * (loss - prev)).max(tau_min).min(tau_max);
        }
        self.last_loss = Some(loss);
        self.updates_applied += 1;
        Ok(())
    }
}

/// Ordered from least to most rejecting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Approve,
    Review,
    Reject,
}

impl Decision {
    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Approve => "approve",
            Decision::Review => "review",
            Decision::Reject => "reject",
        }
    }
}

/// Review when `|pd − tau| ≤ band`, otherwise Approve below the threshold and
/// Reject above it. A zero band reduces Review to `pd == tau`.
pub fn decide<T: Scalar>(pd: T, tau: T, review_band: T) -> Decision {
    if (pd - tau).abs() <= review_band {
        Decision::Review
    } else if pd < tau {
        Decision::Approve
    } else {
        Decision::Reject
    }
}
