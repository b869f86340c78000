//! Laplace mechanism for publishing registry aggregates, with additive
//! ε accounting.

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::open_unit_f64;

pub const DEFAULT_BUDGET: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PrivacyError {
    #[error("epsilon must be positive and finite, got {0}")]
    InvalidEpsilon(f64),
    #[error("sensitivity must be positive and finite, got {0}")]
    InvalidSensitivity(f64),
    #[error("delta must lie in [0, 1), got {0}")]
    InvalidDelta(f64),
    #[error("query needs epsilon {requested} but only {remaining} remains")]
    BudgetExhausted { requested: f64, remaining: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpParams {
    pub epsilon: f64,
    pub delta: f64,
    pub sensitivity: f64,
}

impl DpParams {
    pub fn new(epsilon: f64, delta: f64, sensitivity: f64) -> Result<Self, PrivacyError> {
        check_epsilon(epsilon)?;
        check_sensitivity(sensitivity)?;
        if !(0.0..1.0).contains(&delta) {
            return Err(PrivacyError::InvalidDelta(delta));
        }
        Ok(Self {
            epsilon,
            delta,
            sensitivity,
        })
    }

    pub fn scale(&self) -> f64 {
        self.sensitivity / self.epsilon
    }
}

fn check_epsilon(epsilon: f64) -> Result<(), PrivacyError> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(PrivacyError::InvalidEpsilon(epsilon));
    }
    Ok(())
}

fn check_sensitivity(sensitivity: f64) -> Result<(), PrivacyError> {
    if !(sensitivity > 0.0 && sensitivity.is_finite()) {
        return Err(PrivacyError::InvalidSensitivity(sensitivity));
    }
    Ok(())
}

/// One Laplace(0, b) draw by inverse CDF on a uniform in (0, 1).
pub fn laplace_sample<R: RngCore + ?Sized>(scale: f64, rng: &mut R) -> f64 {
    let u = open_unit_f64(rng) - 0.5;
    let magnitude = -scale * libm::log1p(-2.0 * libm::fabs(u));
    if u < 0.0 {
        -magnitude
    } else {
        magnitude
    }
}

/// `true_value + Laplace(sensitivity / epsilon)`; ε-DP with δ = 0.
pub fn laplace_mechanism<R: RngCore + ?Sized>(
    true_value: f64,
    sensitivity: f64,
    epsilon: f64,
    rng: &mut R,
) -> Result<f64, PrivacyError> {
    check_epsilon(epsilon)?;
    check_sensitivity(sensitivity)?;
    Ok(true_value + laplace_sample(sensitivity / epsilon, rng))
}

/// Noisy count of matching records; a count has sensitivity 1.
pub fn dp_count<T, R: RngCore + ?Sized>(
    records: &[T],
    predicate: impl Fn(&T) -> bool,
    epsilon: f64,
    rng: &mut R,
) -> Result<f64, PrivacyError> {
    let exact = records.iter().filter(|r| predicate(r)).count();
    laplace_mechanism(exact as f64, 1.0, epsilon, rng)
}

/// Sequential-composition accountant: spends add up, and a query that
/// would take the total past the limit is refused without spending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    limit: f64,
    spent: f64,
    queries: u64,
}

impl Default for PrivacyBudget {
    fn default() -> Self {
        Self::new(DEFAULT_BUDGET).expect("default budget is valid")
    }
}

impl PrivacyBudget {
    pub fn new(limit: f64) -> Result<Self, PrivacyError> {
        check_epsilon(limit)?;
        Ok(Self {
            limit,
            spent: 0.0,
            queries: 0,
        })
    }

    pub fn limit(&self) -> f64 {
        self.limit
    }

    pub fn spent(&self) -> f64 {
        self.spent
    }

    pub fn remaining(&self) -> f64 {
        (self.limit - self.spent).max(0.0)
    }

    pub fn queries(&self) -> u64 {
        self.queries
    }

    pub fn charge(&mut self, epsilon: f64) -> Result<(), PrivacyError> {
        check_epsilon(epsilon)?;
        // Small tolerance so that e.g. eight charges of 0.5 fit a budget of 4.
        if self.spent + epsilon > self.limit * (1.0 + 1e-12) {
            return Err(PrivacyError::BudgetExhausted {
                requested: epsilon,
                remaining: self.remaining(),
            });
        }
        self.spent += epsilon;
        self.queries += 1;
        Ok(())
    }

    pub fn count<T, R: RngCore + ?Sized>(
        &mut self,
        records: &[T],
        predicate: impl Fn(&T) -> bool,
        epsilon: f64,
        rng: &mut R,
    ) -> Result<f64, PrivacyError> {
        self.charge(epsilon)?;
        dp_count(records, predicate, epsilon, rng)
    }
}
