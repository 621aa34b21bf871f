//! Update clipping, the Laplace mechanism, and per-client privacy budget
//! accounting under sequential composition.
//!
//! A client that cannot upload in some round has not released anything, so
//! that round's budget is unspent. Under [`BudgetStrategy::Dynamic`] the
//! unspent amount is spread evenly over the remaining rounds:
//! `eps <- eps * (R - r + 1) / (R - r)` for a failure in (1-based) round `r`.
//! The total released budget therefore stays `R * eps0` as long as the last
//! round succeeds.

use std::fmt;
use std::str::FromStr;

use rand::distributions::Open01;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::ParamVector;
use crate::{Error, Result};

/// Scales `delta` down so its L2 norm is at most `c`.
pub fn clip(delta: &ParamVector, c: f64) -> Result<ParamVector> {
    if !(c > 0.0) {
        return Err(Error::invalid(
            "clip_threshold",
            format!("must be > 0, got {c}"),
        ));
    }
    let factor = (delta.norm() / c).max(1.0);
    if factor == 1.0 {
        return Ok(delta.clone());
    }
    Ok(ParamVector::from_vec(
        delta.as_slice().iter().map(|v| v / factor).collect(),
    ))
}

/// `2C / |D_i|`.
pub fn sensitivity(clip_threshold: f64, dataset_size: usize) -> Result<f64> {
    if dataset_size == 0 {
        return Err(Error::invalid("dataset_size", "must be at least 1"));
    }
    if !(clip_threshold > 0.0) {
        return Err(Error::invalid(
            "clip_threshold",
            format!("must be > 0, got {clip_threshold}"),
        ));
    }
    Ok(2.0 * clip_threshold / dataset_size as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseParams {
    pub clip_threshold: f64,
    pub sensitivity: f64,
    /// Laplace scale `b = sensitivity / epsilon`.
    pub scale: f64,
}

impl NoiseParams {
    pub fn new(clip_threshold: f64, dataset_size: usize, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::invalid(
                "epsilon",
                format!("must be > 0, got {epsilon}"),
            ));
        }
        let sensitivity = sensitivity(clip_threshold, dataset_size)?;
        Ok(Self {
            clip_threshold,
            sensitivity,
            scale: sensitivity / epsilon,
        })
    }
}

/// Inverse CDF of Laplace(0, b) evaluated at `u` in (0, 1).
pub fn laplace_from_uniform(u: f64, b: f64) -> f64 {
    let centered = u - 0.5;
    -b * centered.signum() * (1.0 - 2.0 * centered.abs()).ln()
}

pub fn sample_laplace<R: Rng + ?Sized>(b: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.sample(Open01);
    laplace_from_uniform(u, b)
}

/// Adds i.i.d. Laplace(0, b) noise to every coordinate.
pub fn add_noise<R: Rng + ?Sized>(
    delta: &ParamVector,
    params: &NoiseParams,
    rng: &mut R,
) -> ParamVector {
    ParamVector::from_vec(
        delta
            .as_slice()
            .iter()
            .map(|v| v + sample_laplace(params.scale, rng))
            .collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetStrategy {
    /// Each round owns `eps0`; a failed round's share is forfeit.
    Fixed,
    /// A failed round's share is re-spread over the remaining rounds.
    #[default]
    Dynamic,
}

impl fmt::Display for BudgetStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BudgetStrategy::Fixed => "fixed",
            BudgetStrategy::Dynamic => "dynamic",
        })
    }
}

impl FromStr for BudgetStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "fixed" => Ok(BudgetStrategy::Fixed),
            "dynamic" => Ok(BudgetStrategy::Dynamic),
            other => Err(format!("unknown budget strategy `{other}` (fixed|dynamic)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrivacyAccountant {
    epsilon_initial: f64,
    epsilon_current: f64,
    rounds_total: usize,
    rounds_elapsed: usize,
    consumed: f64,
    strategy: BudgetStrategy,
}

impl PrivacyAccountant {
    pub fn new(
        epsilon_initial: f64,
        rounds_total: usize,
        strategy: BudgetStrategy,
    ) -> Result<Self> {
        if !(epsilon_initial > 0.0 && epsilon_initial.is_finite()) {
            return Err(Error::invalid(
                "epsilon_per_round",
                format!("must be finite and > 0, got {epsilon_initial}"),
            ));
        }
        if rounds_total == 0 {
            return Err(Error::invalid("rounds", "must be at least 1"));
        }
        Ok(Self {
            epsilon_initial,
            epsilon_current: epsilon_initial,
            rounds_total,
            rounds_elapsed: 0,
            consumed: 0.0,
            strategy,
        })
    }

    pub fn epsilon_current(&self) -> f64 {
        self.epsilon_current
    }

    pub fn epsilon_initial(&self) -> f64 {
        self.epsilon_initial
    }

    pub fn consumed(&self) -> f64 {
        self.consumed
    }

    pub fn rounds_total(&self) -> usize {
        self.rounds_total
    }

    pub fn rounds_elapsed(&self) -> usize {
        self.rounds_elapsed
    }

    pub fn rounds_remaining(&self) -> usize {
        self.rounds_total - self.rounds_elapsed
    }

    pub fn strategy(&self) -> BudgetStrategy {
        self.strategy
    }

    pub fn total_budget(&self) -> f64 {
        self.rounds_total as f64 * self.epsilon_initial
    }

    /// Raises the per-round budget after a failure in 1-based round
    /// `failed_round`. A failure in the last round leaves nothing to
    /// re-spread over, so the budget is left unchanged.
    pub fn reallocate_on_failure(&mut self, failed_round: usize) -> Result<()> {
        if failed_round == 0 || failed_round > self.rounds_total {
            return Err(Error::RoundOutOfRange {
                round: failed_round,
                total: self.rounds_total,
            });
        }
        if self.strategy != BudgetStrategy::Dynamic {
            return Err(Error::invalid(
                "strategy",
                "reallocation requires the dynamic strategy",
            ));
        }
        let remaining_after = self.rounds_total - failed_round;
        if remaining_after > 0 {
            self.epsilon_current *= (remaining_after + 1) as f64 / remaining_after as f64;
        }
        Ok(())
    }

    /// Records the outcome of the next round and returns the budget spent on
    /// it (zero when the upload did not happen).
    pub fn consume(&mut self, succeeded: bool) -> Result<f64> {
        if self.rounds_elapsed >= self.rounds_total {
            return Err(Error::RoundOutOfRange {
                round: self.rounds_elapsed + 1,
                total: self.rounds_total,
            });
        }
        let round = self.rounds_elapsed + 1;
        let spent = if succeeded {
            self.consumed += self.epsilon_current;
            self.epsilon_current
        } else {
            if self.strategy == BudgetStrategy::Dynamic {
                self.reallocate_on_failure(round)?;
            }
            0.0
        };
        self.rounds_elapsed = round;
        Ok(spent)
    }
}
