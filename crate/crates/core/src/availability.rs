//! Seeded per-round communication failures.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::seed::{rng_for, stream};
use crate::{Error, Result};

/// How many clients fail in a round, given the cap `n_f`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DropoutMode {
    /// Count drawn uniformly from `0..=n_f`.
    #[default]
    UniformCount,
    /// Exactly `n_f` clients every round.
    FixedCount,
}

impl fmt::Display for DropoutMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DropoutMode::UniformCount => "uniform_count",
            DropoutMode::FixedCount => "fixed_count",
        })
    }
}

impl FromStr for DropoutMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "uniform_count" => Ok(DropoutMode::UniformCount),
            "fixed_count" => Ok(DropoutMode::FixedCount),
            other => Err(format!(
                "unknown dropout mode `{other}` (uniform_count|fixed_count)"
            )),
        }
    }
}

/// `n_f = round(n_c * N)`.
pub fn max_unavailable(num_clients: usize, dropout_ratio: f64) -> usize {
    ((dropout_ratio * num_clients as f64).round() as usize).min(num_clients)
}

fn check_ratio(dropout_ratio: f64) -> Result<()> {
    if (0.0..=1.0).contains(&dropout_ratio) {
        Ok(())
    } else {
        Err(Error::invalid(
            "dropout_ratio",
            format!("must lie in [0, 1], got {dropout_ratio}"),
        ))
    }
}

/// The clients that cannot upload in `round`. Depends only on
/// `(seed, round)`.
pub fn draw_unavailable(
    seed: u64,
    round: usize,
    num_clients: usize,
    dropout_ratio: f64,
    mode: DropoutMode,
) -> Result<BTreeSet<usize>> {
    check_ratio(dropout_ratio)?;
    let cap = max_unavailable(num_clients, dropout_ratio);
    if cap == 0 {
        return Ok(BTreeSet::new());
    }
    let mut rng = rng_for(seed, &[stream::AVAILABILITY, round as u64]);
    let k = match mode {
        DropoutMode::UniformCount => rng.gen_range(0..=cap),
        DropoutMode::FixedCount => cap,
    };
    Ok(index::sample(&mut rng, num_clients, k)
        .into_iter()
        .collect())
}

/// Unavailable sets for every round of a run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AvailabilityPlan {
    num_clients: usize,
    unavailable: Vec<BTreeSet<usize>>,
}

impl AvailabilityPlan {
    pub fn draw(
        seed: u64,
        rounds: usize,
        num_clients: usize,
        dropout_ratio: f64,
        mode: DropoutMode,
    ) -> Result<Self> {
        let unavailable = (0..rounds)
            .map(|r| draw_unavailable(seed, r, num_clients, dropout_ratio, mode))
            .collect::<Result<_>>()?;
        Ok(Self {
            num_clients,
            unavailable,
        })
    }

    pub fn always_available(rounds: usize, num_clients: usize) -> Self {
        Self {
            num_clients,
            unavailable: vec![BTreeSet::new(); rounds],
        }
    }

    pub fn rounds(&self) -> usize {
        self.unavailable.len()
    }

    pub fn unavailable(&self, round: usize) -> &BTreeSet<usize> {
        &self.unavailable[round]
    }

    pub fn available(&self, round: usize) -> BTreeSet<usize> {
        (0..self.num_clients)
            .filter(|c| !self.unavailable[round].contains(c))
            .collect()
    }

    pub fn is_available(&self, round: usize, client: usize) -> bool {
        !self.unavailable[round].contains(&client)
    }
}
