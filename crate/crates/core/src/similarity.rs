//! Pairwise client similarity over uploaded deltas, and substitution of
//! deltas for clients that failed to upload.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::nn::ParamVector;
use crate::{Error, Result};

/// Norm below which a delta carries no direction.
pub const ZERO_NORM: f64 = 1e-12;

/// Where the delta a client contributed to aggregation came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Uploaded,
    Substituted,
    Excluded,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Uploaded => "uploaded",
            Provenance::Substituted => "substituted",
            Provenance::Excluded => "excluded",
        })
    }
}

/// Cosine similarity mapped onto [0, 1]. Returns 0.5 when either vector has
/// (numerically) zero norm.
pub fn cosine_score(a: &ParamVector, b: &ParamVector) -> Result<f64> {
    let dot = a.dot(b)?;
    let (na, nb) = (a.norm(), b.norm());
    if na < ZERO_NORM || nb < ZERO_NORM {
        return Ok(0.5);
    }
    let cos = (dot / (na * nb)).clamp(-1.0, 1.0);
    Ok(0.5 * (cos + 1.0))
}

/// Running mean of per-round scores for every client pair, plus the number of
/// rounds both clients uploaded.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    scores: Vec<f64>,
    counts: Vec<u64>,
}

/// Outcome of [`SimilarityMatrix::substitute`] for one unavailable client.
#[derive(Debug, Clone, PartialEq)]
pub enum Replacement {
    Substituted { source: usize, delta: ParamVector },
    Excluded,
}

impl Replacement {
    pub fn provenance(&self) -> Provenance {
        match self {
            Replacement::Substituted { .. } => Provenance::Substituted,
            Replacement::Excluded => Provenance::Excluded,
        }
    }
}

impl SimilarityMatrix {
    pub fn new(num_clients: usize) -> Self {
        Self {
            n: num_clients,
            scores: vec![0.0; num_clients * num_clients],
            counts: vec![0; num_clients * num_clients],
        }
    }

    pub fn num_clients(&self) -> usize {
        self.n
    }

    pub fn score(&self, i: usize, j: usize) -> f64 {
        self.scores[i * self.n + j]
    }

    pub fn count(&self, i: usize, j: usize) -> u64 {
        self.counts[i * self.n + j]
    }

    fn set(&mut self, i: usize, j: usize, score: f64, count: u64) {
        for (a, b) in [(i, j), (j, i)] {
            self.scores[a * self.n + b] = score;
            self.counts[a * self.n + b] = count;
        }
    }

    /// Folds this round's pairwise scores into the running averages. Only
    /// pairs where both clients uploaded are touched.
    pub fn update_average(&mut self, deltas: &BTreeMap<usize, ParamVector>) -> Result<()> {
        if let Some(&bad) = deltas.keys().find(|&&c| c >= self.n) {
            return Err(Error::invalid("client", format!("id {bad} >= {}", self.n)));
        }
        let ids: Vec<usize> = deltas.keys().copied().collect();
        for (a, &i) in ids.iter().enumerate() {
            for &j in &ids[a + 1..] {
                let s = cosine_score(&deltas[&i], &deltas[&j])?;
                let k = self.count(i, j) as f64;
                let updated = k / (k + 1.0) * self.score(i, j) + s / (k + 1.0);
                self.set(i, j, updated, self.count(i, j) + 1);
            }
        }
        Ok(())
    }

    /// Most similar available client with shared history, ties to the
    /// lowest index.
    pub fn most_similar(&self, client: usize, available: &BTreeSet<usize>) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for &j in available {
            if j == client || self.count(client, j) == 0 {
                continue;
            }
            let s = self.score(client, j);
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((j, s));
            }
        }
        best.map(|(j, _)| j)
    }

    /// For every unavailable client, borrows the delta of its most similar
    /// available client. Clients with no co-availability history with any
    /// available client are excluded for the round.
    pub fn substitute(
        &self,
        unavailable: &BTreeSet<usize>,
        available: &BTreeSet<usize>,
        deltas: &BTreeMap<usize, ParamVector>,
    ) -> Result<BTreeMap<usize, Replacement>> {
        unavailable
            .iter()
            .map(|&i| {
                let replacement = match self.most_similar(i, available) {
                    Some(j) => {
                        let delta = deltas.get(&j).cloned().ok_or_else(|| {
                            Error::invalid("deltas", format!("no delta for available client {j}"))
                        })?;
                        Replacement::Substituted { source: j, delta }
                    }
                    None => Replacement::Excluded,
                };
                Ok((i, replacement))
            })
            .collect()
    }

    /// Writes the score matrix as CSV with a `client` header column.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "client")?;
        for j in 0..self.n {
            write!(out, ",{j}")?;
        }
        writeln!(out)?;
        for i in 0..self.n {
            write!(out, "{i}")?;
            for j in 0..self.n {
                write!(out, ",{}", self.score(i, j))?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}
