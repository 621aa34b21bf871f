//! Round orchestration for multi-task federated learning.
//!
//! Each round the server broadcasts the global model `w`. Every client then
//! (a) advances its personalized model `v_i` on `F_i(v) + mu/2 ||v - w||^2`
//! and (b) if it can reach the server, trains a local copy of `w`, clips and
//! noises the difference and uploads it. The server folds the received
//! deltas into the pairwise similarity averages, fills in deltas for clients
//! that failed to upload, and applies the sample-weighted mean delta to `w`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::availability::{AvailabilityPlan, DropoutMode};
use crate::data::ClientDataset;
use crate::metrics::{evaluate_client, ClientRoundRecord, RoundReport};
use crate::nn::{
    grad_ditto, grad_mse, init_params, mse_loss, sgd_epochs, MlpShape, ParamVector, SgdSettings,
};
use crate::privacy::{add_noise, clip, BudgetStrategy, NoiseParams, PrivacyAccountant};
use crate::seed::{rng_for, stream, SimRng};
use crate::similarity::{Provenance, Replacement, SimilarityMatrix};
use crate::{Error, Result};

/// Training method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    /// Purely local training; no server.
    A1,
    /// FedAvg; unavailable clients are dropped from the round.
    A2,
    /// Multi-task FL with delta substitution and a fixed per-round budget.
    A3,
    /// Multi-task FL with delta substitution and dynamic budget reallocation.
    A4,
}

impl Method {
    pub fn is_personalized(self) -> bool {
        matches!(self, Method::A3 | Method::A4)
    }

    pub fn substitutes(self) -> bool {
        matches!(self, Method::A3 | Method::A4)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_uppercase().as_str() {
            "A1" | "LOCAL" => Ok(Method::A1),
            "A2" | "FEDAVG" => Ok(Method::A2),
            "A3" => Ok(Method::A3),
            "A4" | "PROPOSED" => Ok(Method::A4),
            _ => Err(format!("unknown method `{s}` (A1|A2|A3|A4)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub rounds: usize,
    pub epochs_personalized: usize,
    pub epochs_local: usize,
    pub lr_personalized: f64,
    pub lr_local: f64,
    pub mu: f64,
    pub batch_size: usize,
    pub hidden_dim: usize,
    pub method: Method,
    pub dp_enabled: bool,
    pub clip_threshold: f64,
    /// Initial per-round budget; infinite means no noise is added.
    pub epsilon_per_round: f64,
    /// Only consulted for A2; A3 is always fixed and A4 always dynamic.
    pub budget_strategy: BudgetStrategy,
    pub dropout_ratio: f64,
    pub dropout_mode: DropoutMode,
    pub master_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            rounds: 200,
            epochs_personalized: 5,
            epochs_local: 10,
            lr_personalized: 0.01,
            lr_local: 0.01,
            mu: 5e-4,
            batch_size: 32,
            hidden_dim: 40,
            method: Method::A4,
            dp_enabled: false,
            clip_threshold: 1.0,
            epsilon_per_round: 0.1,
            budget_strategy: BudgetStrategy::Dynamic,
            dropout_ratio: 0.0,
            dropout_mode: DropoutMode::UniformCount,
            master_seed: 0,
        }
    }
}

/// A violated config constraint: the offending key and why.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub key: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.key, self.message)
    }
}

impl TrainConfig {
    pub fn diagnostics(&self) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        let mut flag = |key: &str, ok: bool, message: String| {
            if !ok {
                out.push(Diagnostic {
                    key: key.to_string(),
                    message,
                });
            }
        };
        flag(
            "rounds",
            self.rounds >= 1,
            format!("must be >= 1, got {}", self.rounds),
        );
        flag(
            "epochs_personalized",
            self.epochs_personalized >= 1,
            format!("must be >= 1, got {}", self.epochs_personalized),
        );
        flag(
            "epochs_local",
            self.epochs_local >= 1,
            format!("must be >= 1, got {}", self.epochs_local),
        );
        flag(
            "lr_personalized",
            self.lr_personalized > 0.0 && self.lr_personalized.is_finite(),
            format!("must be > 0, got {}", self.lr_personalized),
        );
        flag(
            "lr_local",
            self.lr_local > 0.0 && self.lr_local.is_finite(),
            format!("must be > 0, got {}", self.lr_local),
        );
        flag(
            "mu",
            self.mu >= 0.0 && self.mu.is_finite(),
            format!("must be >= 0, got {}", self.mu),
        );
        flag(
            "batch_size",
            self.batch_size >= 1,
            format!("must be >= 1, got {}", self.batch_size),
        );
        flag(
            "hidden_dim",
            self.hidden_dim >= 1,
            format!("must be >= 1, got {}", self.hidden_dim),
        );
        flag(
            "dropout_ratio",
            (0.0..=1.0).contains(&self.dropout_ratio),
            format!("must lie in [0, 1], got {}", self.dropout_ratio),
        );
        if self.dp_enabled {
            flag(
                "clip_threshold",
                self.clip_threshold > 0.0 && self.clip_threshold.is_finite(),
                format!("must be > 0 when dp_enabled, got {}", self.clip_threshold),
            );
            flag(
                "epsilon_per_round",
                self.epsilon_per_round > 0.0,
                format!(
                    "must be > 0 when dp_enabled, got {}",
                    self.epsilon_per_round
                ),
            );
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.diagnostics().into_iter().next() {
            None => Ok(()),
            Some(d) => Err(Error::InvalidArgument {
                name: "config",
                reason: d.to_string(),
            }),
        }
    }

    /// Noise is only added when DP is on with a finite budget, and never for
    /// purely local training.
    pub fn noise_active(&self) -> bool {
        self.dp_enabled && self.epsilon_per_round.is_finite() && self.method != Method::A1
    }

    pub fn effective_strategy(&self) -> BudgetStrategy {
        match self.method {
            Method::A3 => BudgetStrategy::Fixed,
            Method::A4 => BudgetStrategy::Dynamic,
            _ => self.budget_strategy,
        }
    }

    fn personalized_sgd(&self) -> SgdSettings {
        SgdSettings {
            epochs: self.epochs_personalized,
            batch_size: self.batch_size,
            lr: self.lr_personalized,
        }
    }

    fn local_sgd(&self) -> SgdSettings {
        SgdSettings {
            epochs: self.epochs_local,
            batch_size: self.batch_size,
            lr: self.lr_local,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    pub dataset: ClientDataset,
    /// Personalized model for A3/A4, the local model for A1.
    pub personalized: ParamVector,
    pub accountant: Option<PrivacyAccountant>,
}

#[derive(Debug, Clone)]
pub struct ServerState {
    pub global: ParamVector,
    pub similarity: SimilarityMatrix,
    pub round_index: usize,
}

/// E1 epochs of SGD on the proximal objective, starting from the client's
/// current personalized model. The stored model is replaced.
pub fn local_personalized_update(
    client: &mut ClientState,
    w_global: &ParamVector,
    shape: &MlpShape,
    cfg: &TrainConfig,
    rng: &mut SimRng,
) -> Result<ParamVector> {
    let mu = cfg.mu;
    let updated = sgd_epochs(
        &client.personalized,
        &client.dataset.train,
        cfg.personalized_sgd(),
        |v, batch| grad_ditto(v, w_global, shape, batch.iter().copied(), mu),
        rng,
    )?;
    client.personalized = updated.clone();
    Ok(updated)
}

/// E2 epochs of plain SGD from the global model; returns `w_i - w`.
pub fn local_global_update(
    w_global: &ParamVector,
    client: &ClientState,
    shape: &MlpShape,
    cfg: &TrainConfig,
    rng: &mut SimRng,
) -> Result<ParamVector> {
    let local = sgd_epochs(
        w_global,
        &client.dataset.train,
        cfg.local_sgd(),
        |w, batch| grad_mse(w, shape, batch.iter().copied()),
        rng,
    )?;
    local.sub(w_global)
}

/// A delta entering aggregation, weighted by `sample_count`.
#[derive(Debug, Clone, Copy)]
pub struct WeightedDelta<'a> {
    pub client: usize,
    pub delta: &'a ParamVector,
    pub sample_count: usize,
}

/// `w + sum_i (|D_i| / |D|) * delta_i` over the included clients.
pub fn aggregate(w_global: &ParamVector, deltas: &[WeightedDelta<'_>]) -> Result<ParamVector> {
    if deltas.is_empty() {
        return Err(Error::Empty("delta list"));
    }
    if let Some(d) = deltas.iter().find(|d| d.sample_count == 0) {
        return Err(Error::invalid(
            "sample_count",
            format!("client {} has no samples", d.client),
        ));
    }
    let total: usize = deltas.iter().map(|d| d.sample_count).sum();
    let mut next = w_global.clone();
    for d in deltas {
        next.add_scaled(d.sample_count as f64 / total as f64, d.delta)?;
    }
    if !next.is_finite() {
        return Err(Error::NonFinite("aggregation"));
    }
    Ok(next)
}

/// Result of a complete run.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub reports: Vec<RoundReport>,
    /// The model each client is evaluated with under the chosen method.
    pub eval_models: Vec<ParamVector>,
    pub global: ParamVector,
    pub final_nrmse: Vec<f64>,
    pub accountants: Vec<Option<PrivacyAccountant>>,
    pub similarity: SimilarityMatrix,
}

impl ExperimentOutcome {
    pub fn mean_final_nrmse(&self) -> f64 {
        self.final_nrmse.iter().sum::<f64>() / self.final_nrmse.len() as f64
    }
}

/// Simulation state for one run.
pub struct Federation {
    pub cfg: TrainConfig,
    pub shape: MlpShape,
    pub server: ServerState,
    pub clients: Vec<ClientState>,
}

impl Federation {
    pub fn new(cfg: TrainConfig, datasets: Vec<ClientDataset>) -> Result<Self> {
        cfg.validate()?;
        let first = datasets.first().ok_or(Error::Empty("datasets"))?;
        let input_dim = first
            .train
            .first()
            .ok_or(Error::Empty("training set"))?
            .features
            .len();
        let shape = MlpShape::new(input_dim, cfg.hidden_dim)?;
        let global = init_params(
            &shape,
            &mut rng_for(cfg.master_seed, &[stream::INIT_GLOBAL]),
        );
        let clients = datasets
            .into_iter()
            .enumerate()
            .map(|(id, dataset)| {
                if dataset.train.is_empty() || dataset.test.is_empty() {
                    return Err(Error::Empty("client split"));
                }
                let personalized = init_params(
                    &shape,
                    &mut rng_for(cfg.master_seed, &[stream::INIT_PERSONAL, id as u64]),
                );
                let accountant = if cfg.noise_active() {
                    Some(PrivacyAccountant::new(
                        cfg.epsilon_per_round,
                        cfg.rounds,
                        cfg.effective_strategy(),
                    )?)
                } else {
                    None
                };
                Ok(ClientState {
                    id,
                    dataset,
                    personalized,
                    accountant,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let n = clients.len();
        Ok(Self {
            cfg,
            shape,
            server: ServerState {
                global,
                similarity: SimilarityMatrix::new(n),
                round_index: 0,
            },
            clients,
        })
    }

    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    fn eval_model(&self, client: usize) -> &ParamVector {
        match self.cfg.method {
            Method::A2 => &self.server.global,
            _ => &self.clients[client].personalized,
        }
    }

    fn evaluate(&self, client: usize) -> Result<(f64, f64)> {
        let model = self.eval_model(client);
        let ds = &self.clients[client].dataset;
        Ok((
            evaluate_client(model, &self.shape, ds)?,
            mse_loss(model, &self.shape, &ds.train)?,
        ))
    }

    /// One round of local-only training (A1): E2 epochs per client.
    fn run_local_round(&mut self) -> Result<RoundReport> {
        let r = self.server.round_index;
        let settings = self.cfg.local_sgd();
        let mut records = Vec::with_capacity(self.clients.len());
        for i in 0..self.clients.len() {
            let mut rng = rng_for(
                self.cfg.master_seed,
                &[stream::LOCAL_ONLY, r as u64, i as u64],
            );
            let client = &mut self.clients[i];
            let shape = self.shape;
            client.personalized = sgd_epochs(
                &client.personalized,
                &client.dataset.train,
                settings,
                |p, batch| grad_mse(p, &shape, batch.iter().copied()),
                &mut rng,
            )?;
            let (test_nrmse, train_loss) = self.evaluate(i)?;
            records.push(ClientRoundRecord {
                client: i,
                available: true,
                provenance: Provenance::Uploaded,
                test_nrmse,
                train_loss,
                epsilon_used: None,
            });
        }
        self.server.round_index += 1;
        Ok(RoundReport::new(r + 1, records))
    }

    /// Executes one communication round with the given unavailable set.
    pub fn run_round(&mut self, unavailable: &BTreeSet<usize>) -> Result<RoundReport> {
        if self.cfg.method == Method::A1 {
            return self.run_local_round();
        }
        let r = self.server.round_index;
        if r >= self.cfg.rounds {
            return Err(Error::RoundOutOfRange {
                round: r + 1,
                total: self.cfg.rounds,
            });
        }
        let seed = self.cfg.master_seed;
        let w_r = self.server.global.clone();
        let shape = self.shape;

        let mut received: BTreeMap<usize, ParamVector> = BTreeMap::new();
        let mut eps_used: Vec<Option<f64>> = vec![None; self.clients.len()];
        for (i, client) in self.clients.iter_mut().enumerate() {
            if self.cfg.method.is_personalized() {
                let mut rng = rng_for(seed, &[stream::PERSONAL_SGD, r as u64, i as u64]);
                local_personalized_update(client, &w_r, &shape, &self.cfg, &mut rng)?;
            }
            let available = !unavailable.contains(&i);
            if !available {
                // The client learns of the failure before releasing anything.
                if let Some(acct) = client.accountant.as_mut() {
                    acct.consume(false)?;
                }
                continue;
            }
            let mut rng = rng_for(seed, &[stream::LOCAL_SGD, r as u64, i as u64]);
            let mut delta = local_global_update(&w_r, client, &shape, &self.cfg, &mut rng)?;
            if let Some(acct) = client.accountant.as_mut() {
                let params = NoiseParams::new(
                    self.cfg.clip_threshold,
                    client.dataset.num_train(),
                    acct.epsilon_current(),
                )?;
                delta = clip(&delta, self.cfg.clip_threshold)?;
                let mut noise_rng = rng_for(seed, &[stream::NOISE, r as u64, i as u64]);
                delta = add_noise(&delta, &params, &mut noise_rng);
                eps_used[i] = Some(acct.consume(true)?);
            }
            received.insert(i, delta);
        }

        let available: BTreeSet<usize> = received.keys().copied().collect();
        let mut provenance = vec![Provenance::Uploaded; self.clients.len()];
        let mut substitutes: BTreeMap<usize, ParamVector> = BTreeMap::new();
        if self.cfg.method.substitutes() {
            self.server.similarity.update_average(&received)?;
            let missing: BTreeSet<usize> = (0..self.clients.len())
                .filter(|i| !available.contains(i))
                .collect();
            for (i, replacement) in self
                .server
                .similarity
                .substitute(&missing, &available, &received)?
            {
                provenance[i] = replacement.provenance();
                if let Replacement::Substituted { delta, .. } = replacement {
                    substitutes.insert(i, delta);
                }
            }
        } else {
            for &i in unavailable {
                provenance[i] = Provenance::Excluded;
            }
        }

        let included: Vec<WeightedDelta<'_>> = received
            .iter()
            .chain(substitutes.iter())
            .map(|(&client, delta)| WeightedDelta {
                client,
                delta,
                sample_count: self.clients[client].dataset.num_train(),
            })
            .collect();
        if !included.is_empty() {
            self.server.global = aggregate(&w_r, &included)?;
        }
        self.server.round_index += 1;

        let records = (0..self.clients.len())
            .map(|i| {
                let (test_nrmse, train_loss) = self.evaluate(i)?;
                Ok(ClientRoundRecord {
                    client: i,
                    available: available.contains(&i),
                    provenance: provenance[i],
                    test_nrmse,
                    train_loss,
                    epsilon_used: eps_used[i],
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RoundReport::new(r + 1, records))
    }

    pub fn finish(self, reports: Vec<RoundReport>) -> Result<ExperimentOutcome> {
        let final_nrmse = (0..self.clients.len())
            .map(|i| evaluate_client(self.eval_model(i), &self.shape, &self.clients[i].dataset))
            .collect::<Result<Vec<_>>>()?;
        let eval_models = (0..self.clients.len())
            .map(|i| self.eval_model(i).clone())
            .collect();
        Ok(ExperimentOutcome {
            reports,
            eval_models,
            global: self.server.global,
            final_nrmse,
            accountants: self.clients.into_iter().map(|c| c.accountant).collect(),
            similarity: self.server.similarity,
        })
    }
}

/// Runs `cfg.rounds` rounds (A1: `rounds * epochs_local` local epochs) on
/// already-normalized datasets.
pub fn run_experiment(
    cfg: &TrainConfig,
    datasets: Vec<ClientDataset>,
) -> Result<ExperimentOutcome> {
    let mut fed = Federation::new(cfg.clone(), datasets)?;
    let plan = if cfg.method == Method::A1 {
        AvailabilityPlan::always_available(cfg.rounds, fed.num_clients())
    } else {
        AvailabilityPlan::draw(
            cfg.master_seed,
            cfg.rounds,
            fed.num_clients(),
            cfg.dropout_ratio,
            cfg.dropout_mode,
        )?
    };
    let mut reports = Vec::with_capacity(cfg.rounds);
    for r in 0..cfg.rounds {
        reports.push(fed.run_round(plan.unavailable(r))?);
    }
    fed.finish(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Sample;
    use approx::assert_abs_diff_eq;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::from_vec(v.to_vec())
    }

    #[test]
    fn aggregate_hand_values() {
        let w = pv(&[0.0, 0.0]);
        let (a, b) = (pv(&[1.0, 1.0]), pv(&[3.0, 3.0]));
        let out = aggregate(
            &w,
            &[
                WeightedDelta {
                    client: 0,
                    delta: &a,
                    sample_count: 5,
                },
                WeightedDelta {
                    client: 1,
                    delta: &b,
                    sample_count: 5,
                },
            ],
        )
        .unwrap();
        assert_eq!(out, pv(&[2.0, 2.0]));

        let (a, b) = (pv(&[4.0, 0.0]), pv(&[0.0, 4.0]));
        let out = aggregate(
            &pv(&[1.0, 1.0]),
            &[
                WeightedDelta {
                    client: 0,
                    delta: &a,
                    sample_count: 1,
                },
                WeightedDelta {
                    client: 1,
                    delta: &b,
                    sample_count: 3,
                },
            ],
        )
        .unwrap();
        assert_eq!(out, pv(&[2.0, 4.0]));

        let out = aggregate(
            &pv(&[0.5]),
            &[WeightedDelta {
                client: 0,
                delta: &pv(&[0.25]),
                sample_count: 9,
            }],
        )
        .unwrap();
        assert_eq!(out, pv(&[0.75]));

        assert!(aggregate(&w, &[]).is_err());
        assert!(aggregate(
            &w,
            &[WeightedDelta {
                client: 0,
                delta: &a,
                sample_count: 0
            }]
        )
        .is_err());
    }

    #[test]
    fn config_diagnostics_name_keys() {
        assert!(TrainConfig::default().diagnostics().is_empty());
        let cfg = TrainConfig {
            lr_personalized: -0.01,
            ..TrainConfig::default()
        };
        let d = cfg.diagnostics();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].key, "lr_personalized");
        let cfg = TrainConfig {
            dp_enabled: true,
            clip_threshold: 0.0,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.diagnostics()[0].key, "clip_threshold");
    }

    #[test]
    fn method_parsing_and_strategy() {
        assert_eq!("a4".parse::<Method>().unwrap(), Method::A4);
        assert_eq!("fedavg".parse::<Method>().unwrap(), Method::A2);
        assert!("A5".parse::<Method>().is_err());
        let a3 = TrainConfig {
            method: Method::A3,
            ..TrainConfig::default()
        };
        assert_eq!(a3.effective_strategy(), BudgetStrategy::Fixed);
        let a2 = TrainConfig {
            method: Method::A2,
            budget_strategy: BudgetStrategy::Fixed,
            ..TrainConfig::default()
        };
        assert_eq!(a2.effective_strategy(), BudgetStrategy::Fixed);
    }

    fn line_dataset(id: usize, slope: f64, n: usize) -> ClientDataset {
        let samples = (0..n)
            .map(|k| {
                let x = k as f64 / n as f64;
                Sample::new(vec![x], slope * x)
            })
            .collect();
        ClientDataset::from_series(id, samples, vec![]).unwrap()
    }

    fn small_cfg(method: Method) -> TrainConfig {
        TrainConfig {
            rounds: 3,
            epochs_personalized: 1,
            epochs_local: 2,
            batch_size: 4,
            hidden_dim: 4,
            method,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn all_unavailable_without_history_leaves_global_unchanged() {
        let data = vec![line_dataset(0, 1.0, 20), line_dataset(1, 2.0, 20)];
        let mut fed = Federation::new(small_cfg(Method::A4), data).unwrap();
        let before = fed.server.global.clone();
        let report = fed.run_round(&[0, 1].into()).unwrap();
        assert_eq!(fed.server.global, before);
        assert!(report
            .clients
            .iter()
            .all(|c| c.provenance == Provenance::Excluded && !c.available));
    }

    #[test]
    fn zero_lr_personalized_leaves_model_unchanged() {
        let data = vec![line_dataset(0, 1.0, 20)];
        let mut fed = Federation::new(small_cfg(Method::A4), data).unwrap();
        let mut cfg = fed.cfg.clone();
        cfg.lr_personalized = 0.0;
        let before = fed.clients[0].personalized.clone();
        let w = fed.server.global.clone();
        let shape = fed.shape;
        local_personalized_update(&mut fed.clients[0], &w, &shape, &cfg, &mut rng_for(0, &[]))
            .unwrap();
        assert_eq!(fed.clients[0].personalized, before);
    }

    #[test]
    fn zero_lr_local_gives_zero_delta() {
        let data = vec![line_dataset(0, 1.0, 20)];
        let fed = Federation::new(small_cfg(Method::A2), data).unwrap();
        let mut cfg = fed.cfg.clone();
        cfg.lr_local = 0.0;
        let delta = local_global_update(
            &fed.server.global,
            &fed.clients[0],
            &fed.shape,
            &cfg,
            &mut rng_for(0, &[]),
        )
        .unwrap();
        assert!(delta.as_slice().iter().all(|&d| d == 0.0));
    }

    #[test]
    fn second_round_substitutes_after_shared_history() {
        let data = vec![
            line_dataset(0, 1.0, 20),
            line_dataset(1, 1.1, 20),
            line_dataset(2, -1.0, 20),
        ];
        let mut fed = Federation::new(small_cfg(Method::A4), data).unwrap();
        fed.run_round(&BTreeSet::new()).unwrap();
        let report = fed.run_round(&[1].into()).unwrap();
        assert_eq!(report.clients[1].provenance, Provenance::Substituted);
        assert!(!report.clients[1].available);
        assert_eq!(report.clients[0].provenance, Provenance::Uploaded);
    }

    #[test]
    fn fedavg_marks_dropped_clients_excluded() {
        let data = vec![line_dataset(0, 1.0, 20), line_dataset(1, 1.1, 20)];
        let mut fed = Federation::new(small_cfg(Method::A2), data).unwrap();
        fed.run_round(&BTreeSet::new()).unwrap();
        let report = fed.run_round(&[1].into()).unwrap();
        assert_eq!(report.clients[1].provenance, Provenance::Excluded);
    }

    #[test]
    fn dp_budget_is_recorded_per_upload() {
        let data = vec![line_dataset(0, 1.0, 20), line_dataset(1, 1.1, 20)];
        let cfg = TrainConfig {
            dp_enabled: true,
            epsilon_per_round: 0.5,
            ..small_cfg(Method::A4)
        };
        let mut fed = Federation::new(cfg, data).unwrap();
        let report = fed.run_round(&[1].into()).unwrap();
        assert_eq!(report.clients[0].epsilon_used, Some(0.5));
        assert_eq!(report.clients[1].epsilon_used, None);
        // rounds = 3, failure in round 1 -> eps * 3 / 2
        assert_abs_diff_eq!(
            fed.clients[1]
                .accountant
                .as_ref()
                .unwrap()
                .epsilon_current(),
            0.75,
            epsilon = 1e-15
        );
    }

    #[test]
    fn local_only_runs_rounds_times_local_epochs() {
        let data = vec![line_dataset(0, 1.0, 20)];
        let cfg = small_cfg(Method::A1);
        let out = run_experiment(&cfg, data.clone()).unwrap();
        let shape = MlpShape::new(1, 4).unwrap();
        let start = init_params(
            &shape,
            &mut rng_for(cfg.master_seed, &[stream::INIT_PERSONAL, 0]),
        );
        let mut p = start;
        for r in 0..cfg.rounds {
            let mut rng = rng_for(cfg.master_seed, &[stream::LOCAL_ONLY, r as u64, 0]);
            p = sgd_epochs(
                &p,
                &data[0].train,
                cfg.local_sgd(),
                |q, b| grad_mse(q, &shape, b.iter().copied()),
                &mut rng,
            )
            .unwrap();
        }
        assert_eq!(out.eval_models[0], p);
        assert!(out.accountants[0].is_none());
    }

    #[test]
    fn experiment_is_deterministic() {
        let data = vec![
            line_dataset(0, 1.0, 30),
            line_dataset(1, 1.5, 30),
            line_dataset(2, 0.5, 30),
        ];
        let cfg = TrainConfig {
            dropout_ratio: 0.5,
            dp_enabled: true,
            ..small_cfg(Method::A4)
        };
        let a = run_experiment(&cfg, data.clone()).unwrap();
        let b = run_experiment(&cfg, data).unwrap();
        assert_eq!(a.reports, b.reports);
        assert_eq!(a.eval_models, b.eval_models);
    }
}
