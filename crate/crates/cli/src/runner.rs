//! Expands a config into sweep points, runs them and writes artifacts.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use fedmeter_core::data::{generate_synthetic, load_csv, normalize, ClientDataset};
use fedmeter_core::fl::{run_experiment, ExperimentOutcome, Method, TrainConfig};
use fedmeter_core::metrics::{
    comparison_table, write_metrics_csv, RunSummary, TableRow, METRICS_HEADER,
};

use crate::config::{DataSource, ExperimentConfig};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] fedmeter_core::Error),
    #[error("csv_dir {0} contains no .csv files")]
    NoCsvFiles(PathBuf),
    #[error("summary serialization: {0}")]
    Json(#[from] serde_json::Error),
}

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> RunError {
    let context = context.into();
    move |source| RunError::Io { context, source }
}

/// One fully specified training run.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub label: String,
    pub seed: u64,
    pub train: TrainConfig,
}

impl SweepPoint {
    /// Budget as reported in tables; `None` when no noise is added.
    pub fn epsilon(&self) -> Option<f64> {
        self.train
            .noise_active()
            .then_some(self.train.epsilon_per_round)
    }
}

fn or_default<T: Clone>(list: &[T], fallback: T) -> Vec<T> {
    if list.is_empty() {
        vec![fallback]
    } else {
        list.to_vec()
    }
}

/// Cartesian product of the sweep lists, in method, dropout ratio, epsilon,
/// mu, local epochs, seed order.
pub fn sweep_points(cfg: &ExperimentConfig) -> Vec<SweepPoint> {
    let base = &cfg.train;
    let methods = or_default(&cfg.methods, base.method);
    let ratios = or_default(&cfg.sweep_dropout_ratio, base.dropout_ratio);
    let epsilons: Vec<Option<f64>> = if cfg.sweep_epsilon.is_empty() {
        vec![None]
    } else {
        cfg.sweep_epsilon.iter().map(|&e| Some(e)).collect()
    };
    let mus = or_default(&cfg.sweep_mu, base.mu);
    let epochs = or_default(&cfg.sweep_epochs_local, base.epochs_local);
    let seeds = cfg.effective_seeds();

    let mut points = Vec::new();
    for &method in &methods {
        for &ratio in &ratios {
            for &eps in &epsilons {
                for &mu in &mus {
                    for &e2 in &epochs {
                        for &seed in &seeds {
                            let mut train = base.clone();
                            train.method = method;
                            train.dropout_ratio = ratio;
                            if let Some(e) = eps {
                                train.dp_enabled = e.is_finite();
                                if e.is_finite() {
                                    train.epsilon_per_round = e;
                                }
                            }
                            train.mu = mu;
                            train.epochs_local = e2;
                            train.master_seed = seed;
                            let eps_label = match (eps, train.dp_enabled) {
                                (Some(e), true) => e.to_string(),
                                (None, true) => train.epsilon_per_round.to_string(),
                                _ => "inf".to_string(),
                            };
                            let label =
                                format!("{method}_nc{ratio}_eps{eps_label}_mu{mu}_e{e2}_s{seed}");
                            points.push(SweepPoint { label, seed, train });
                        }
                    }
                }
            }
        }
    }
    points
}

/// Normalized client datasets for one seed.
pub fn build_datasets(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<ClientDataset>, RunError> {
    let raw = match cfg.data_source {
        DataSource::Synthetic => {
            generate_synthetic(cfg.num_communities, cfg.samples_per_community, seed)?
        }
        DataSource::CsvDir => {
            let dir = cfg.csv_dir.as_deref().unwrap_or(Path::new("."));
            let mut files: Vec<PathBuf> = fs::read_dir(dir)
                .map_err(io_err(format!("reading {}", dir.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "csv"))
                .collect();
            files.sort();
            if files.is_empty() {
                return Err(RunError::NoCsvFiles(dir.to_path_buf()));
            }
            files
                .iter()
                .enumerate()
                .map(|(id, p)| load_csv(p, id))
                .collect::<Result<_, _>>()?
        }
    };
    Ok(raw.iter().map(normalize).collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub label: String,
    pub method: Method,
    pub dropout_ratio: f64,
    pub epsilon: Option<f64>,
    pub mu: f64,
    pub epochs_local: usize,
    pub seed: u64,
    pub final_nrmse: Vec<f64>,
    pub mean_final_nrmse: f64,
    pub epsilon_consumed: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub table: Vec<TableRow>,
    pub runs: Vec<RunRecord>,
}

pub struct PointResult {
    pub point: SweepPoint,
    pub outcome: ExperimentOutcome,
}

impl PointResult {
    fn summary(&self) -> RunSummary {
        RunSummary {
            method: self.point.train.method,
            dropout_ratio: self.point.train.dropout_ratio,
            epsilon: self.point.epsilon(),
            mu: self.point.train.mu,
            epochs_local: self.point.train.epochs_local,
            seed: self.point.seed,
            community_nrmse: self.outcome.final_nrmse.clone(),
        }
    }

    fn record(&self) -> RunRecord {
        let s = self.summary();
        let consumed: Option<Vec<f64>> = self
            .outcome
            .accountants
            .iter()
            .map(|a| a.as_ref().map(|a| a.consumed()))
            .collect();
        RunRecord {
            label: self.point.label.clone(),
            method: s.method,
            dropout_ratio: s.dropout_ratio,
            epsilon: s.epsilon,
            mu: s.mu,
            epochs_local: s.epochs_local,
            seed: s.seed,
            mean_final_nrmse: self.outcome.mean_final_nrmse(),
            final_nrmse: s.community_nrmse,
            epsilon_consumed: consumed,
        }
    }
}

/// Runs every sweep point in order. Datasets are rebuilt per seed, so all
/// points sharing a seed see identical data.
pub fn run_points(
    cfg: &ExperimentConfig,
    points: Vec<SweepPoint>,
) -> Result<Vec<PointResult>, RunError> {
    let mut cache: Option<(u64, Vec<ClientDataset>)> = None;
    let mut results = Vec::with_capacity(points.len());
    for point in points {
        let datasets = match &cache {
            Some((seed, ds)) if *seed == point.seed => ds.clone(),
            _ => {
                let ds = build_datasets(cfg, point.seed)?;
                cache = Some((point.seed, ds.clone()));
                ds
            }
        };
        let outcome = run_experiment(&point.train, datasets)?;
        results.push(PointResult { point, outcome });
    }
    Ok(results)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), RunError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io_err(format!("writing {}", tmp.display())))?;
    fs::rename(&tmp, path).map_err(io_err(format!("renaming to {}", path.display())))
}

fn metrics_bytes(outcome: &ExperimentOutcome) -> Vec<u8> {
    let mut buf = Vec::new();
    write_metrics_csv(&mut buf, &outcome.reports).expect("writing to memory");
    buf
}

/// Writes `metrics.csv`, `summary.json`, `config_resolved.txt` and one
/// `runs/<label>/` directory per sweep point.
///
/// With a single sweep point the top-level `metrics.csv` is that run's file.
/// Otherwise the per-run files are concatenated under a leading `run` column.
pub fn write_artifacts(
    cfg: &ExperimentConfig,
    results: &[PointResult],
) -> Result<Summary, RunError> {
    let out = &cfg.output_dir;
    fs::create_dir_all(out).map_err(io_err(format!("creating {}", out.display())))?;
    write_atomic(&out.join("config_resolved.txt"), cfg.to_text().as_bytes())?;

    let mut combined = Vec::new();
    if results.len() != 1 {
        writeln!(combined, "run,{METRICS_HEADER}").expect("writing to memory");
    }
    for r in results {
        let dir = out.join("runs").join(&r.point.label);
        fs::create_dir_all(&dir).map_err(io_err(format!("creating {}", dir.display())))?;
        let bytes = metrics_bytes(&r.outcome);
        write_atomic(&dir.join("metrics.csv"), &bytes)?;
        if cfg.dump_similarity && r.point.train.method.substitutes() {
            let mut sim = Vec::new();
            r.outcome
                .similarity
                .write_csv(&mut sim)
                .expect("writing to memory");
            write_atomic(&dir.join("similarity.csv"), &sim)?;
        }
        if results.len() == 1 {
            combined = bytes;
        } else {
            let text = String::from_utf8(bytes).expect("metrics are ASCII");
            for line in text.lines().skip(1) {
                writeln!(combined, "{},{line}", r.point.label).expect("writing to memory");
            }
        }
    }
    write_atomic(&out.join("metrics.csv"), &combined)?;

    let summaries: Vec<RunSummary> = results.iter().map(PointResult::summary).collect();
    let summary = Summary {
        table: comparison_table(&summaries),
        runs: results.iter().map(PointResult::record).collect(),
    };
    let json = serde_json::to_vec_pretty(&summary)?;
    write_atomic(&out.join("summary.json"), &json)?;
    Ok(summary)
}

/// Full pipeline for an already validated config.
pub fn run(cfg: &ExperimentConfig) -> Result<Summary, RunError> {
    let results = run_points(cfg, sweep_points(cfg))?;
    write_artifacts(cfg, &results)
}
