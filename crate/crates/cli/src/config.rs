//! Flat `key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. List values are
//! comma-separated. The resolved form written by [`ExperimentConfig::to_text`]
//! parses back to the same config.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use fedmeter_core::availability::DropoutMode;
use fedmeter_core::fl::{Diagnostic, Method, TrainConfig};
use fedmeter_core::privacy::BudgetStrategy;

use crate::presets;

pub const SEED_ENV: &str = "FEDMETER_SEED";

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("`{key}`: cannot parse {value:?}: {reason}")]
    BadValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("unknown preset `{0}`; try `presets list`")]
    UnknownPreset(String),
    #[error("override `{0}` has no value")]
    DanglingOverride(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DataSource {
    #[default]
    Synthetic,
    CsvDir,
}

impl fmt::Display for DataSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DataSource::Synthetic => "synthetic",
            DataSource::CsvDir => "csv_dir",
        })
    }
}

impl FromStr for DataSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "synthetic" => Ok(DataSource::Synthetic),
            "csv_dir" => Ok(DataSource::CsvDir),
            other => Err(format!("unknown data source `{other}` (synthetic|csv_dir)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub preset: Option<String>,
    pub train: TrainConfig,
    pub num_communities: usize,
    pub samples_per_community: usize,
    pub data_source: DataSource,
    pub csv_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub sweep_dropout_ratio: Vec<f64>,
    pub sweep_epsilon: Vec<f64>,
    pub sweep_mu: Vec<f64>,
    pub sweep_epochs_local: Vec<usize>,
    pub dump_similarity: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            preset: None,
            train: presets::desk_train_config(),
            num_communities: 4,
            samples_per_community: 2000,
            data_source: DataSource::Synthetic,
            csv_dir: None,
            output_dir: PathBuf::from("out"),
            methods: Vec::new(),
            seeds: Vec::new(),
            sweep_dropout_ratio: Vec::new(),
            sweep_epsilon: Vec::new(),
            sweep_mu: Vec::new(),
            sweep_epochs_local: Vec::new(),
            dump_similarity: false,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse::<T>().map_err(|e| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: e.to_string(),
    })
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(key, s))
        .collect()
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl ExperimentConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let value = value.trim();
        let t = &mut self.train;
        match key {
            "preset" => {
                // A preset replaces everything set so far except the output dir.
                let out = self.output_dir.clone();
                *self = presets::by_name(value)
                    .ok_or_else(|| ConfigError::UnknownPreset(value.into()))?;
                self.output_dir = out;
            }
            "rounds" => t.rounds = parse_value(key, value)?,
            "epochs_personalized" => t.epochs_personalized = parse_value(key, value)?,
            "epochs_local" => t.epochs_local = parse_value(key, value)?,
            "lr_personalized" => t.lr_personalized = parse_value(key, value)?,
            "lr_local" => t.lr_local = parse_value(key, value)?,
            "mu" => t.mu = parse_value(key, value)?,
            "batch_size" => t.batch_size = parse_value(key, value)?,
            "hidden_dim" => t.hidden_dim = parse_value(key, value)?,
            "method" => t.method = parse_value(key, value)?,
            "dp_enabled" => t.dp_enabled = parse_value(key, value)?,
            "clip_threshold" => t.clip_threshold = parse_value(key, value)?,
            "epsilon_per_round" => t.epsilon_per_round = parse_value(key, value)?,
            "budget_strategy" => t.budget_strategy = parse_value::<BudgetStrategy>(key, value)?,
            "dropout_ratio" => t.dropout_ratio = parse_value(key, value)?,
            "dropout_mode" => t.dropout_mode = parse_value::<DropoutMode>(key, value)?,
            "master_seed" => t.master_seed = parse_value(key, value)?,
            "num_communities" => self.num_communities = parse_value(key, value)?,
            "samples_per_community" => self.samples_per_community = parse_value(key, value)?,
            "data_source" => self.data_source = parse_value(key, value)?,
            "csv_dir" => self.csv_dir = (!value.is_empty()).then(|| PathBuf::from(value)),
            "output_dir" => self.output_dir = PathBuf::from(value),
            "methods" => self.methods = parse_list(key, value)?,
            "seeds" => self.seeds = parse_list(key, value)?,
            "sweep_dropout_ratio" => self.sweep_dropout_ratio = parse_list(key, value)?,
            "sweep_epsilon" => self.sweep_epsilon = parse_list(key, value)?,
            "sweep_mu" => self.sweep_mu = parse_list(key, value)?,
            "sweep_epochs_local" => self.sweep_epochs_local = parse_list(key, value)?,
            "dump_similarity" => self.dump_similarity = parse_value(key, value)?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Parses config text on top of the defaults. A `preset` line, wherever
    /// it appears, is applied first so that the other lines refine it.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                text: raw.to_string(),
            })?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        let mut cfg = Self::default();
        pairs.sort_by_key(|(k, _)| k != "preset");
        for (k, v) in pairs {
            cfg.set(&k, &v)?;
        }
        Ok(cfg)
    }

    /// Applies `--key value` pairs in order.
    pub fn apply_overrides(&mut self, args: &[String]) -> Result<(), ConfigError> {
        let mut it = args.iter();
        while let Some(flag) = it.next() {
            let key = flag.trim_start_matches("--");
            if let Some((k, v)) = key.split_once('=') {
                self.set(k, v)?;
                continue;
            }
            let value = it
                .next()
                .ok_or_else(|| ConfigError::DanglingOverride(flag.clone()))?;
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn apply_seed_env(&mut self, value: Option<&str>) -> Result<(), ConfigError> {
        if let Some(v) = value {
            self.set("master_seed", v)?;
        }
        Ok(())
    }

    /// Every violated constraint with its key.
    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut out = self.train.diagnostics();
        let mut flag = |key: &str, ok: bool, message: &str| {
            if !ok {
                out.push(Diagnostic {
                    key: key.to_string(),
                    message: message.to_string(),
                });
            }
        };
        flag("num_communities", self.num_communities >= 1, "must be >= 1");
        flag(
            "samples_per_community",
            self.data_source != DataSource::Synthetic
                || self.samples_per_community >= fedmeter_core::data::MIN_SYNTHETIC_SAMPLES,
            "must be >= 20 for synthetic data",
        );
        flag(
            "csv_dir",
            (self.data_source == DataSource::CsvDir) == self.csv_dir.is_some(),
            "required iff data_source = csv_dir",
        );
        flag(
            "sweep_dropout_ratio",
            self.sweep_dropout_ratio
                .iter()
                .all(|r| (0.0..=1.0).contains(r)),
            "every entry must lie in [0, 1]",
        );
        flag(
            "sweep_epsilon",
            self.sweep_epsilon.iter().all(|e| *e > 0.0),
            "every entry must be > 0",
        );
        flag(
            "sweep_mu",
            self.sweep_mu.iter().all(|m| *m >= 0.0 && m.is_finite()),
            "every entry must be >= 0",
        );
        flag(
            "sweep_epochs_local",
            self.sweep_epochs_local.iter().all(|e| *e >= 1),
            "every entry must be >= 1",
        );
        if self.train.dp_enabled || !self.sweep_epsilon.is_empty() {
            flag(
                "clip_threshold",
                self.train.clip_threshold > 0.0 && self.train.clip_threshold.is_finite(),
                "must be > 0 when differential privacy is used",
            );
        }
        if let Some(name) = &self.preset {
            if let Some(req) = presets::required_sweeps(name) {
                for key in req {
                    let empty = match *key {
                        "methods" => self.methods.is_empty(),
                        "sweep_dropout_ratio" => self.sweep_dropout_ratio.is_empty(),
                        "sweep_epsilon" => self.sweep_epsilon.is_empty(),
                        "sweep_mu" => self.sweep_mu.is_empty(),
                        "sweep_epochs_local" => self.sweep_epochs_local.is_empty(),
                        _ => false,
                    };
                    flag(key, !empty, "must not be empty for this preset");
                }
            }
        }
        out.dedup();
        out
    }

    /// Seeds the run iterates over; falls back to `master_seed`.
    pub fn effective_seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![self.train.master_seed]
        } else {
            self.seeds.clone()
        }
    }

    /// Full resolved config, one `key = value` per line in a fixed order.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let mut m: BTreeMap<&str, String> = BTreeMap::new();
        m.insert("batch_size", t.batch_size.to_string());
        m.insert("budget_strategy", t.budget_strategy.to_string());
        m.insert("clip_threshold", t.clip_threshold.to_string());
        m.insert(
            "csv_dir",
            self.csv_dir
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
        );
        m.insert("data_source", self.data_source.to_string());
        m.insert("dp_enabled", t.dp_enabled.to_string());
        m.insert("dropout_mode", t.dropout_mode.to_string());
        m.insert("dropout_ratio", t.dropout_ratio.to_string());
        m.insert("dump_similarity", self.dump_similarity.to_string());
        m.insert("epochs_local", t.epochs_local.to_string());
        m.insert("epochs_personalized", t.epochs_personalized.to_string());
        m.insert("epsilon_per_round", t.epsilon_per_round.to_string());
        m.insert("hidden_dim", t.hidden_dim.to_string());
        m.insert("lr_local", t.lr_local.to_string());
        m.insert("lr_personalized", t.lr_personalized.to_string());
        m.insert("master_seed", t.master_seed.to_string());
        m.insert("method", t.method.to_string());
        m.insert("methods", join(&self.methods));
        m.insert("mu", t.mu.to_string());
        m.insert("num_communities", self.num_communities.to_string());
        m.insert("output_dir", self.output_dir.display().to_string());
        m.insert("rounds", t.rounds.to_string());
        m.insert(
            "samples_per_community",
            self.samples_per_community.to_string(),
        );
        m.insert("seeds", join(&self.seeds));
        m.insert("sweep_dropout_ratio", join(&self.sweep_dropout_ratio));
        m.insert("sweep_epochs_local", join(&self.sweep_epochs_local));
        m.insert("sweep_epsilon", join(&self.sweep_epsilon));
        m.insert("sweep_mu", join(&self.sweep_mu));
        let mut text = String::new();
        // `preset` is deliberately omitted: every value it set is spelled out.
        for (k, v) in m {
            text.push_str(k);
            text.push_str(" = ");
            text.push_str(&v);
            text.push('\n');
        }
        text
    }
}
