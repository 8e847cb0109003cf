//! Run configuration: built-in defaults, flat `key=value` config files with
//! dotted sections, then command-line overrides — later layers win.
//!
//! The format is line-oriented: blank lines and `#` comments are ignored,
//! everything else must be `key = value`. Lists are comma-separated
//! (`sync.schedule = 0.3,0.6,0.9`). Unknown keys, malformed values, and
//! constraint violations are reported with the key name and line number.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use fedcl_core::curriculum::CurriculumConfig;
use fedcl_core::federation::{Algorithm, RunConfig};

use crate::error::{CliError, Result};

/// Which dataset the harness supplies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Blobs,
    Mnist,
}

impl DatasetKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DatasetKind::Blobs => "blobs",
            DatasetKind::Mnist => "mnist",
        }
    }
}

/// Dataset-supply settings (everything outside the training loop).
#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub dataset: DatasetKind,
    pub blob_classes: usize,
    pub blob_per_class: usize,
    pub blob_test_per_class: usize,
    pub blob_dim: usize,
    pub blob_spread: f64,
    pub dirichlet_alpha: f64,
    /// Fraction of the training pool actually distributed to clients; the
    /// rest is held out unused. The full test split is always reserved for
    /// evaluation.
    pub train_fraction: f64,
    pub mnist_dir: Option<PathBuf>,
    pub mnist_train_limit: usize,
    pub mnist_test_limit: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            dataset: DatasetKind::Blobs,
            blob_classes: 10,
            blob_per_class: 400,
            blob_test_per_class: 100,
            blob_dim: 8,
            blob_spread: 1.0,
            dirichlet_alpha: 0.1,
            train_fraction: 0.5,
            mnist_dir: None,
            mnist_train_limit: 6000,
            mnist_test_limit: 1000,
        }
    }
}

/// Complete application configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct AppConfig {
    pub run: RunConfig,
    pub data: DataConfig,
    /// When set, the schedule must be monotone as listed.
    pub strict_schedule: bool,
}

impl Default for AppConfig {
    fn default() -> Self {
        AppConfig {
            run: RunConfig::default(),
            data: DataConfig::default(),
            strict_schedule: false,
        }
    }
}

fn err(file: &str, line: usize, msg: String) -> CliError {
    CliError::Config {
        file: file.to_string(),
        line,
        msg,
    }
}

fn parse_num<T: std::str::FromStr>(
    key: &str,
    value: &str,
    file: &str,
    line: usize,
) -> Result<T> {
    value
        .trim()
        .parse::<T>()
        .map_err(|_| err(file, line, format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str, file: &str, line: usize) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        other => Err(err(file, line, format!("{key}: expected bool, got {other:?}"))),
    }
}

fn parse_f64_list(key: &str, value: &str, file: &str, line: usize) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| err(file, line, format!("{key}: cannot parse element {s:?}")))
        })
        .collect()
}

fn parse_usize_list(key: &str, value: &str, file: &str, line: usize) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| err(file, line, format!("{key}: cannot parse element {s:?}")))
        })
        .collect()
}

impl AppConfig {
    /// Applies one `key = value` assignment.
    pub fn apply(&mut self, key: &str, value: &str, file: &str, line: usize) -> Result<()> {
        let v = value.trim();
        match key {
            "algorithm" => {
                self.run.algorithm = Algorithm::parse(v)
                    .ok_or_else(|| err(file, line, format!("algorithm: unknown {v:?}")))?;
            }
            "seed" => self.run.seed = parse_num(key, v, file, line)?,
            "rounds" => self.run.rounds = parse_num(key, v, file, line)?,
            "clients.total" => self.run.num_clients = parse_num(key, v, file, line)?,
            "clients.active_ratio" => self.run.active_ratio = parse_num(key, v, file, line)?,
            "local.steps" => self.run.local_steps = parse_num(key, v, file, line)?,
            "local.batch_size" => self.run.batch_size = parse_num(key, v, file, line)?,
            "local.lr" => self.run.client_lr = parse_num(key, v, file, line)?,
            "model.hidden" => self.run.classifier_hidden = parse_usize_list(key, v, file, line)?,
            "curriculum.enabled" => self.run.curriculum_enabled = parse_bool(key, v, file, line)?,
            "curriculum.tau" => self.run.curriculum.tau = parse_num(key, v, file, line)?,
            "curriculum.lambda" => self.run.curriculum.lambda = parse_num(key, v, file, line)?,
            "gmm.components" => self.run.gmm_components = parse_num(key, v, file, line)?,
            "gmm.samples_per_client" => {
                self.run.gmm_samples_per_client = parse_num(key, v, file, line)?
            }
            "sync.enabled" => self.run.sync_enabled = parse_bool(key, v, file, line)?,
            "sync.schedule" => self.run.schedule = parse_f64_list(key, v, file, line)?,
            "sync.temperature" => self.run.temperature_v = parse_num(key, v, file, line)?,
            "sync.state_patience" => self.run.state_patience = parse_num(key, v, file, line)?,
            "sync.stop_on_completion" => {
                self.run.stop_on_completion = parse_bool(key, v, file, line)?
            }
            "sync.strict_schedule" => self.strict_schedule = parse_bool(key, v, file, line)?,
            "generator.enabled" => self.run.generator_enabled = parse_bool(key, v, file, line)?,
            "generator.lr" => self.run.generator_lr = parse_num(key, v, file, line)?,
            "generator.batch_size" => self.run.generator_batch = parse_num(key, v, file, line)?,
            "generator.steps_per_round" => {
                self.run.generator_steps = parse_num(key, v, file, line)?
            }
            "generator.noise_dim" => self.run.generator_noise_dim = parse_num(key, v, file, line)?,
            "generator.hidden" => self.run.generator_hidden = parse_usize_list(key, v, file, line)?,
            "distill.batch_size" => self.run.distill_batch = parse_num(key, v, file, line)?,
            "distill.weight" => self.run.distill_weight = parse_num(key, v, file, line)?,
            "fedprox.mu" => self.run.prox_mu = parse_num(key, v, file, line)?,
            "metrics.timing" => self.run.record_timing = parse_bool(key, v, file, line)?,
            "data.dataset" => {
                self.data.dataset = match v {
                    "blobs" => DatasetKind::Blobs,
                    "mnist" => DatasetKind::Mnist,
                    other => {
                        return Err(err(file, line, format!("data.dataset: unknown {other:?}")))
                    }
                };
            }
            "data.blob_classes" => self.data.blob_classes = parse_num(key, v, file, line)?,
            "data.blob_per_class" => self.data.blob_per_class = parse_num(key, v, file, line)?,
            "data.blob_test_per_class" => {
                self.data.blob_test_per_class = parse_num(key, v, file, line)?
            }
            "data.blob_dim" => self.data.blob_dim = parse_num(key, v, file, line)?,
            "data.blob_spread" => self.data.blob_spread = parse_num(key, v, file, line)?,
            "data.dirichlet_alpha" => self.data.dirichlet_alpha = parse_num(key, v, file, line)?,
            "data.train_fraction" => self.data.train_fraction = parse_num(key, v, file, line)?,
            "data.mnist_dir" => self.data.mnist_dir = Some(PathBuf::from(v)),
            "data.mnist_train_limit" => {
                self.data.mnist_train_limit = parse_num(key, v, file, line)?
            }
            "data.mnist_test_limit" => self.data.mnist_test_limit = parse_num(key, v, file, line)?,
            other => return Err(err(file, line, format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Parses `key = value` text and applies every assignment in order.
    pub fn apply_text(&mut self, text: &str, file: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let Some((key, value)) = trimmed.split_once('=') else {
                return Err(err(file, line, format!("expected key=value, got {trimmed:?}")));
            };
            self.apply(key.trim(), value, file, line)?;
        }
        Ok(())
    }

    /// Applies repeatable `--set key=value` overrides.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for (i, entry) in overrides.iter().enumerate() {
            let Some((key, value)) = entry.split_once('=') else {
                return Err(err("--set", i + 1, format!("expected key=value, got {entry:?}")));
            };
            self.apply(key.trim(), value, "--set", i + 1)?;
        }
        Ok(())
    }

    /// Constraint validation beyond per-key parsing.
    pub fn validate(&self) -> Result<()> {
        self.run.validate()?;
        if self.strict_schedule {
            let s = &self.run.schedule;
            let nondecreasing = s.windows(2).all(|w| w[0] <= w[1]);
            let nonincreasing = s.windows(2).all(|w| w[0] >= w[1]);
            if !nondecreasing && !nonincreasing {
                return Err(CliError::Invalid(
                    "sync.schedule: strict ordering requested but the schedule is not monotone"
                        .into(),
                ));
            }
        }
        if !(self.data.train_fraction > 0.0 && self.data.train_fraction <= 1.0) {
            return Err(CliError::Invalid(
                "data.train_fraction must lie in (0, 1]".into(),
            ));
        }
        if self.data.blob_classes < 2 {
            return Err(CliError::Invalid("data.blob_classes must be >= 2".into()));
        }
        if self.data.blob_per_class == 0 || self.data.blob_test_per_class == 0 {
            return Err(CliError::Invalid(
                "data.blob_per_class and data.blob_test_per_class must be >= 1".into(),
            ));
        }
        if !(self.data.dirichlet_alpha > 0.0) {
            return Err(CliError::Invalid("data.dirichlet_alpha must be > 0".into()));
        }
        if self.data.dataset == DatasetKind::Mnist && self.data.mnist_train_limit == 0 {
            return Err(CliError::Invalid("data.mnist_train_limit must be >= 1".into()));
        }
        Ok(())
    }

    /// Canonical `key = value` rendering of every setting, sorted by key.
    /// `parse(serialize(cfg)) == cfg`.
    pub fn serialize_canonical(&self) -> String {
        let mut map: BTreeMap<&'static str, String> = BTreeMap::new();
        let r = &self.run;
        let d = &self.data;
        map.insert("algorithm", r.algorithm.as_str().to_string());
        map.insert("seed", r.seed.to_string());
        map.insert("rounds", r.rounds.to_string());
        map.insert("clients.total", r.num_clients.to_string());
        map.insert("clients.active_ratio", r.active_ratio.to_string());
        map.insert("local.steps", r.local_steps.to_string());
        map.insert("local.batch_size", r.batch_size.to_string());
        map.insert("local.lr", r.client_lr.to_string());
        map.insert("model.hidden", join(&r.classifier_hidden));
        map.insert("curriculum.enabled", r.curriculum_enabled.to_string());
        map.insert("curriculum.tau", r.curriculum.tau.to_string());
        map.insert("curriculum.lambda", r.curriculum.lambda.to_string());
        map.insert("gmm.components", r.gmm_components.to_string());
        map.insert("gmm.samples_per_client", r.gmm_samples_per_client.to_string());
        map.insert("sync.enabled", r.sync_enabled.to_string());
        map.insert("sync.schedule", join(&r.schedule));
        map.insert("sync.temperature", r.temperature_v.to_string());
        map.insert("sync.state_patience", r.state_patience.to_string());
        map.insert("sync.stop_on_completion", r.stop_on_completion.to_string());
        map.insert("sync.strict_schedule", self.strict_schedule.to_string());
        map.insert("generator.enabled", r.generator_enabled.to_string());
        map.insert("generator.lr", r.generator_lr.to_string());
        map.insert("generator.batch_size", r.generator_batch.to_string());
        map.insert("generator.steps_per_round", r.generator_steps.to_string());
        map.insert("generator.noise_dim", r.generator_noise_dim.to_string());
        map.insert("generator.hidden", join(&r.generator_hidden));
        map.insert("distill.batch_size", r.distill_batch.to_string());
        map.insert("distill.weight", r.distill_weight.to_string());
        map.insert("fedprox.mu", r.prox_mu.to_string());
        map.insert("metrics.timing", r.record_timing.to_string());
        map.insert("data.dataset", d.dataset.as_str().to_string());
        map.insert("data.blob_classes", d.blob_classes.to_string());
        map.insert("data.blob_per_class", d.blob_per_class.to_string());
        map.insert("data.blob_test_per_class", d.blob_test_per_class.to_string());
        map.insert("data.blob_dim", d.blob_dim.to_string());
        map.insert("data.blob_spread", d.blob_spread.to_string());
        map.insert("data.dirichlet_alpha", d.dirichlet_alpha.to_string());
        map.insert("data.train_fraction", d.train_fraction.to_string());
        if let Some(dir) = &d.mnist_dir {
            map.insert("data.mnist_dir", dir.display().to_string());
        }
        map.insert("data.mnist_train_limit", d.mnist_train_limit.to_string());
        map.insert("data.mnist_test_limit", d.mnist_test_limit.to_string());

        let mut out = String::new();
        for (k, v) in map {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

fn join<T: ToString>(values: &[T]) -> String {
    values
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

/// Expected default curriculum config, re-exported for tests.
pub fn default_curriculum() -> CurriculumConfig {
    CurriculumConfig::default()
}
