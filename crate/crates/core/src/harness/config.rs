use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::aggregation::AggregatorConfig;
use crate::attacks::AttackConfig;
use crate::error::{PdrError, Result};
use crate::objectives::{ScheduleKind, TaskSpec};
use crate::projection::ProjectionSpec;
use crate::rng::{derive_seed, keyed_stream, Domain};

/// Environment variable overriding the config's master seed.
pub const SEED_ENV: &str = "PDR_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F64,
    F32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskSpec,
    #[serde(default)]
    pub projection: ProjectionSpec,
    #[serde(default)]
    pub aggregator: AggregatorConfig,
    #[serde(default)]
    pub attack: AttackConfig,
    /// Data-weighted fraction of samples held by byzantine clients.
    #[serde(default)]
    pub byzantine_ratio: f64,
    pub rounds: u64,
    #[serde(default = "ExperimentConfig::default_schedule")]
    pub schedule: ScheduleKind,
    /// Constant step overriding `schedule`.
    #[serde(default)]
    pub learning_rate: Option<f64>,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "ExperimentConfig::default_repeats")]
    pub repeats: usize,
    #[serde(default = "ExperimentConfig::default_output_path")]
    pub output_path: PathBuf,
    #[serde(default = "ExperimentConfig::default_precision")]
    pub precision: Precision,
    /// `false` runs the full-dimension control without projection.
    #[serde(default = "ExperimentConfig::default_projected")]
    pub projected: bool,
    /// Set when `aggregator.assumed_byzantine` was derived from the ratio.
    #[serde(skip)]
    pub(crate) derived_f: bool,
}

impl ExperimentConfig {
    fn default_schedule() -> ScheduleKind {
        ScheduleKind::DecayingStronglyConvex
    }

    fn default_repeats() -> usize {
        1
    }

    fn default_output_path() -> PathBuf {
        PathBuf::from("pdr-out")
    }

    fn default_precision() -> Precision {
        Precision::F64
    }

    fn default_projected() -> bool {
        true
    }

    /// Parses and validates a config, filling derived defaults.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let mut config: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            let field = if path.is_empty() || path == "." { "<root>".to_string() } else { path };
            PdrError::config(field, format!("line {} column {}: {inner}", inner.line(), inner.column()))
        })?;
        config.fill_defaults();
        config.validate()?;
        Ok(config)
    }

    /// `f = floor(b M)` unless the config sets it.
    pub(crate) fn default_f(&self) -> usize {
        (self.byzantine_ratio * self.task.clients as f64 + 1e-9).floor() as usize
    }

    fn fill_defaults(&mut self) {
        if self.aggregator.assumed_byzantine.is_none() {
            let f = self.default_f();
            self.aggregator.assumed_byzantine = Some(f);
            self.derived_f = true;
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.projection.validate().map_err(|e| match e {
            PdrError::Domain { name, value, domain } => {
                PdrError::config(format!("projection.{name}"), format!("{value} is outside {domain}"))
            }
            other => other,
        })?;
        self.attack.validate().map_err(|e| match e {
            PdrError::Domain { name, value, domain } => {
                PdrError::config(format!("attack.{name}"), format!("{value} is outside {domain}"))
            }
            other => other,
        })?;
        self.aggregator
            .validate(self.task.clients)
            .map_err(|e| PdrError::config("aggregator", e.to_string()))?;
        let b = self.byzantine_ratio;
        if !(0.0..0.5).contains(&b) {
            return Err(PdrError::config("byzantine_ratio", format!("{b} is outside [0, 0.5)")));
        }
        if self.rounds == 0 {
            return Err(PdrError::config("rounds", "must be >= 1"));
        }
        if self.repeats == 0 {
            return Err(PdrError::config("repeats", "must be >= 1"));
        }
        if let Some(eta) = self.learning_rate {
            if !(eta > 0.0 && eta.is_finite()) {
                return Err(PdrError::config("learning_rate", "must be positive and finite"));
            }
        }
        Ok(())
    }

    /// Byzantine clients: the longest prefix of a seeded permutation of the
    /// clients whose sample mass stays within `b * sum S`. Sorted ascending.
    pub fn byzantine_clients(&self) -> Vec<usize> {
        let counts = self.task.sample_counts();
        let mut order: Vec<usize> = (0..self.task.clients).collect();
        let mut rng = keyed_stream(derive_seed(self.master_seed, Domain::Byzantine, 0), 0);
        order.shuffle(&mut rng);
        let budget = self.byzantine_ratio * counts.iter().sum::<u64>() as f64;
        let mut mass = 0u64;
        let mut chosen = Vec::new();
        for client in order {
            let next = mass + counts[client];
            if next as f64 > budget * (1.0 + 1e-12) {
                break;
            }
            mass = next;
            chosen.push(client);
        }
        chosen.sort_unstable();
        chosen
    }

    /// Seed of the task structure: fixed across repeats.
    pub fn task_seed(&self) -> u64 {
        self.task.seed.unwrap_or_else(|| derive_seed(self.master_seed, Domain::Task, 0))
    }

    /// Seed driving repeat `r`'s noise, attacks and projections.
    pub fn repeat_seed(&self, repeat: usize) -> u64 {
        derive_seed(self.master_seed, Domain::Repeat, repeat as u64)
    }

    /// Applies the seed precedence: command line, then `PDR_SEED`, then the
    /// config file.
    pub fn apply_seed_override(&mut self, cli_seed: Option<u64>) -> Result<()> {
        if let Some(seed) = cli_seed {
            self.master_seed = seed;
            return Ok(());
        }
        if let Ok(raw) = std::env::var(SEED_ENV) {
            self.master_seed = raw
                .trim()
                .parse()
                .map_err(|_| PdrError::config(SEED_ENV, format!("`{raw}` is not an unsigned 64-bit integer")))?;
        }
        Ok(())
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| PdrError::io(path, e))?;
    ExperimentConfig::from_json(&text)
}
