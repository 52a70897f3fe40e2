use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engine::{run_training, AbortInfo, EngineConfig, RoundRecord, TrainingSummary};
use crate::error::{PdrError, Result};
use crate::objectives::FederatedTask;
use crate::rng::{derive_seed, Domain};
use crate::scalar::Scalar;

use super::config::{ExperimentConfig, Precision};

pub const RECORDS_FILE: &str = "records.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";

/// One line of `records.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordLine {
    pub repeat: usize,
    #[serde(flatten)]
    pub record: RoundRecord,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    /// Mean and population standard deviation; `None` for an empty sample.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(Self { mean, std: var.sqrt() })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepeatAbort {
    pub repeat: usize,
    #[serde(flatten)]
    pub info: AbortInfo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub repeats: usize,
    pub k: Option<usize>,
    pub byzantine_clients: Vec<usize>,
    pub assumed_byzantine: usize,
    pub final_dist_sq: Option<Stat>,
    pub final_grad_norm_sq: Option<Stat>,
    pub min_grad_norm_sq: Option<Stat>,
    pub wall_time_project: Option<Stat>,
    pub wall_time_aggregate: Option<Stat>,
    pub wall_time_reconstruct: Option<Stat>,
    /// Mean per-round server time, statistics across repeats.
    pub wall_time_server: Option<Stat>,
    pub total_wall_time_server: Option<Stat>,
    /// Per round, mean byzantine weight mass over the repeats that reached it.
    pub byzantine_weight_mass: Vec<f64>,
    pub diverged_repeats: usize,
    pub aborts: Vec<RepeatAbort>,
    pub per_repeat: Vec<TrainingSummary>,
}

impl ExperimentSummary {
    pub fn any_aborted(&self) -> bool {
        !self.aborts.is_empty()
    }
}

/// Records and summaries of every repeat, without touching the disk.
pub fn simulate(config: &ExperimentConfig) -> Result<(Vec<RecordLine>, ExperimentSummary)> {
    config.validate()?;
    match config.precision {
        Precision::F64 => simulate_as::<f64>(config),
        Precision::F32 => simulate_as::<f32>(config),
    }
}

fn simulate_as<T: Scalar>(config: &ExperimentConfig) -> Result<(Vec<RecordLine>, ExperimentSummary)> {
    let byzantine = config.byzantine_clients();
    let base_task = FederatedTask::<T>::new(&config.task, config.task_seed())?;
    let mut lines = Vec::new();
    let mut summaries = Vec::with_capacity(config.repeats);
    for repeat in 0..config.repeats {
        let seed = config.repeat_seed(repeat);
        let task = base_task.clone().with_noise_seed(derive_seed(seed, Domain::Noise, 0));
        let engine = EngineConfig {
            projection: config.projection.clone(),
            aggregator: config.aggregator.clone(),
            attack: config.attack.clone(),
            schedule: config.schedule,
            rounds: config.rounds,
            master_seed: seed,
            byzantine: byzantine.clone(),
            projected: config.projected,
            learning_rate: config.learning_rate,
        };
        let outcome = run_training(&task, &engine)?;
        lines.extend(outcome.records.into_iter().map(|record| RecordLine { repeat, record }));
        summaries.push(outcome.summary);
    }
    Ok((lines, summarize(config, byzantine, summaries)))
}

fn summarize(config: &ExperimentConfig, byzantine: Vec<usize>, per_repeat: Vec<TrainingSummary>) -> ExperimentSummary {
    let collect = |f: &dyn Fn(&TrainingSummary) -> Option<f64>| -> Option<Stat> {
        Stat::of(&per_repeat.iter().filter_map(f).collect::<Vec<_>>())
    };
    let longest = per_repeat.iter().map(|s| s.byzantine_weight_mass.len()).max().unwrap_or(0);
    let byzantine_weight_mass = (0..longest)
        .map(|t| {
            let at: Vec<f64> = per_repeat.iter().filter_map(|s| s.byzantine_weight_mass.get(t).copied()).collect();
            at.iter().sum::<f64>() / at.len() as f64
        })
        .collect();
    let aborts = per_repeat
        .iter()
        .enumerate()
        .filter_map(|(repeat, s)| s.abort.clone().map(|info| RepeatAbort { repeat, info }))
        .collect();
    ExperimentSummary {
        repeats: per_repeat.len(),
        k: per_repeat.first().and_then(|s| s.k),
        byzantine_clients: byzantine,
        assumed_byzantine: config.aggregator.f(),
        final_dist_sq: collect(&|s| s.final_dist_sq),
        final_grad_norm_sq: collect(&|s| s.final_grad_norm_sq),
        min_grad_norm_sq: collect(&|s| Some(s.min_grad_norm_sq)),
        wall_time_project: collect(&|s| Some(s.mean_wall_time_project)),
        wall_time_aggregate: collect(&|s| Some(s.mean_wall_time_aggregate)),
        wall_time_reconstruct: collect(&|s| Some(s.mean_wall_time_reconstruct)),
        wall_time_server: collect(&|s| Some(s.mean_wall_time_server)),
        total_wall_time_server: collect(&|s| Some(s.total_wall_time_server)),
        byzantine_weight_mass,
        diverged_repeats: per_repeat.iter().filter(|s| s.diverged).count(),
        aborts,
        per_repeat,
    }
}

/// Runs every repeat and writes `records.jsonl` and `summary.json` under
/// `out_dir`. Aborted repeats are reported in the summary, not as errors.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentSummary> {
    let (lines, summary) = simulate(config)?;
    fs::create_dir_all(out_dir).map_err(|e| PdrError::io(out_dir, e))?;

    let records_path = out_dir.join(RECORDS_FILE);
    let file = File::create(&records_path).map_err(|e| PdrError::io(&records_path, e))?;
    let mut writer = BufWriter::new(file);
    for line in &lines {
        serde_json::to_writer(&mut writer, line)?;
        writer.write_all(b"\n").map_err(|e| PdrError::io(&records_path, e))?;
    }
    writer.flush().map_err(|e| PdrError::io(&records_path, e))?;

    write_json(&out_dir.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

pub(crate) fn write_json<S: Serialize>(path: &PathBuf, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| PdrError::io(path, e))
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<RecordLine>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| PdrError::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(PdrError::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stat_of_sample() {
        let s = Stat::of(&[1.0, 3.0]).unwrap();
        assert_eq!((s.mean, s.std), (2.0, 1.0));
        assert!(Stat::of(&[]).is_none());
    }

    #[test]
    fn record_line_flattens() {
        let line = RecordLine {
            repeat: 2,
            record: RoundRecord {
                t: 0,
                wall_time_project: 0.5,
                wall_time_aggregate: 0.25,
                wall_time_reconstruct: 0.125,
                learning_rate: 0.1,
                dist_sq_to_optimum: None,
                grad_norm_sq: 1.0,
                weights: vec![0.5, 0.5],
                byzantine_weight_mass: 0.0,
            },
        };
        let text = serde_json::to_string(&line).unwrap();
        assert!(text.starts_with("{\"repeat\":2,\"t\":0,"), "{text}");
        assert_eq!(serde_json::from_str::<RecordLine>(&text).unwrap(), line);
    }
}
