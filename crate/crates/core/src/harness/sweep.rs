use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::aggregation::AggregatorKind;
use crate::attacks::AttackKind;
use crate::error::{PdrError, Result};

use super::config::ExperimentConfig;
use super::experiment::{run_experiment, ExperimentSummary};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    ByzantineRatio,
    Attack,
    Aggregator,
    K,
    Sparsity,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::ByzantineRatio => "b",
            SweepAxis::Attack => "attack",
            SweepAxis::Aggregator => "aggregator",
            SweepAxis::K => "k",
            SweepAxis::Sparsity => "s",
        }
    }

    /// Copy of `base` with this axis set to `value`, revalidated.
    pub fn apply(self, base: &ExperimentConfig, value: &str) -> Result<ExperimentConfig> {
        let bad = |what: &str| PdrError::config(self.name(), format!("`{value}` is not {what}"));
        let mut c = base.clone();
        match self {
            SweepAxis::ByzantineRatio => {
                c.byzantine_ratio = value.parse().map_err(|_| bad("a real number"))?;
                if base.derived_f {
                    c.aggregator.assumed_byzantine = Some(c.default_f());
                }
            }
            SweepAxis::Attack => c.attack.kind = value.parse::<AttackKind>()?,
            SweepAxis::Aggregator => c.aggregator.kind = value.parse::<AggregatorKind>()?,
            SweepAxis::K => c.projection.k_override = Some(value.parse().map_err(|_| bad("a positive integer"))?),
            SweepAxis::Sparsity => c.projection.sparsity = value.parse().map_err(|_| bad("a positive integer"))?,
        }
        c.validate()?;
        Ok(c)
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = PdrError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "b" | "byzantine_ratio" => SweepAxis::ByzantineRatio,
            "attack" => SweepAxis::Attack,
            "aggregator" => SweepAxis::Aggregator,
            "k" => SweepAxis::K,
            "s" | "sparsity" => SweepAxis::Sparsity,
            _ => return Err(PdrError::config("axis", format!("unknown axis `{s}`; expected b, attack, aggregator, k or s"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: String,
    pub k: Option<usize>,
    pub repeats: usize,
    pub final_dist_sq_mean: Option<f64>,
    pub final_dist_sq_std: Option<f64>,
    pub final_grad_norm_sq_mean: Option<f64>,
    pub min_grad_norm_sq_mean: Option<f64>,
    pub wall_time_server_mean: Option<f64>,
    pub byzantine_weight_mass_mean: f64,
    pub diverged_repeats: usize,
    pub aborted_repeats: usize,
}

impl SweepRow {
    fn new(axis: SweepAxis, value: &str, s: &ExperimentSummary) -> Self {
        let mass = &s.byzantine_weight_mass;
        Self {
            axis: axis.name().to_string(),
            value: value.to_string(),
            k: s.k,
            repeats: s.repeats,
            final_dist_sq_mean: s.final_dist_sq.map(|x| x.mean),
            final_dist_sq_std: s.final_dist_sq.map(|x| x.std),
            final_grad_norm_sq_mean: s.final_grad_norm_sq.map(|x| x.mean),
            min_grad_norm_sq_mean: s.min_grad_norm_sq.map(|x| x.mean),
            wall_time_server_mean: s.wall_time_server.map(|x| x.mean),
            byzantine_weight_mass_mean: if mass.is_empty() { 0.0 } else { mass.iter().sum::<f64>() / mass.len() as f64 },
            diverged_repeats: s.diverged_repeats,
            aborted_repeats: s.aborts.len(),
        }
    }
}

pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub csv_path: PathBuf,
}

/// Runs one experiment per value, in the given order, each under
/// `out_dir/<axis>=<value>/`, and writes `out_dir/sweep_<axis>.csv`.
pub fn sweep(base: &ExperimentConfig, axis: SweepAxis, values: &[String], out_dir: &Path) -> Result<SweepResult> {
    if values.is_empty() {
        return Err(PdrError::config("values", "at least one value is required"));
    }
    let configs = values
        .iter()
        .map(|v| axis.apply(base, v))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(values.len());
    for (value, config) in values.iter().zip(&configs) {
        let dir = out_dir.join(format!("{}={}", axis.name(), value));
        let summary = run_experiment(config, &dir)?;
        rows.push(SweepRow::new(axis, value, &summary));
    }
    let csv_path = out_dir.join(format!("sweep_{}.csv", axis.name()));
    write_csv(&csv_path, &rows)?;
    Ok(SweepResult { rows, csv_path })
}

fn write_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let io = |e: csv::Error| PdrError::io(path, std::io::Error::other(e));
    let mut writer = csv::Writer::from_path(path).map_err(io)?;
    for row in rows {
        writer.serialize(row).map_err(io)?;
    }
    writer.flush().map_err(|e| PdrError::io(path, e))
}
