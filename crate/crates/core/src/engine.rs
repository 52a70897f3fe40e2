//! Training loop: honest and byzantine updates, server-side projection,
//! low-dimensional weights, full-dimensional reconstruction, model step.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::aggregation::{apply_weights, compute_weights, AggregatorConfig, ReliabilityWeights};
use crate::attacks::{craft, AttackConfig, AttackKind};
use crate::error::{PdrError, Result};
use crate::objectives::{lr_schedule, FederatedTask, ScheduleKind, TaskKind};
use crate::projection::{build_projection, project_batch, LinearSketch, Projection, ProjectionSpec};
use crate::rng::{derive_seed, Domain};
use crate::scalar::Scalar;
use crate::vector::{all_finite, axpy, norm_sq, sq_dist, ModelVector};

/// Runs whose squared distance to the optimum exceeds this multiple of the
/// initial one are aborted as non-convergent.
pub const ABORT_GROWTH: f64 = 1e6;

/// Final distance growth beyond which a completed run counts as diverged.
pub const DIVERGENCE_GROWTH: f64 = 10.0;

#[derive(Clone, Debug)]
pub struct EngineConfig {
    pub projection: ProjectionSpec,
    pub aggregator: AggregatorConfig,
    pub attack: AttackConfig,
    pub schedule: ScheduleKind,
    pub rounds: u64,
    pub master_seed: u64,
    /// Clients controlled by the attacker. Only the update collection and the
    /// diagnostics look at this set.
    pub byzantine: Vec<usize>,
    /// `false` aggregates the raw vectors, the full-dimension control.
    pub projected: bool,
    /// Constant step overriding `schedule`.
    pub learning_rate: Option<f64>,
}

impl EngineConfig {
    pub fn new(rounds: u64, master_seed: u64) -> Self {
        Self {
            projection: ProjectionSpec::default(),
            aggregator: AggregatorConfig::default(),
            attack: AttackConfig::default(),
            schedule: ScheduleKind::DecayingStronglyConvex,
            rounds,
            master_seed,
            byzantine: Vec::new(),
            projected: true,
            learning_rate: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundState<T> {
    pub t: u64,
    pub w: ModelVector<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub t: u64,
    pub wall_time_project: f64,
    pub wall_time_aggregate: f64,
    pub wall_time_reconstruct: f64,
    pub learning_rate: f64,
    /// Squared distance of the updated model to the global optimum; absent
    /// for tasks without a closed-form optimum.
    pub dist_sq_to_optimum: Option<f64>,
    /// `|grad F|^2` at the updated model.
    pub grad_norm_sq: f64,
    pub weights: Vec<f64>,
    pub byzantine_weight_mass: f64,
}

impl RoundRecord {
    pub fn wall_time_server(&self) -> f64 {
        self.wall_time_project + self.wall_time_aggregate + self.wall_time_reconstruct
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbortInfo {
    pub round: u64,
    pub reason: String,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PhaseTimings {
    pub project: f64,
    pub aggregate: f64,
    pub reconstruct: f64,
}

impl PhaseTimings {
    pub fn total(&self) -> f64 {
        self.project + self.aggregate + self.reconstruct
    }
}

#[derive(Clone, Debug)]
pub struct ServerOutput<T> {
    pub weights: ReliabilityWeights<T>,
    pub aggregate: ModelVector<T>,
    pub timings: PhaseTimings,
}

/// The server's share of a round.
///
/// With a projection, the aggregator only ever sees the projected vectors;
/// the weights it returns are then applied to the original `updates`.
pub fn server_aggregate<T: Scalar>(
    projection: Option<&Projection<T>>,
    aggregator: &AggregatorConfig,
    updates: &[Vec<T>],
    sample_counts: &[u64],
) -> Result<ServerOutput<T>> {
    let mut timings = PhaseTimings::default();
    let weights = match projection {
        Some(p) => {
            let start = Instant::now();
            let sketches = project_batch(p, updates)?;
            timings.project = start.elapsed().as_secs_f64();
            let start = Instant::now();
            let weights = compute_weights(aggregator, &sketches, sample_counts)?;
            timings.aggregate = start.elapsed().as_secs_f64();
            weights
        }
        None => {
            let start = Instant::now();
            let weights = compute_weights(aggregator, updates, sample_counts)?;
            timings.aggregate = start.elapsed().as_secs_f64();
            weights
        }
    };
    let start = Instant::now();
    let aggregate = apply_weights(&weights, updates)?;
    timings.reconstruct = start.elapsed().as_secs_f64();
    Ok(ServerOutput {
        weights,
        aggregate,
        timings,
    })
}

pub enum RoundOutcome<T> {
    Completed(RoundState<T>, RoundRecord),
    Aborted(AbortInfo),
}

/// One configured training run over a task.
pub struct Engine<'a, T> {
    task: &'a FederatedTask<T>,
    config: &'a EngineConfig,
    projection_spec: ProjectionSpec,
    is_byzantine: Vec<bool>,
    optimum: Option<ModelVector<T>>,
    initial_dist_sq: Option<f64>,
    attack_seed: u64,
    fixed: Option<Projection<T>>,
}

impl<'a, T: Scalar> Engine<'a, T> {
    pub fn new(task: &'a FederatedTask<T>, config: &'a EngineConfig) -> Result<Self> {
        if config.rounds == 0 {
            return Err(PdrError::Domain {
                name: "rounds",
                value: 0.0,
                domain: "[1, inf)",
            });
        }
        let m = task.clients();
        config.aggregator.validate(m)?;
        config.attack.validate()?;
        let mut is_byzantine = vec![false; m];
        for &b in &config.byzantine {
            if b >= m {
                return Err(PdrError::Precondition(format!("byzantine client {b} out of range for M = {m}")));
            }
            is_byzantine[b] = true;
        }
        if is_byzantine.iter().all(|&b| b) && config.attack.kind != AttackKind::Gaussian && config.attack.kind != AttackKind::None {
            return Err(PdrError::Precondition("informed attacks need at least one honest client".into()));
        }
        if let Some(eta) = config.learning_rate {
            if !(eta > 0.0 && eta.is_finite()) {
                return Err(PdrError::Domain {
                    name: "learning_rate",
                    value: eta,
                    domain: "(0, inf)",
                });
            }
        }

        let mut projection_spec = config.projection.clone();
        if projection_spec.k_override.is_none() && projection_spec.rounds.is_none() {
            projection_spec.rounds = Some(config.rounds);
        }
        projection_spec.validate()?;

        let optimum = match task.spec().task_kind {
            TaskKind::Quadratic => Some(task.global_optimum()?),
            TaskKind::NonconvexToy => None,
        };
        let w0 = task.initial_model();
        let initial_dist_sq = optimum.as_ref().map(|o| sq_dist(&w0, o).to_f64_lossy());
        let attack_seed = config
            .attack
            .seed
            .unwrap_or_else(|| derive_seed(config.master_seed, Domain::Attack, 0));

        let mut engine = Self {
            task,
            config,
            projection_spec,
            is_byzantine,
            optimum,
            initial_dist_sq,
            attack_seed,
            fixed: None,
        };
        if config.projected && config.projection.fixed_projection {
            engine.fixed = Some(engine.build_round_projection(0)?);
        }
        Ok(engine)
    }

    pub fn initial_state(&self) -> RoundState<T> {
        RoundState {
            t: 0,
            w: self.task.initial_model(),
        }
    }

    pub fn initial_dist_sq(&self) -> Option<f64> {
        self.initial_dist_sq
    }

    /// Target dimension, or `None` for the full-dimension control.
    pub fn target_dim(&self) -> Result<Option<usize>> {
        if !self.config.projected {
            return Ok(None);
        }
        Ok(Some(self.projection_spec.target_dim(self.task.clients())?))
    }

    /// `P^t`, keyed by the master seed and the round.
    pub fn build_round_projection(&self, t: u64) -> Result<Projection<T>> {
        let seed = derive_seed(self.config.master_seed, Domain::RoundProjection, t);
        build_projection(&self.projection_spec, self.task.clients(), self.task.dim(), seed)
    }

    fn learning_rate(&self, t: u64) -> Result<f64> {
        if let Some(eta) = self.config.learning_rate {
            return Ok(eta);
        }
        let spec = self.task.spec();
        lr_schedule(self.config.schedule, spec.smoothness(), spec.curvature.mu(), self.config.rounds, t)
    }

    /// Every client's update at `w`, byzantine slots filled by the attacker.
    pub fn collect_updates(&self, w: &[T], t: u64) -> Result<Vec<ModelVector<T>>> {
        let m = self.task.clients();
        let mut updates: Vec<Option<ModelVector<T>>> = vec![None; m];
        let attacking = self.config.attack.kind != AttackKind::None;
        let mut benign = Vec::with_capacity(m);
        for client in 0..m {
            if attacking && self.is_byzantine[client] {
                continue;
            }
            let g = self.task.client_gradient(client, w, t, true)?;
            benign.push(g.clone());
            updates[client] = Some(g);
        }
        if attacking && !self.config.byzantine.is_empty() {
            let attack = AttackConfig {
                seed: Some(self.attack_seed),
                ..self.config.attack.clone()
            };
            let mut sorted = self.config.byzantine.clone();
            sorted.sort_unstable();
            sorted.dedup();
            let crafted = craft(&attack, &benign, self.task.dim(), &sorted, t)?;
            for (client, v) in sorted.into_iter().zip(crafted) {
                updates[client] = Some(v);
            }
        }
        Ok(updates.into_iter().map(|u| u.expect("every client filled")).collect())
    }

    pub fn run_round(&self, state: RoundState<T>) -> Result<RoundOutcome<T>> {
        let t = state.t;
        let updates = self.collect_updates(&state.w, t)?;

        let round_projection;
        let projection = if !self.config.projected {
            None
        } else if let Some(p) = &self.fixed {
            Some(p)
        } else {
            round_projection = self.build_round_projection(t)?;
            Some(&round_projection)
        };
        let out = server_aggregate(projection, &self.config.aggregator, &updates, self.task.sample_counts())?;

        let eta = self.learning_rate(t)?;
        let mut w = state.w;
        axpy(-T::from_f64_lossy(eta), &out.aggregate, &mut w);
        if !all_finite(&w) {
            return Ok(RoundOutcome::Aborted(AbortInfo {
                round: t,
                reason: "non-finite model".into(),
            }));
        }

        let dist_sq = self.optimum.as_ref().map(|o| sq_dist(&w, o).to_f64_lossy());
        if let (Some(d), Some(d0)) = (dist_sq, self.initial_dist_sq) {
            if !d.is_finite() || d > ABORT_GROWTH * d0 {
                return Ok(RoundOutcome::Aborted(AbortInfo {
                    round: t,
                    reason: format!("dist_sq {d:e} exceeds {ABORT_GROWTH:e} x initial {d0:e}"),
                }));
            }
        }
        let grad_norm_sq = norm_sq(&self.task.global_gradient(&w)?).to_f64_lossy();
        if !grad_norm_sq.is_finite() {
            return Ok(RoundOutcome::Aborted(AbortInfo {
                round: t,
                reason: "non-finite gradient norm".into(),
            }));
        }

        let weights = out.weights.to_f64();
        let byzantine_weight_mass = weights
            .iter()
            .zip(&self.is_byzantine)
            .filter(|(_, &b)| b)
            .map(|(&a, _)| a)
            .sum::<f64>()
            .clamp(0.0, 1.0);
        let record = RoundRecord {
            t,
            wall_time_project: out.timings.project,
            wall_time_aggregate: out.timings.aggregate,
            wall_time_reconstruct: out.timings.reconstruct,
            learning_rate: eta,
            dist_sq_to_optimum: dist_sq,
            grad_norm_sq,
            weights,
            byzantine_weight_mass,
        };
        Ok(RoundOutcome::Completed(RoundState { t: t + 1, w }, record))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub rounds_completed: u64,
    /// Projection dimension; absent for the full-dimension control.
    pub k: Option<usize>,
    pub initial_dist_sq: Option<f64>,
    pub final_dist_sq: Option<f64>,
    pub initial_grad_norm_sq: f64,
    pub final_grad_norm_sq: Option<f64>,
    pub min_grad_norm_sq: f64,
    pub mean_wall_time_project: f64,
    pub mean_wall_time_aggregate: f64,
    pub mean_wall_time_reconstruct: f64,
    pub mean_wall_time_server: f64,
    pub total_wall_time_server: f64,
    pub byzantine_weight_mass: Vec<f64>,
    pub abort: Option<AbortInfo>,
    /// Aborted, or finished more than `DIVERGENCE_GROWTH` times farther from
    /// the optimum than it started.
    pub diverged: bool,
}

#[derive(Clone, Debug)]
pub struct TrainingOutcome<T> {
    pub records: Vec<RoundRecord>,
    pub summary: TrainingSummary,
    pub final_model: ModelVector<T>,
}

/// Runs `config.rounds` rounds. An abort ends the run early and is reported
/// in the summary; the aborting round produces no record.
pub fn run_training<T: Scalar>(task: &FederatedTask<T>, config: &EngineConfig) -> Result<TrainingOutcome<T>> {
    let engine = Engine::new(task, config)?;
    let mut state = engine.initial_state();
    let initial_grad_norm_sq = norm_sq(&task.global_gradient(&state.w)?).to_f64_lossy();
    let mut records = Vec::with_capacity(config.rounds as usize);
    let mut abort = None;
    for _ in 0..config.rounds {
        match engine.run_round(state.clone())? {
            RoundOutcome::Completed(next, record) => {
                state = next;
                records.push(record);
            }
            RoundOutcome::Aborted(info) => {
                abort = Some(info);
                break;
            }
        }
    }
    let summary = summarize(&records, engine.target_dim()?, engine.initial_dist_sq(), initial_grad_norm_sq, abort);
    Ok(TrainingOutcome {
        records,
        summary,
        final_model: state.w,
    })
}

fn summarize(
    records: &[RoundRecord],
    k: Option<usize>,
    initial_dist_sq: Option<f64>,
    initial_grad_norm_sq: f64,
    abort: Option<AbortInfo>,
) -> TrainingSummary {
    let n = records.len().max(1) as f64;
    let mean = |f: fn(&RoundRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
    let final_dist_sq = records.last().and_then(|r| r.dist_sq_to_optimum);
    let grown = match (final_dist_sq, initial_dist_sq) {
        (Some(d), Some(d0)) => d > DIVERGENCE_GROWTH * d0,
        _ => false,
    };
    TrainingSummary {
        rounds_completed: records.len() as u64,
        k,
        initial_dist_sq,
        final_dist_sq,
        initial_grad_norm_sq,
        final_grad_norm_sq: records.last().map(|r| r.grad_norm_sq),
        min_grad_norm_sq: records.iter().map(|r| r.grad_norm_sq).fold(initial_grad_norm_sq, f64::min),
        mean_wall_time_project: mean(|r| r.wall_time_project),
        mean_wall_time_aggregate: mean(|r| r.wall_time_aggregate),
        mean_wall_time_reconstruct: mean(|r| r.wall_time_reconstruct),
        mean_wall_time_server: mean(RoundRecord::wall_time_server),
        total_wall_time_server: records.iter().map(RoundRecord::wall_time_server).sum(),
        byzantine_weight_mass: records.iter().map(|r| r.byzantine_weight_mass).collect(),
        diverged: abort.is_some() || grown,
        abort,
    }
}

/// The projection sees a column only through its nonzeros; a column with none
/// is in the null space of `P`.
pub fn null_space_columns<T: Scalar>(projection: &Projection<T>) -> Vec<usize> {
    let mut buf = Vec::new();
    (0..projection.cols())
        .filter(|&c| {
            projection.fill_column(c, &mut buf);
            buf.is_empty()
        })
        .collect()
}
