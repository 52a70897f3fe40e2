use std::path::Path;
use std::time::Instant;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::aggregation::{AggregatorConfig, AggregatorKind};
use crate::engine::server_aggregate;
use crate::error::{PdrError, Result};
use crate::projection::{build_projection, ProjectionSpec};
use crate::rng::{derive_seed, keyed_stream, Domain};

/// Cells whose stddev/mean exceeds this are flagged unstable.
pub const MAX_CV: f64 = 0.3;

pub const MIN_REPEATS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchCell {
    pub p: usize,
    #[serde(rename = "M", alias = "clients")]
    pub clients: usize,
    pub k: usize,
    #[serde(default = "BenchCell::default_sparsity")]
    pub s: u32,
    pub aggregator: AggregatorKind,
    /// Krum/Bulyan `f`; defaults to the largest value the rule accepts, capped
    /// at a fifth of the clients.
    #[serde(default)]
    pub f: Option<usize>,
    #[serde(default = "BenchCell::default_iters")]
    pub weiszfeld_max_iters: usize,
}

impl BenchCell {
    fn default_sparsity() -> u32 {
        8
    }

    fn default_iters() -> usize {
        50
    }

    fn aggregator_config(&self) -> AggregatorConfig {
        let m = self.clients;
        let cap = match self.aggregator {
            AggregatorKind::Krum => m.saturating_sub(3),
            AggregatorKind::BulyanSelect => m.saturating_sub(1) / 2,
            _ => m,
        };
        AggregatorConfig {
            kind: self.aggregator,
            assumed_byzantine: Some(self.f.unwrap_or((m / 5).min(cap))),
            weiszfeld_max_iters: self.weiszfeld_max_iters,
            // Run the full iteration budget so both variants do equal work.
            weiszfeld_tol: 0.0,
            weight_by_samples: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchGrid {
    pub cells: Vec<BenchCell>,
    #[serde(default = "BenchGrid::default_warmup")]
    pub warmup: usize,
    #[serde(default)]
    pub seed: u64,
}

impl BenchGrid {
    fn default_warmup() -> usize {
        1
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| PdrError::io(path, e))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            PdrError::config(field, e.into_inner().to_string())
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub mean: f64,
    pub std: f64,
    pub cv: f64,
    pub unstable: bool,
}

impl Timing {
    fn of(samples: &[f64]) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let std = (samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n).sqrt();
        let cv = if mean > 0.0 { std / mean } else { 0.0 };
        Self {
            mean,
            std,
            cv,
            unstable: cv > MAX_CV,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub cell: BenchCell,
    pub repeats: usize,
    /// Aggregation at dimension `p`.
    pub unprojected: Timing,
    /// Projection, aggregation at dimension `k`, and reconstruction.
    pub projected: Timing,
    pub project_mean: f64,
    pub aggregate_mean: f64,
    pub reconstruct_mean: f64,
    /// `unprojected / projected`; absent when either timing is unstable.
    pub speedup: Option<f64>,
    /// `unprojected / projected` regardless of stability.
    pub raw_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    #[serde(rename = "M")]
    pub clients: usize,
    pub k: usize,
    pub s: u32,
    pub aggregator: AggregatorKind,
    pub projected: bool,
    /// Least-squares slope of log time against log p.
    pub slope: f64,
    pub points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub cells: Vec<CellReport>,
    pub slopes: Vec<SlopeFit>,
}

/// `M` Gaussian vectors of dimension `p`, a fifth of them shifted away.
pub fn synthetic_updates(p: usize, clients: usize, seed: u64) -> Vec<Vec<f64>> {
    let outliers = clients / 5;
    (0..clients)
        .map(|m| {
            let mut rng = keyed_stream(seed, m as u64);
            let shift = if m >= clients - outliers { 10.0 } else { 0.0 };
            (0..p)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z + shift
                })
                .collect()
        })
        .collect()
}

/// Times one cell: `warmup` untimed passes, then `repeats` timed ones of each
/// variant on the same inputs.
pub fn bench_cell(cell: &BenchCell, repeats: usize, warmup: usize, seed: u64) -> Result<CellReport> {
    if repeats < MIN_REPEATS {
        return Err(PdrError::config("repeats", format!("must be >= {MIN_REPEATS}")));
    }
    let updates = synthetic_updates(cell.p, cell.clients, derive_seed(seed, Domain::Bench, 0));
    let counts = vec![1u64; cell.clients];
    let aggregator = cell.aggregator_config();
    aggregator.validate(cell.clients)?;
    let spec = ProjectionSpec {
        sparsity: cell.s,
        k_override: Some(cell.k),
        ..Default::default()
    };

    let mut full = Vec::with_capacity(repeats);
    let mut reduced = Vec::with_capacity(repeats);
    let mut phases = [0.0f64; 3];
    for i in 0..warmup + repeats {
        let start = Instant::now();
        server_aggregate(None, &aggregator, &updates, &counts)?;
        let t_full = start.elapsed().as_secs_f64();

        // Matrix construction is part of the projected server time.
        let start = Instant::now();
        let projection = build_projection::<f64>(&spec, cell.clients, cell.p, derive_seed(seed, Domain::Bench, 1 + i as u64))?;
        let out = server_aggregate(Some(&projection), &aggregator, &updates, &counts)?;
        let t_reduced = start.elapsed().as_secs_f64();

        if i >= warmup {
            full.push(t_full);
            reduced.push(t_reduced);
            phases[0] += out.timings.project;
            phases[1] += out.timings.aggregate;
            phases[2] += out.timings.reconstruct;
        }
    }
    let unprojected = Timing::of(&full);
    let projected = Timing::of(&reduced);
    let raw_ratio = unprojected.mean / projected.mean;
    let n = repeats as f64;
    Ok(CellReport {
        cell: cell.clone(),
        repeats,
        unprojected,
        projected,
        project_mean: phases[0] / n,
        aggregate_mean: phases[1] / n,
        reconstruct_mean: phases[2] / n,
        speedup: (!unprojected.unstable && !projected.unstable).then_some(raw_ratio),
        raw_ratio,
    })
}

/// Benchmarks every cell sequentially and fits log-log slopes over `p`.
pub fn run_benchmark(grid: &BenchGrid, repeats: usize) -> Result<BenchmarkReport> {
    let cells = grid
        .cells
        .iter()
        .map(|c| bench_cell(c, repeats, grid.warmup, grid.seed))
        .collect::<Result<Vec<_>>>()?;
    let slopes = fit_slopes(&cells);
    Ok(BenchmarkReport { cells, slopes })
}

fn fit_slopes(cells: &[CellReport]) -> Vec<SlopeFit> {
    let mut groups: Vec<(&BenchCell, Vec<&CellReport>)> = Vec::new();
    for report in cells {
        let c = &report.cell;
        match groups.iter_mut().find(|(g, _)| {
            g.clients == c.clients && g.k == c.k && g.s == c.s && g.aggregator == c.aggregator
        }) {
            Some((_, members)) => members.push(report),
            None => groups.push((c, vec![report])),
        }
    }
    let mut fits = Vec::new();
    for (key, members) in groups {
        let mut ps: Vec<usize> = members.iter().map(|r| r.cell.p).collect();
        ps.sort_unstable();
        ps.dedup();
        if ps.len() < 2 {
            continue;
        }
        for projected in [false, true] {
            let points: Vec<(f64, f64)> = members
                .iter()
                .map(|r| {
                    let t = if projected { r.projected.mean } else { r.unprojected.mean };
                    ((r.cell.p as f64).ln(), t.ln())
                })
                .collect();
            fits.push(SlopeFit {
                clients: key.clients,
                k: key.k,
                s: key.s,
                aggregator: key.aggregator,
                projected,
                slope: least_squares_slope(&points),
                points: points.len(),
            });
        }
    }
    fits
}

pub fn least_squares_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}
