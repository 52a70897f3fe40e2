//! End-to-end acceptance checks. Each test prints one PASS/FAIL line on the
//! real stderr, so the verdicts show up even when libtest captures output.

use std::io::Write;
use std::sync::Mutex;
use std::time::Instant;

use pdr::aggregation::{
    apply_weights, compute_weights, krum_scores, krum_weights, AggregatorConfig, AggregatorKind,
};
use pdr::attacks::{craft, AttackConfig, AttackKind};
use pdr::engine::{run_training, server_aggregate, EngineConfig};
use pdr::harness::benchmark::{bench_cell, BenchCell};
use pdr::harness::{run_experiment, simulate, ExperimentConfig};
use pdr::objectives::{FederatedTask, ScheduleKind, TaskKind, TaskSpec};
use pdr::projection::{build_projection, min_projection_dim, project_batch, ProjectionSpec, SparseProjection};
use pdr::rng::keyed_stream;
use pdr::vector::sq_dist;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Criteria run one at a time so the timing criterion has the machine alone.
static SERIAL: Mutex<()> = Mutex::new(());

fn verdict(n: u32, name: &str, pass: bool, detail: String) {
    let line = format!("criterion {n:>2} {name}: {} | {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "{line}");
}

fn gaussian_vec(rng: &mut ChaCha8Rng, p: usize, scale: f64) -> Vec<f64> {
    (0..p)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect()
}

#[test]
fn criterion_01_embedding_fidelity() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let (m, p, trials) = (50, 2000, 500u64);
    let k = min_projection_dim(m, 0.5, 0.01, None).unwrap();
    let mut rng = keyed_stream(1, 0);
    let vectors: Vec<Vec<f64>> = (0..m).map(|_| gaussian_vec(&mut rng, p, 1.0)).collect();
    let exact: Vec<f64> = (0..m)
        .flat_map(|i| (i + 1..m).map(move |j| (i, j)))
        .map(|(i, j)| sq_dist(&vectors[i], &vectors[j]))
        .collect();
    let mut failures = 0;
    let mut worst: f64 = 0.0;
    for seed in 0..trials {
        let proj = SparseProjection::<f64>::new(k, p, 8, 10_000 + seed).unwrap();
        let low = project_batch(&proj, &vectors).unwrap();
        let mut pair = 0;
        let mut bad = false;
        for i in 0..m {
            for j in i + 1..m {
                let r = sq_dist(&low[i], &low[j]) / exact[pair];
                worst = worst.max((r - 1.0).abs());
                bad |= !(0.5..=1.5).contains(&r);
                pair += 1;
            }
        }
        failures += bad as usize;
    }
    let rate = failures as f64 / trials as f64;
    let secs = start.elapsed().as_secs_f64();
    verdict(
        1,
        "embedding fidelity",
        rate <= 0.03 && secs < 120.0,
        format!("k={k}, failure rate {rate:.4} over {trials} matrices (limit 0.03), worst |ratio-1| {worst:.4}, {secs:.1}s (limit 120s)"),
    );
}

#[test]
fn criterion_02_simplex_and_hull() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let kinds = [
        AggregatorKind::Mean,
        AggregatorKind::Krum,
        AggregatorKind::BulyanSelect,
        AggregatorKind::GeometricMedian,
    ];
    let mut rng = keyed_stream(2, 0);
    let mut violations = Vec::new();
    let calls = 10_000;
    for call in 0..calls {
        let kind = kinds[call % 4];
        let m = rng.random_range(3..=12usize);
        let p = rng.random_range(1..=8usize);
        let f = match kind {
            AggregatorKind::Krum => rng.random_range(0..=m - 3),
            AggregatorKind::BulyanSelect => rng.random_range(0..=(m - 1) / 2),
            _ => rng.random_range(0..=m / 2),
        };
        let scale = 10f64.powf(rng.random_range(-3.0..3.0));
        let mut vectors: Vec<Vec<f64>> = (0..m).map(|_| gaussian_vec(&mut rng, p, scale)).collect();
        if rng.random_bool(0.2) {
            vectors[1] = vectors[0].clone();
        }
        let counts: Vec<u64> = (0..m).map(|_| rng.random_range(1..=10)).collect();
        let config = AggregatorConfig {
            weight_by_samples: rng.random_bool(0.5),
            ..AggregatorConfig::with_kind(kind, f)
        };
        let out = if rng.random_bool(0.5) {
            let spec = ProjectionSpec {
                k_override: Some(rng.random_range(1..=16)),
                sparsity: [1, 2, 3, 8][rng.random_range(0..4)],
                ..Default::default()
            };
            let proj = build_projection::<f64>(&spec, m, p, rng.random()).unwrap();
            server_aggregate(Some(&proj), &config, &vectors, &counts).unwrap()
        } else {
            server_aggregate(None, &config, &vectors, &counts).unwrap()
        };
        if let Err(e) = out.weights.validate() {
            violations.push(format!("call {call} {kind:?}: {e}"));
            continue;
        }
        for i in 0..p {
            let lo = vectors.iter().map(|v| v[i]).fold(f64::INFINITY, f64::min);
            let hi = vectors.iter().map(|v| v[i]).fold(f64::NEG_INFINITY, f64::max);
            let slack = 4.0 * m as f64 * f64::EPSILON * lo.abs().max(hi.abs());
            let a = out.aggregate[i];
            if !(a >= lo - slack && a <= hi + slack) {
                violations.push(format!("call {call} {kind:?}: coord {i} = {a} outside [{lo}, {hi}]"));
            }
        }
    }
    verdict(
        2,
        "simplex and convex hull",
        violations.is_empty(),
        format!("{calls} fuzzed calls, {} violations {:?}", violations.len(), violations.iter().take(3).collect::<Vec<_>>()),
    );
}

/// Brute-force Krum straight from the definition.
fn oracle_krum(vectors: &[Vec<f64>], f: usize) -> (Vec<f64>, usize) {
    let m = vectors.len();
    let mut scores = Vec::with_capacity(m);
    for i in 0..m {
        let mut d = Vec::new();
        for j in 0..m {
            if j != i {
                let mut s = 0.0;
                for c in 0..vectors[i].len() {
                    s += (vectors[i][c] - vectors[j][c]) * (vectors[i][c] - vectors[j][c]);
                }
                d.push(s);
            }
        }
        d.sort_by(|a, b| a.partial_cmp(b).unwrap());
        scores.push(d.iter().take(m - f - 2).sum::<f64>());
    }
    let best = (0..m).fold(0, |b, i| if scores[i] < scores[b] { i } else { b });
    (scores, best)
}

#[test]
fn criterion_03_krum_oracle() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let mut rng = keyed_stream(3, 0);
    let (mut mismatches, mut ties) = (0, 0);
    for instance in 0..1000 {
        let m = rng.random_range(3..=8usize);
        let p = rng.random_range(1..=4usize);
        let f = rng.random_range(0..=m - 3);
        let vectors: Vec<Vec<f64>> = (0..m)
            .map(|_| {
                (0..p)
                    .map(|_| if instance % 2 == 0 { rng.random_range(-2..=2) as f64 } else { rng.random_range(-5.0..5.0) })
                    .collect()
            })
            .collect();
        let (scores, best) = oracle_krum(&vectors, f);
        ties += (scores.iter().filter(|&&s| s == scores[best]).count() > 1) as usize;
        let weights = krum_weights(&vectors, f).unwrap();
        let mut expected = vec![0.0; m];
        expected[best] = 1.0;
        if krum_scores(&vectors, f).unwrap() != scores || weights.as_slice() != expected.as_slice() {
            mismatches += 1;
        }
    }
    verdict(
        3,
        "krum oracle equivalence",
        mismatches == 0,
        format!("1000 instances, {ties} with tied minimum scores, {mismatches} mismatches"),
    );
}

#[test]
fn criterion_04_robustness_floor() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let (m, p, b, trials) = (20usize, 200usize, 0.3, 20u64);
    let nb = (b * m as f64) as usize;
    let magnitudes = [1.0, 1e2, 1e4, 1e6];
    let k = min_projection_dim(m, 0.5, 0.01, None).unwrap();
    let kinds = [
        AggregatorKind::Krum,
        AggregatorKind::BulyanSelect,
        AggregatorKind::GeometricMedian,
        AggregatorKind::Mean,
    ];
    // err[kind][magnitude], averaged over trials with common random numbers.
    let mut err = [[0.0f64; 4]; 4];
    let mut nu_sq = 0.0;
    for trial in 0..trials {
        let mut rng = keyed_stream(4, trial);
        let center = gaussian_vec(&mut rng, p, 3.0);
        let honest: Vec<Vec<f64>> = (0..m - nb)
            .map(|_| gaussian_vec(&mut rng, p, 1.0).iter().zip(&center).map(|(z, c)| c + z).collect())
            .collect();
        let directions: Vec<Vec<f64>> = (0..nb).map(|_| gaussian_vec(&mut rng, p, 1.0)).collect();
        let honest_mean = pdr::vector::mean(&honest).unwrap();
        nu_sq += (0..honest.len())
            .flat_map(|i| (0..honest.len()).map(move |j| (i, j)))
            .map(|(i, j)| sq_dist(&honest[i], &honest[j]))
            .fold(0.0, f64::max)
            / trials as f64;
        let spec = ProjectionSpec {
            k_override: Some(k),
            ..Default::default()
        };
        let proj = build_projection::<f64>(&spec, m, p, 40 + trial).unwrap();
        for (mi, &mag) in magnitudes.iter().enumerate() {
            let mut updates = honest.clone();
            updates.extend(directions.iter().map(|d| d.iter().zip(&center).map(|(z, c)| c + mag * z).collect::<Vec<_>>()));
            for (ki, &kind) in kinds.iter().enumerate() {
                let config = AggregatorConfig::with_kind(kind, nb);
                let out = server_aggregate(Some(&proj), &config, &updates, &vec![1; m]).unwrap();
                err[ki][mi] += sq_dist(&out.aggregate, &honest_mean) / trials as f64;
            }
        }
    }
    let bound = 10.0 * b * nu_sq;
    let mut pass = true;
    let mut detail = format!("nu^2={nu_sq:.1}, bound 10*b*nu^2={bound:.1};");
    for (ki, kind) in kinds.iter().enumerate().take(3) {
        let e = err[ki];
        let bounded = e.iter().all(|&x| x <= bound);
        // Magnitude independence once the attackers stand out from the honest cloud.
        let tail = &e[1..];
        let spread = tail.iter().cloned().fold(0.0, f64::max) / tail.iter().cloned().fold(f64::INFINITY, f64::min);
        let flat = spread <= 2.0;
        pass &= bounded && flat;
        detail += &format!(" {}: {:?} max/min(1e2..1e6)={spread:.2};", kind.name(), e.map(|x| (x * 100.0).round() / 100.0));
    }
    let mean = err[3];
    let growth: Vec<f64> = (1..4).map(|i| mean[i] / mean[i - 1]).collect();
    let quadratic = growth[1..].iter().all(|&g| (0.5e4..=2e4).contains(&g));
    pass &= quadratic;
    detail += &format!(" mean: {:?} growth per 100x {:?}", mean.map(|x| format!("{x:.3e}")), growth.iter().map(|g| format!("{g:.3e}")).collect::<Vec<_>>());
    verdict(4, "robustness floor", pass, detail);
}

#[test]
fn criterion_05_strongly_convex_rate() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let rounds = 200u64;

    // Honest, noise-free, decaying schedule with L = mu = 1: every step is
    // w <- w - 2/(t+4) (w - w*), so dist_t = d0 (6 / ((t+3)(t+4)))^2.
    let task = FederatedTask::<f64>::new(&TaskSpec::quadratic(20, 10), 55).unwrap();
    let mut config = EngineConfig::new(rounds, 5);
    config.aggregator = AggregatorConfig::with_kind(AggregatorKind::Mean, 0);
    config.schedule = ScheduleKind::DecayingStronglyConvex;
    let out = run_training(&task, &config).unwrap();
    let d0 = out.summary.initial_dist_sq.unwrap();
    let max_dev = out
        .records
        .iter()
        .map(|r| {
            let t = r.t as f64;
            let closed = d0 * (6.0 / ((t + 3.0) * (t + 4.0))).powi(2);
            (r.dist_sq_to_optimum.unwrap() - closed).abs()
        })
        .fold(0.0, f64::max);
    let exact = out.records.len() == rounds as usize && max_dev <= 1e-9;

    // Attacked: gaussian, b = 0.1, sigma = 0.1, PDR + geometric median.
    let (sigma, kappa, b, mu, eps, c) = (0.1, 0.1, 0.1, 1.0, 0.5, 10.0);
    let attacked = ExperimentConfig::from_json(&format!(
        r#"{{"task": {{"p": 100, "M": 20, "noise_sigma": {sigma}, "hetero_kappa": {kappa}}},
            "aggregator": {{"kind": "geometric_median"}}, "attack": {{"kind": "gaussian"}},
            "byzantine_ratio": {b}, "rounds": {rounds}, "repeats": 20, "master_seed": 11}}"#
    ))
    .unwrap();
    let (records, summary) = simulate(&attacked).unwrap();
    let mut mean_curve = vec![0.0; rounds as usize];
    for line in &records {
        mean_curve[line.record.t as usize] += line.record.dist_sq_to_optimum.unwrap() / 20.0;
    }
    let plateau = mean_curve[150..].iter().sum::<f64>() / 50.0;
    // Least-squares fit of dist_t = C1 / (t+1) + floor over the second half.
    let pts: Vec<(f64, f64)> = (100..rounds as usize).map(|t| (1.0 / (t as f64 + 1.0), mean_curve[t])).collect();
    let slope = pdr::harness::benchmark::least_squares_slope(&pts);
    let n = pts.len() as f64;
    let fitted_floor = pts.iter().map(|p| p.1).sum::<f64>() / n - slope * pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ratio = (1.0 + eps) / (1.0 - eps);
    let bound = 8.0 / (mu * mu) * (4.0 * c * b * ratio * (sigma * sigma + 2.0 * kappa * kappa) + 2.0 * (sigma * sigma + kappa * kappa));
    let floor_ok = plateau <= bound && fitted_floor <= bound && summary.aborts.is_empty();
    let secs = start.elapsed().as_secs_f64();
    verdict(
        5,
        "strongly convex rate",
        exact && floor_ok && secs < 300.0,
        format!(
            "honest max |dist - closed form| {max_dev:.2e} (limit 1e-9); attacked plateau {plateau:.3e}, fitted floor {fitted_floor:.3e}, bound {bound:.3}, d0 {:.1}; {secs:.1}s (limit 300s)",
            summary.per_repeat[0].initial_dist_sq.unwrap()
        ),
    );
}

#[test]
fn criterion_06_nonconvex_trend() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let spec = TaskSpec {
        task_kind: TaskKind::NonconvexToy,
        ..TaskSpec::quadratic(20, 10)
    };
    let run = |seed: u64, rounds: u64| {
        let task = FederatedTask::<f64>::new(&spec, seed).unwrap();
        let mut config = EngineConfig::new(rounds, seed);
        config.aggregator = AggregatorConfig::with_kind(AggregatorKind::Mean, 0);
        config.schedule = ScheduleKind::ConstantNonconvex;
        run_training(&task, &config).unwrap().summary.min_grad_norm_sq
    };
    let mut ratios = Vec::new();
    for seed in 0..10 {
        ratios.push(run(seed, 400) / run(seed, 100));
    }
    let worst = ratios.iter().cloned().fold(0.0, f64::max);
    verdict(
        6,
        "nonconvex trend",
        worst <= 0.5,
        format!("min grad norm^2 ratio T=400 / T=100 per seed {:?}, worst {worst:.3e} (limit 0.5)", ratios.iter().map(|r| format!("{r:.2e}")).collect::<Vec<_>>()),
    );
}

#[test]
fn criterion_07_speedup() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let mut detail = String::new();
    let mut pass = true;
    for (kind, floor) in [(AggregatorKind::Krum, 5.0), (AggregatorKind::GeometricMedian, 3.0)] {
        let cell = BenchCell {
            p: 1_000_000,
            clients: 50,
            k: 4096,
            s: 8,
            aggregator: kind,
            f: None,
            weiszfeld_max_iters: 50,
        };
        let r = bench_cell(&cell, 10, 1, 7).unwrap();
        pass &= r.raw_ratio >= floor;
        detail += &format!(
            "{}: full {:.3}s (cv {:.2}) vs projected {:.3}s (cv {:.2}; project {:.3}s aggregate {:.3}s reconstruct {:.3}s), ratio {:.3} (floor {floor}{}); ",
            kind.name(),
            r.unprojected.mean,
            r.unprojected.cv,
            r.projected.mean,
            r.projected.cv,
            r.project_mean,
            r.aggregate_mean,
            r.reconstruct_mean,
            r.raw_ratio,
            if r.speedup.is_none() { ", unstable" } else { "" },
        );
    }
    verdict(7, "speedup", pass, detail);
}

/// Krum selections with and without projection over `rounds` rounds of one
/// separated instance. `hetero` gives honest clients distinct noise levels.
fn selection_agreement(seed: u64, rounds: u64, hetero: bool) -> (usize, usize) {
    let (m, f, p) = (10usize, 2usize, 1000usize);
    let k = min_projection_dim(m, 0.5, 0.01, None).unwrap();
    let mut rng = keyed_stream(8, seed);
    let center = gaussian_vec(&mut rng, p, 1.0);
    let direction = gaussian_vec(&mut rng, p, 1.0);
    let norm = direction.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut agree = 0;
    for round in 0..rounds {
        let mut rng = keyed_stream(80 + seed, round);
        let mut updates: Vec<Vec<f64>> = (0..m)
            .map(|c| {
                let scale = if hetero { 1.0 + 0.25 * c as f64 } else { 1.0 };
                gaussian_vec(&mut rng, p, scale).iter().zip(&center).map(|(z, c)| c + z).collect()
            })
            .collect();
        let honest = &updates[..m - f];
        let mean = pdr::vector::mean(honest).unwrap();
        let spread = honest.iter().map(|h| sq_dist(h, &mean).sqrt()).fold(0.0, f64::max);
        for u in updates[m - f..].iter_mut() {
            for (x, d) in u.iter_mut().zip(&direction) {
                *x += 10.0 * spread * d / norm;
            }
        }
        let proj = SparseProjection::<f64>::new(k, p, 8, seed * 1000 + round).unwrap();
        let low = project_batch(&proj, &updates).unwrap();
        agree += (krum_weights(&low, f).unwrap() == krum_weights(&updates, f).unwrap()) as usize;
    }
    (agree, rounds as usize)
}

#[test]
fn criterion_08_selection_agreement() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let (mut agree, mut total, mut iid_agree, mut iid_total) = (0, 0, 0, 0);
    for seed in 0..100 {
        let (a, t) = selection_agreement(seed, 5, true);
        agree += a;
        total += t;
        let (a, t) = selection_agreement(seed, 1, false);
        iid_agree += a;
        iid_total += t;
    }
    verdict(
        8,
        "projection selection agreement",
        agree == total,
        format!("heterogeneous honest noise: {agree}/{total} rounds agree; iid honest noise (informational): {iid_agree}/{iid_total}"),
    );
}

#[test]
fn criterion_09_attack_formulas() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let mut rng = keyed_stream(9, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.random_range(1..=12usize);
        let p = rng.random_range(1..=16usize);
        let benign: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
        let mut sum = vec![0.0; p];
        for g in &benign {
            for i in 0..p {
                sum[i] += g[i];
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std: Vec<f64> = (0..p)
            .map(|i| (benign.iter().map(|g| (g[i] - mean[i]).powi(2)).sum::<f64>() / n as f64).sqrt())
            .collect();
        let expected = [
            (AttackKind::SignFlip, sum.iter().map(|s| -3.0 * s).collect::<Vec<_>>()),
            (AttackKind::Lie, (0..p).map(|i| mean[i] + 0.7 * std[i]).collect()),
            (AttackKind::Foe, sum.iter().map(|s| -0.1 * s / n as f64).collect()),
        ];
        for (kind, want) in expected {
            let got = craft(&AttackConfig::of_kind(kind), &benign, p, &[n, n + 1], 0).unwrap();
            for v in &got {
                for i in 0..p {
                    worst = worst.max((v[i] - want[i]).abs() / want[i].abs().max(1.0));
                }
            }
        }
    }
    let config = AttackConfig {
        seed: Some(99),
        ..AttackConfig::of_kind(AttackKind::Gaussian)
    };
    let clients: Vec<usize> = (0..10).collect();
    let samples = craft::<f64>(&config, &[], 10_000, &clients, 0).unwrap();
    let all: Vec<f64> = samples.into_iter().flatten().collect();
    let mean = all.iter().sum::<f64>() / all.len() as f64;
    let var = all.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (all.len() - 1) as f64;
    let rel = (var / 90.0 - 1.0).abs();
    verdict(
        9,
        "attack formula conformance",
        worst <= 1e-12 && rel <= 0.05,
        format!("worst relative deviation {worst:.2e} (limit 1e-12); gaussian pooled variance {var:.3} over {} samples ({:.2}% from 90, limit 5%)", all.len(), rel * 100.0),
    );
}

#[test]
fn criterion_10_determinism() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let config = ExperimentConfig::from_json(
        r#"{"task": {"p": 64, "M": 12, "noise_sigma": 0.3, "sample_counts": [1,2,3,4,5,6,7,8,9,10,11,12]},
            "aggregator": {"kind": "geometric_median"}, "attack": {"kind": "lie"},
            "byzantine_ratio": 0.25, "rounds": 25, "repeats": 3, "master_seed": 2024}"#,
    )
    .unwrap();
    let strip = |dir: &std::path::Path| -> String {
        std::fs::read_to_string(dir.join("records.jsonl"))
            .unwrap()
            .lines()
            .map(|l| {
                let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
                v.as_object_mut().unwrap().retain(|k, _| !k.starts_with("wall_time"));
                v.to_string() + "\n"
            })
            .collect()
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_experiment(&config, a.path()).unwrap();
    run_experiment(&config, b.path()).unwrap();
    let (ra, rb) = (strip(a.path()), strip(b.path()));
    let identical = ra == rb && !ra.is_empty();
    verdict(
        10,
        "end-to-end determinism",
        identical,
        format!("{} record lines, {} bytes without timing fields, identical: {identical}", ra.lines().count(), ra.len()),
    );
}

#[test]
fn mean_weights_follow_sample_counts() {
    // Guard for the weighted mean used by criteria 5 and 6.
    let w = compute_weights(&AggregatorConfig::with_kind(AggregatorKind::Mean, 0), &[vec![0.0], vec![1.0]], &[1, 3]).unwrap();
    assert_eq!(w.as_slice(), &[0.25, 0.75]);
    assert_eq!(apply_weights(&w, &[vec![0.0], vec![1.0]]).unwrap(), vec![0.75]);
}
