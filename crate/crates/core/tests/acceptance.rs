//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

mod common;

use std::collections::BTreeSet;
use std::net::TcpListener;
use std::panic::{self, AssertUnwindSafe};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, SymmetricEigen};

use common::*;
use splitglm::block::BlockCursor;
use splitglm::data::{load_shard_dir, partition_features, repartition, Dataset};
use splitglm::driver::{outer_step, IterationStats, ModelState};
use splitglm::eval::{auprc, nnz, reference_fit, DenseProblem};
use splitglm::glm::compute_working_set;
use splitglm::runtime::{spawn_spmd, TcpConfig, TcpTransport};
use splitglm::{fit, LossKind, SolveMode, SolverConfig, Transport};

const LOSSES: [LossKind; 3] = [LossKind::Squared, LossKind::Logistic, LossKind::Probit];
const LAMBDAS: [f64; 3] = [0.0, 0.1, 1.0];

/// Every objective trace produced by the suite, checked by criterion 3.
struct Traces(Mutex<Vec<(String, f64, Vec<f64>)>>);

impl Traces {
    fn add(&self, label: impl Into<String>, f_start: f64, history: &[IterationStats]) {
        let f = history.iter().map(|s| s.objective).collect();
        self.0.lock().unwrap().push((label.into(), f_start, f));
    }
}

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

struct Case {
    seed: u64,
    loss: LossKind,
    l1: f64,
    l2: f64,
    data: Dataset,
}

/// 20 of the 27 (l1, l2, loss) combinations, spread so every loss is
/// also run unpenalized.
fn oracle_cases() -> Vec<Case> {
    (0..20)
        .map(|k| {
            let c = k * 27 / 20;
            let (l1, l2, loss) = (LAMBDAS[c / 9], LAMBDAS[c / 3 % 3], LOSSES[c % 3]);
            let seed = 1000 + k as u64;
            let data = if l1 == 0.0 && l2 == 0.0 {
                // unpenalized: keep n >> p so the optimum exists
                random_problem(seed, 200, 10, 0.5, loss)
            } else {
                let p = 20 + (k * 7) % 41;
                let n = 120 + (k * 13) % 81;
                random_problem(seed, n, p, 0.15, loss)
            };
            Case { seed, loss, l1, l2, data }
        })
        .collect()
}

fn tight_config(loss: LossKind, l1: f64, l2: f64) -> SolverConfig {
    let mut cfg = SolverConfig::new(loss, l1, l2);
    cfg.tol = 1e-14;
    cfg.max_outer = 20_000;
    cfg
}

fn rel_err(f: f64, reference: f64) -> f64 {
    (f - reference).abs() / reference.abs()
}

fn criterion_1(cases: &[Case], traces: &Traces) -> Verdict {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for c in cases {
        let cfg = tight_config(c.loss, c.l1, c.l2);
        let run = match fit_spmd(&c.data, &cfg, 1, 0) {
            Ok(r) => r,
            Err(e) => {
                failures.push(format!("seed {}: {e}", c.seed));
                continue;
            }
        };
        traces.add(format!("c1 seed {}", c.seed), initial_objective(&c.data, &cfg), run.history());
        let reference = reference(&c.data, &cfg, 1e-10);
        let err = rel_err(run.objective(), reference.objective);
        worst = worst.max(err);
        if !(err <= 1e-6) {
            failures.push(format!("seed {} {} l1={} l2={}: {err:e}", c.seed, c.loss, c.l1, c.l2));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        failures.is_empty() && secs < 30.0,
        format!(
            "{}/{} within 1e-6, worst rel err {worst:.2e}, {secs:.1} s (limit 30 s){}",
            cases.len() - failures.len(),
            cases.len(),
            if failures.is_empty() { String::new() } else { format!("; {}", failures.join("; ")) }
        ),
    )
}

fn criterion_2(cases: &[Case], traces: &Traces) -> Verdict {
    let start = Instant::now();
    let mut worst_f = 0.0f64;
    let mut worst_beta = 0.0f64;
    let mut runs = 0;
    let mut failures = Vec::new();
    for c in cases.iter().filter(|c| c.l2 >= 0.1) {
        let cfg = tight_config(c.loss, c.l1, c.l2);
        let base = fit_spmd(&c.data, &cfg, 1, 0).expect("M=1 run");
        for m in [2, 4, 8] {
            runs += 1;
            let run = match fit_spmd(&c.data, &cfg, m, c.seed) {
                Ok(r) => r,
                Err(e) => {
                    failures.push(format!("seed {} M={m}: {e}", c.seed));
                    continue;
                }
            };
            traces.add(format!("c2 seed {} M={m}", c.seed), initial_objective(&c.data, &cfg), run.history());
            let df = rel_err(run.objective(), base.objective());
            let db = max_abs_diff(&run.beta, &base.beta);
            worst_f = worst_f.max(df);
            worst_beta = worst_beta.max(db);
            if !(df <= 1e-6 && db <= 1e-4) {
                failures.push(format!("seed {} M={m}: df={df:e} dbeta={db:e}", c.seed));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        failures.is_empty() && secs < 120.0,
        format!(
            "{runs} runs, worst rel df {worst_f:.2e}, worst |dbeta|inf {worst_beta:.2e}, {secs:.1} s (limit 120 s){}",
            if failures.is_empty() { String::new() } else { format!("; {}", failures.join("; ")) }
        ),
    )
}

fn criterion_3(traces: &Traces) -> Verdict {
    let traces = traces.0.lock().unwrap();
    let mut iterations = 0;
    let mut violations = Vec::new();
    for (label, f_start, f) in traces.iter() {
        let mut prev = *f_start;
        for (k, &next) in f.iter().enumerate() {
            iterations += 1;
            if next > prev + 1e-12 * (1.0 + prev.abs()) {
                violations.push(format!("{label} iteration {}: {prev} -> {next}", k + 1));
            }
            prev = next;
        }
    }
    verdict(
        violations.is_empty() && iterations > 0,
        format!(
            "{} runs, {iterations} iterations, {} violations{}",
            traces.len(),
            violations.len(),
            violations.first().map(|v| format!("; first: {v}")).unwrap_or_default()
        ),
    )
}

fn dense_x(data: &Dataset) -> DMatrix<f64> {
    let d = DenseProblem::from_dataset(data);
    DMatrix::from_row_slice(d.n, d.p, &d.x)
}

/// Outer iterations with `mu` pinned at the large-mu level computed by a
/// dense eigen oracle at every iterate. Returns (iterations, full steps).
fn large_mu_run(data: &Dataset, loss: LossKind, nodes: usize, seed: u64, traces: &Traces) -> (usize, usize) {
    let p = data.num_features();
    let x = dense_x(data);
    let mut cfg = SolverConfig::new(loss, 0.05, 0.0);
    cfg.mu_adaptive = false;
    cfg.gamma = 0.0;
    let spec = partition_features(&(0..p).collect::<Vec<_>>(), nodes, seed).unwrap();
    let shards = data.shards(&spec).unwrap();
    // global curvature bound of L (+ nu I), valid along every segment
    let gram = x.transpose() * &x;
    let big = SymmetricEigen::new(gram * loss.hess_bound() + DMatrix::identity(p, p) * cfg.nu)
        .eigenvalues
        .max();
    let sets = spec.sets.clone();
    let histories = spawn_spmd(nodes, |t| {
        let shard = &shards[t.rank()];
        let mut state = ModelState::new(shard.len(), shard.n(), 1.0);
        let mut cursor = BlockCursor::default();
        let started = Instant::now();
        let mut history = Vec::new();
        for iteration in 1..=40 {
            let ws = compute_working_set(loss, &data.labels, &state.margins)?;
            let small = sets
                .iter()
                .filter(|s| !s.is_empty())
                .map(|s| {
                    let block = DMatrix::from_fn(s.len(), s.len(), |a, b| {
                        let h: f64 = (0..data.n()).map(|i| ws.w[i] * x[(i, s[a])] * x[(i, s[b])]).sum();
                        h + if a == b { cfg.nu } else { 0.0 }
                    });
                    SymmetricEigen::new(block).eigenvalues.min()
                })
                .fold(f64::INFINITY, f64::min);
            state.mu = (big / ((1.0 - cfg.sigma) * small)).max(1.0);
            let out = outer_step(&mut state, shard, &cfg, t, &mut cursor, iteration, Duration::ZERO, started)?;
            let small_change = (out.objective_before - out.stats.objective).abs() <= 1e-10 * (1.0 + out.stats.objective.abs());
            history.push(out.stats);
            if out.converged || small_change {
                break;
            }
        }
        Ok(history)
    })
    .expect("large-mu run");
    let history = &histories[0];
    let cfg_start = SolverConfig::new(loss, 0.05, 0.0);
    traces.add(format!("c4 {loss} seed {seed}"), initial_objective(data, &cfg_start), history);
    (history.len(), history.iter().filter(|s| s.alpha == 1.0).count())
}

fn criterion_4(traces: &Traces) -> Verdict {
    let start = Instant::now();
    let (mut iterations, mut full) = (0, 0);
    for k in 0..10u64 {
        let loss = if k < 5 { LossKind::Squared } else { LossKind::Logistic };
        let p = 8 + (k as usize * 3) % 13;
        let data = dense_problem(4000 + k, 40, p, loss);
        let (it, f) = large_mu_run(&data, loss, 2 + k as usize % 3, k, traces);
        iterations += it;
        full += f;
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        iterations > 0 && full == iterations && secs < 10.0,
        format!("alpha = 1 on {full}/{iterations} iterations over 10 problems, {secs:.1} s (limit 10 s)"),
    )
}

/// 10 latent factors, 5 noisy copies each.
fn correlated_problem(seed: u64, n: usize) -> Dataset {
    let mut r = rng(seed);
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let factors: Vec<f64> = (0..10).map(|_| normal(&mut r)).collect();
        let row: Vec<(usize, f64)> = (0..50).map(|j| (j, factors[j / 5] + 0.1 * normal(&mut r))).collect();
        let m = 2.0 * factors[0] - 1.5 * factors[1] + 1.0 * factors[2] - 0.5 * factors[3];
        labels.push(if m + normal(&mut r) > 0.0 { 1.0 } else { -1.0 });
        rows.push(row);
    }
    Dataset::from_rows(labels, rows, 50).unwrap()
}

fn support(beta: &[f64]) -> BTreeSet<usize> {
    beta.iter().enumerate().filter(|(_, b)| **b != 0.0).map(|(j, _)| j).collect()
}

fn criterion_5(traces: &Traces) -> Verdict {
    let data = correlated_problem(55, 200);
    let dense = DenseProblem::from_dataset(&data);
    let g0: Vec<f64> = data.labels.iter().map(|y| -0.5 * y).collect();
    let lambda_max = (0..50)
        .map(|j| (0..200).map(|i| dense.get(i, j) * g0[i]).sum::<f64>().abs())
        .fold(0.0, f64::max);

    let mut chosen = None;
    let mut t = 0.6;
    while t > 1e-3 {
        let pen = splitglm::ElasticNetPenalty::new(lambda_max * t, 0.0).unwrap();
        let sol = reference_fit(&dense, LossKind::Logistic, &pen, 1e-10).expect("reference");
        let k = nnz(&sol.beta);
        if k >= 6 {
            chosen = Some((lambda_max * t, sol));
            break;
        }
        t *= 0.85;
    }
    let Some((l1, reference)) = chosen else {
        return verdict(false, "could not tune lambda1 to a support of 6 or more");
    };
    let ref_support = support(&reference.beta);

    let mut cfg = SolverConfig::new(LossKind::Logistic, l1, 0.0);
    cfg.tol = 1e-12;
    cfg.max_outer = 5000;
    let adaptive = fit_spmd(&data, &cfg, 8, 3).expect("adaptive run");
    traces.add("c5 adaptive", initial_objective(&data, &cfg), adaptive.history());
    let mut fixed_cfg = cfg.clone();
    fixed_cfg.mu_adaptive = false;
    let fixed = fit_spmd(&data, &fixed_cfg, 8, 3).expect("mu = 1 run");
    traces.add("c5 mu=1", initial_objective(&data, &fixed_cfg), fixed.history());

    let adaptive_diff = support(&adaptive.beta).symmetric_difference(&ref_support).count();
    let fixed_diff = support(&fixed.beta).symmetric_difference(&ref_support).count();
    let max_mu = adaptive.history().iter().map(|s| s.mu).fold(1.0, f64::max);
    verdict(
        adaptive_diff <= 2,
        format!(
            "lambda1={l1:.4}, reference support {}, adaptive support {} (differs by {adaptive_diff}, max mu {max_mu}), \
             mu=1 support {} (differs by {fixed_diff}), {} vs {} iterations",
            ref_support.len(),
            nnz(&adaptive.beta),
            nnz(&fixed.beta),
            adaptive.history().len(),
            fixed.history().len()
        ),
    )
}

fn criterion_6() -> Verdict {
    let start = Instant::now();
    let mut worst_logistic = 0.0f64;
    let mut worst_probit = 0.0f64;
    let mut fd_failures = 0;
    let mut checked = 0;
    for y in [1.0, -1.0] {
        for k in 0..=200_000 {
            let t = -50.0 + 100.0 * k as f64 / 200_000.0;
            worst_logistic = worst_logistic.max(LossKind::Logistic.eval(y, t).unwrap().hess);
            worst_probit = worst_probit.max(LossKind::Probit.eval(y, t).unwrap().hess);
        }
    }
    let h = 1e-4;
    for loss in LOSSES {
        let labels = if loss == LossKind::Squared { [1.3, -0.4] } else { [1.0, -1.0] };
        for y in labels {
            for k in 0..=2000 {
                let t = -10.0 + 20.0 * k as f64 / 2000.0;
                let e = loss.eval(y, t).unwrap();
                let (lo, hi) = (loss.eval(y, t - h).unwrap(), loss.eval(y, t + h).unwrap());
                let fd_grad = (hi.value - lo.value) / (2.0 * h);
                let fd_hess = (hi.grad - lo.grad) / (2.0 * h);
                checked += 1;
                if (e.grad - fd_grad).abs() > 1e-6 * (1.0 + e.grad.abs())
                    || (e.hess - fd_hess).abs() > 1e-6 * (1.0 + e.hess.abs())
                {
                    fd_failures += 1;
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst_logistic <= 0.25 + 1e-12 && worst_probit <= 3.0 && fd_failures == 0 && secs < 5.0,
        format!(
            "max logistic hess {worst_logistic:.15}, max probit hess {worst_probit:.6} (bound 3.0), \
             {fd_failures}/{checked} finite-difference mismatches, {secs:.2} s (limit 5 s)"
        ),
    )
}

fn criterion_7() -> Verdict {
    let n = 150;
    let data = random_problem(77, n, 40, 0.2, LossKind::Logistic);
    let cfg = SolverConfig::new(LossKind::Logistic, 0.3, 0.0);
    let m = 3;
    let spec = partition_features(&(0..40).collect::<Vec<_>>(), m, 1).unwrap();
    let shards = Arc::new(data.shards(&spec).unwrap());
    let listeners: Vec<TcpListener> = (0..m).map(|_| TcpListener::bind("127.0.0.1:0").unwrap()).collect();
    let peers: Vec<String> = listeners.iter().map(|l| l.local_addr().unwrap().to_string()).collect();
    let handles: Vec<_> = listeners
        .into_iter()
        .enumerate()
        .map(|(rank, listener)| {
            let cfg = cfg.clone();
            let shards = shards.clone();
            let tcp = TcpConfig::new(rank, peers.clone());
            thread::spawn(move || {
                let mut t = TcpTransport::connect_with_listener(&tcp, listener)?;
                let res = fit(&shards[rank], &cfg, &mut t)?;
                Ok::<_, splitglm::Error>((res, t.stats()))
            })
        })
        .collect();
    // slots per iteration: 4 model scalars, grid minus one, backtracks + 1, nnz
    let slot_bound = (4 + cfg.alpha_grid_size - 1 + cfg.max_backtracks + 1 + 1) as u64;
    let mut lines = Vec::new();
    let mut pass = true;
    for (rank, h) in handles.into_iter().enumerate() {
        let (res, stats) = match h.join().unwrap() {
            Ok(v) => v,
            Err(e) => return verdict(false, format!("rank {rank}: {e}")),
        };
        let iters = res.history.len() as u64;
        let ok = iters > 0
            && stats.vector_reduces == iters
            && stats.vector_payload_bytes == 8 * n as u64 * iters
            && stats.scalar_reduces <= 4 * iters
            && stats.scalar_payload_bytes <= 8 * slot_bound * iters
            && res.history.iter().all(|s| s.reduce_bytes >= 8 * n as u64);
        pass &= ok;
        lines.push(format!(
            "rank {rank}: {iters} iterations, {} vector reduces ({} B = 8n per reduce), {} scalar reduces ({} B)",
            stats.vector_reduces, stats.vector_payload_bytes, stats.scalar_reduces, stats.scalar_payload_bytes
        ));
    }
    verdict(pass, lines.join("; "))
}

fn criterion_8(traces: &Traces) -> Verdict {
    let start = Instant::now();
    let data = random_problem(88, 200, 40, 0.15, LossKind::Logistic);
    let mut cfg = SolverConfig::new(LossKind::Logistic, 0.5, 0.0);
    cfg.tol = 1e-10;
    cfg.max_outer = 2000;
    let slow_rank = 1;
    let delay = |r: usize| {
        if r == slow_rank {
            Duration::from_micros(1000)
        } else {
            Duration::from_micros(100)
        }
    };

    let t0 = Instant::now();
    let bsp = fit_spmd_delayed(&data, &cfg, 4, 6, delay).expect("bsp run");
    let bsp_secs = t0.elapsed().as_secs_f64();
    traces.add("c8 bsp", initial_objective(&data, &cfg), bsp.history());

    let mut alb_cfg = cfg.clone();
    alb_cfg.mode = SolveMode::Alb;
    let t0 = Instant::now();
    let alb = fit_spmd_delayed(&data, &alb_cfg, 4, 6, delay).expect("alb run");
    let alb_secs = t0.elapsed().as_secs_f64();
    traces.add("c8 alb", initial_objective(&data, &alb_cfg), alb.history());

    let width = alb.results[slow_rank].feature_ids.len();
    let slow = &alb.results[slow_rank].history;
    let cut_short = slow.iter().filter(|s| s.coordinates_visited < width).count();
    let rel = rel_err(alb.objective(), bsp.objective());
    let secs = start.elapsed().as_secs_f64();
    verdict(
        alb.results[0].converged && rel <= 1e-4 && alb_secs < bsp_secs && cut_short > 0 && secs < 120.0,
        format!(
            "ALB {alb_secs:.2} s / {} iterations vs BSP {bsp_secs:.2} s / {} iterations; slow rank cut short in {cut_short}/{} \
             iterations; rel objective gap {rel:.2e}; {secs:.1} s total (limit 120 s)",
            alb.history().len(),
            bsp.history().len(),
            slow.len()
        ),
    )
}

/// Precision at every distinct threshold by explicit set counting.
fn brute_auprc(scores: &[f64], labels: &[f64]) -> f64 {
    let positives = labels.iter().filter(|&&y| y > 0.0).count() as f64;
    let mut thresholds = scores.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let mut area = 0.0;
    let mut prev = 0.0;
    for a in thresholds {
        let selected: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] >= a).collect();
        let hits = selected.iter().filter(|&&i| labels[i] > 0.0).count() as f64;
        let recall = hits / positives;
        area += (recall - prev) * hits / selected.len() as f64;
        prev = recall;
    }
    area
}

fn criterion_9() -> Verdict {
    let mut r = rng(99);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        use rand::Rng;
        let n = r.gen_range(1..=50);
        let levels = r.gen_range(2..20);
        let scores: Vec<f64> = (0..n).map(|_| r.gen_range(0..levels) as f64 / levels as f64).collect();
        let mut labels: Vec<f64> = (0..n).map(|_| if r.gen_bool(0.4) { 1.0 } else { -1.0 }).collect();
        let k = r.gen_range(0..n);
        labels[k] = 1.0;
        let got = auprc(&scores, &labels).unwrap();
        worst = worst.max((got - brute_auprc(&scores, &labels)).abs());
    }
    let worked = auprc(&[0.9, 0.8, 0.7], &[1.0, -1.0, 1.0]).unwrap();
    verdict(
        worst <= 1e-12 && (worked - 5.0 / 6.0).abs() <= 1e-12,
        format!("1000 instances, worst |diff| {worst:.1e}; three-example case {worked:.12} (5/6)"),
    )
}

fn criterion_10() -> Verdict {
    let mut r = rng(1010);
    let mut matrices = 0;
    let mut mismatches = 0;
    for k in 0..20 {
        use rand::Rng;
        let (n, p) = if k == 0 { (50, 30) } else { (r.gen_range(0..60), r.gen_range(1..50)) };
        let rows: Vec<Vec<(usize, f64)>> = (0..n)
            .map(|_| {
                let mut row = Vec::new();
                for j in 0..p {
                    if r.gen_bool(0.2) {
                        let v = normal(&mut r) * 10f64.powi(r.gen_range(-8..8));
                        row.push((j, v));
                    }
                }
                row
            })
            .collect();
        let labels = (0..n).map(|_| normal(&mut r)).collect();
        let data = Dataset::from_rows(labels, rows, p).unwrap();
        let m = 1 + k % 6;
        let spec = partition_features(&(0..p).collect::<Vec<_>>(), m, k as u64 * 31).unwrap();
        let dir = tempfile::tempdir().unwrap();
        repartition(&data, &spec, dir.path()).unwrap();
        let mut back = vec![vec![0u64; p]; n];
        for node in 0..m {
            let (_, shard) = load_shard_dir(dir.path(), node).unwrap();
            for (j, col) in shard.columns() {
                for (i, v) in col.iter() {
                    back[i][j] = v.to_bits();
                }
            }
        }
        matrices += 1;
        for (i, row) in data.rows.iter().enumerate() {
            let mut want = vec![0u64; p];
            for &(j, v) in row {
                want[j] = v.to_bits();
            }
            if want != back[i] {
                mismatches += 1;
            }
        }
    }
    let mut partitions = 0;
    let mut bad_partitions = 0;
    for p in [0, 1, 2, 7, 64, 500] {
        for m in [1, 2, 3, 8, 16] {
            for seed in [0, 1, 42, u64::MAX] {
                partitions += 1;
                let spec = partition_features(&(0..p).collect::<Vec<_>>(), m, seed).unwrap();
                let mut all: Vec<usize> = spec.sets.concat();
                all.sort_unstable();
                if all != (0..p).collect::<Vec<_>>() {
                    bad_partitions += 1;
                }
            }
        }
    }
    verdict(
        mismatches == 0 && bad_partitions == 0,
        format!(
            "{matrices} matrices reassembled with {mismatches} mismatched rows; \
             {partitions} (p, M, seed) partitions, {bad_partitions} not disjoint/exhaustive"
        ),
    )
}

fn main() {
    let traces = Traces(Mutex::new(Vec::new()));
    let cases = oracle_cases();
    let criteria: Vec<(&str, Box<dyn Fn() -> Verdict + '_>)> = vec![
        ("Oracle equivalence, M=1", Box::new(|| criterion_1(&cases, &traces))),
        ("Worker-count invariance", Box::new(|| criterion_2(&cases, &traces))),
        ("Large-mu full steps", Box::new(|| criterion_4(&traces))),
        ("Adaptive-mu sparsity", Box::new(|| criterion_5(&traces))),
        ("Loss curvature bounds", Box::new(criterion_6)),
        ("Communication accounting", Box::new(criterion_7)),
        ("Load-balanced liveness and quality", Box::new(|| criterion_8(&traces))),
        ("auPRC", Box::new(criterion_9)),
        ("Data round-trip", Box::new(criterion_10)),
        ("Monotone descent", Box::new(|| criterion_3(&traces))),
    ];
    let numbers = [1, 2, 4, 5, 6, 7, 8, 9, 10, 3];

    let mut results = Vec::new();
    for ((name, check), number) in criteria.iter().zip(numbers) {
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        results.push((number, *name, outcome));
    }
    results.sort_by_key(|r| r.0);
    let mut failed = 0;
    for (number, name, v) in &results {
        println!("{} {number:>2}. {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        failed += usize::from(!v.pass);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
