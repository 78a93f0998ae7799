#![allow(dead_code)]

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use splitglm::data::{partition_features, Dataset};
use splitglm::driver::{fit_with, FitHooks, IterationStats, ModelState};
use splitglm::eval::{reference_fit, DenseProblem, ReferenceSolution};
use splitglm::runtime::{spawn_spmd_with, SpmdOptions};
use splitglm::{FitResult, LossKind, Result, SolverConfig, Transport};

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

/// Standard normal via Box-Muller.
pub fn normal(rng: &mut StdRng) -> f64 {
    let u: f64 = rng.gen_range(f64::EPSILON..1.0);
    let v: f64 = rng.gen();
    (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
}

/// Sparse random design with labels drawn from a planted sparse model.
/// Classification labels get enough noise that the data are not separable.
pub fn random_problem(seed: u64, n: usize, p: usize, density: f64, loss: LossKind) -> Dataset {
    let mut r = rng(seed);
    let truth: Vec<f64> = (0..p)
        .map(|_| if r.gen_bool(0.3) { normal(&mut r) } else { 0.0 })
        .collect();
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let mut row = Vec::new();
        for j in 0..p {
            if r.gen_bool(density) {
                row.push((j, normal(&mut r)));
            }
        }
        let m: f64 = row.iter().map(|&(j, v)| v * truth[j]).sum();
        let y = match loss {
            LossKind::Squared => m + 0.5 * normal(&mut r),
            _ => {
                if m + 1.5 * normal(&mut r) > 0.0 {
                    1.0
                } else {
                    -1.0
                }
            }
        };
        rows.push(row);
        labels.push(y);
    }
    Dataset::from_rows(labels, rows, p).unwrap()
}

/// Dense Gaussian design, every entry nonzero.
pub fn dense_problem(seed: u64, n: usize, p: usize, loss: LossKind) -> Dataset {
    random_problem(seed, n, p, 1.0, loss)
}

pub struct Run {
    pub beta: Vec<f64>,
    pub results: Vec<FitResult>,
    /// Per rank, the local `beta_m` after every iteration.
    pub snapshots: Vec<Vec<Vec<f64>>>,
    /// Per rank, the replicated margins after every iteration.
    pub margin_snapshots: Vec<Vec<Vec<f64>>>,
}

impl Run {
    pub fn history(&self) -> &[IterationStats] {
        &self.results[0].history
    }

    pub fn objective(&self) -> f64 {
        self.results[0].final_objective().unwrap_or(f64::NAN)
    }
}

pub fn fit_spmd(data: &Dataset, config: &SolverConfig, nodes: usize, seed: u64) -> Result<Run> {
    fit_spmd_delayed(data, config, nodes, seed, |_| std::time::Duration::ZERO)
}

/// Like [`fit_spmd`] with a per-rank coordinate delay.
pub fn fit_spmd_delayed(
    data: &Dataset,
    config: &SolverConfig,
    nodes: usize,
    seed: u64,
    delay: impl Fn(usize) -> std::time::Duration + Sync,
) -> Result<Run> {
    let ids: Vec<usize> = (0..data.num_features()).collect();
    let spec = partition_features(&ids, nodes, seed)?;
    let shards = data.shards(&spec)?;
    let options = SpmdOptions { kappa: config.kappa };
    let out = spawn_spmd_with(nodes, options, |t| {
        let rank = t.rank();
        let mut snaps = Vec::new();
        let mut margins = Vec::new();
        let hooks = FitHooks {
            coordinate_delay: delay(rank),
            on_iteration: Some(Box::new(|s: &ModelState, _: &IterationStats| {
                snaps.push(s.beta_m.clone());
                margins.push(s.margins.clone());
            })),
        };
        let res = fit_with(&shards[rank], config, t, hooks)?;
        Ok((res, snaps, margins))
    })?;
    let mut beta = vec![0.0; data.num_features()];
    let mut results = Vec::new();
    let mut snapshots = Vec::new();
    let mut margin_snapshots = Vec::new();
    for (res, snaps, margins) in out {
        margin_snapshots.push(margins);
        for (&j, &b) in res.feature_ids.iter().zip(&res.beta_m) {
            beta[j] = b;
        }
        results.push(res);
        snapshots.push(snaps);
    }
    Ok(Run {
        beta,
        results,
        snapshots,
        margin_snapshots,
    })
}

/// Reassembles the global beta after iteration `k` (0-based) from snapshots.
pub fn beta_at(run: &Run, k: usize, p: usize) -> Vec<f64> {
    let mut beta = vec![0.0; p];
    for (res, snaps) in run.results.iter().zip(&run.snapshots) {
        for (&j, &b) in res.feature_ids.iter().zip(&snaps[k]) {
            beta[j] = b;
        }
    }
    beta
}

pub fn reference(data: &Dataset, config: &SolverConfig, tol: f64) -> ReferenceSolution {
    let dense = DenseProblem::from_dataset(data);
    reference_fit(&dense, config.loss, &config.penalty().unwrap(), tol).expect("reference solver")
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + b.abs())
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// `f_{k+1} <= f_k + 1e-12 (1 + |f_k|)` across a history, starting from the
/// objective at beta = 0.
pub fn descent_violations(f_start: f64, history: &[IterationStats]) -> Vec<usize> {
    let mut prev = f_start;
    let mut bad = Vec::new();
    for s in history {
        if s.objective > prev + 1e-12 * (1.0 + prev.abs()) {
            bad.push(s.iteration);
        }
        prev = s.objective;
    }
    bad
}

/// Objective at beta = 0.
pub fn initial_objective(data: &Dataset, config: &SolverConfig) -> f64 {
    let dense = DenseProblem::from_dataset(data);
    dense
        .objective(config.loss, &config.penalty().unwrap(), &vec![0.0; data.num_features()])
        .unwrap()
}
