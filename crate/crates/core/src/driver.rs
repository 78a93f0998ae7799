//! Outer loop run identically by every worker: build the quadratic model at
//! the current margins, solve the local block, merge the margin deltas with
//! one vector allreduce, line-search the merged direction, apply the step and
//! adapt the trust-region multiplier `mu`.
//!
//! All decisions after the block solve depend only on reduced or replicated
//! quantities, so every rank takes the same branches and issues the same
//! collectives in the same order.

use std::io::{self, Write};
use std::time::{Duration, Instant};

use crate::block::{solve_block, BlockCursor, BlockParams, FeatureShard, NeverStop, StopSignal};
use crate::error::{Error, Result};
use crate::glm::{compute_working_set, total_loss, total_loss_along, ElasticNetPenalty, LossKind, WorkingSet};
use crate::runtime::{alb_threshold, ProgressChannel, Transport};

pub use crate::block::SolveMode;

/// `D` within this many units of rounding of its own terms is treated as
/// zero: the merged direction is stationary at working precision.
const STATIONARY_ULPS: f64 = 64.0 * f64::EPSILON;
/// Line-search failures with `|D|` below this relative size are attributed
/// to rounding in the objective rather than to a bad direction.
const ROUNDOFF_RTOL: f64 = 1e-10;

/// Hyperparameters shared (identically) by all workers.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub loss: LossKind,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Diagonal shift added to the block Hessian; must be positive.
    pub nu: f64,
    /// `mu` growth factor after a shortened step.
    pub eta1: f64,
    /// `mu` shrink factor after a full step.
    pub eta2: f64,
    /// Backtracking ratio.
    pub b: f64,
    /// Sufficient-decrease constant.
    pub sigma: f64,
    /// Weight of the quadratic term in the directional value.
    pub gamma: f64,
    /// Lower end of the initial step-length search interval.
    pub delta: f64,
    /// Fraction of workers that must finish a pass before a load-balanced
    /// iteration is cut off.
    pub kappa: f64,
    pub mode: SolveMode,
    pub mu_adaptive: bool,
    /// Starting (and, with `mu_adaptive` off, constant) value of `mu`.
    pub mu_init: f64,
    pub max_outer: usize,
    pub tol: f64,
    pub alpha_grid_size: usize,
    pub max_backtracks: usize,
}

impl SolverConfig {
    pub fn new(loss: LossKind, lambda1: f64, lambda2: f64) -> Self {
        Self {
            loss,
            lambda1,
            lambda2,
            nu: 1e-6,
            eta1: 2.0,
            eta2: 2.0,
            b: 0.5,
            sigma: 0.01,
            gamma: 0.0,
            delta: 1e-3,
            kappa: 0.75,
            mode: SolveMode::Bsp,
            mu_adaptive: true,
            mu_init: 1.0,
            max_outer: 1000,
            tol: 1e-8,
            alpha_grid_size: 8,
            max_backtracks: 50,
        }
    }

    pub fn penalty(&self) -> Result<ElasticNetPenalty> {
        ElasticNetPenalty::new(self.lambda1, self.lambda2)
    }

    pub fn validate(&self) -> Result<()> {
        self.penalty()?;
        let bad = |what: &str, v: f64| Err(Error::invalid(format!("{what} = {v} is out of range")));
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return bad("nu", self.nu);
        }
        if !(self.eta1 >= 1.0 && self.eta1.is_finite()) {
            return bad("eta1", self.eta1);
        }
        if !(self.eta2 >= 1.0 && self.eta2.is_finite()) {
            return bad("eta2", self.eta2);
        }
        if !(self.b > 0.0 && self.b < 1.0) {
            return bad("b", self.b);
        }
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return bad("sigma", self.sigma);
        }
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            return bad("gamma", self.gamma);
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad("delta", self.delta);
        }
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return bad("kappa", self.kappa);
        }
        if !(self.mu_init >= 1.0 && self.mu_init.is_finite()) {
            return bad("mu_init", self.mu_init);
        }
        if !(self.tol > 0.0) {
            return bad("tol", self.tol);
        }
        if self.alpha_grid_size == 0 {
            return Err(Error::invalid("alpha_grid_size must be positive"));
        }
        if self.max_backtracks == 0 {
            return Err(Error::invalid("max_backtracks must be positive"));
        }
        Ok(())
    }
}

/// State owned by one worker.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    /// Weights of the worker's block, in local feature order.
    pub beta_m: Vec<f64>,
    /// Replicated `X beta`.
    pub margins: Vec<f64>,
    /// Replicated trust-region multiplier.
    pub mu: f64,
}

impl ModelState {
    pub fn new(width: usize, n: usize, mu: f64) -> Self {
        Self {
            beta_m: vec![0.0; width],
            margins: vec![0.0; n],
            mu,
        }
    }
}

/// One row of the training history.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationStats {
    pub iteration: usize,
    /// Seconds since `fit` started.
    pub seconds: f64,
    /// Objective after the step.
    pub objective: f64,
    pub alpha: f64,
    /// `mu` used to build this iteration's model.
    pub mu: f64,
    /// Global number of nonzero weights after the step.
    pub nnz: usize,
    /// Payload bytes this rank contributed to reductions this iteration.
    pub reduce_bytes: u64,
    /// Coordinates this rank visited in its block pass.
    pub coordinates_visited: usize,
}

/// Result of [`outer_step`].
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub stats: IterationStats,
    pub objective_before: f64,
    /// The merged direction was zero (or stationary at working precision);
    /// the state was left untouched.
    pub converged: bool,
}

/// Output of a line search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearchOutcome {
    pub alpha: f64,
    pub value: f64,
}

/// `g^T (X dB) + gamma * quad + (R(beta + dB) - R(beta))`
pub fn directional_d(
    working: &WorkingSet,
    global_margin_delta: &[f64],
    penalty_new_minus_old: f64,
    quad_form_total: f64,
    gamma: f64,
) -> f64 {
    let linear: f64 = working.g.iter().zip(global_margin_delta).map(|(g, d)| g * d).sum();
    linear + gamma * quad_form_total + penalty_new_minus_old
}

/// The fixed set of trial step lengths in `(delta, 1]`, log-spaced, ending at 1.
pub fn alpha_grid(delta: f64, size: usize) -> Vec<f64> {
    let ln_delta = delta.ln();
    (1..=size)
        .map(|k| {
            if k == size {
                1.0
            } else {
                (ln_delta * (size - k) as f64 / size as f64).exp()
            }
        })
        .collect()
}

/// Picks the step length for a descent direction with directional value
/// `directional < 0`.
///
/// `evaluate` maps a batch of step lengths to objective values
/// `f(beta + alpha * dB)`; it is called at most three times (the full step,
/// the grid, the backtracking sequence) so that distributed callers can
/// batch their penalty reductions.
pub fn line_search(
    f0: f64,
    directional: f64,
    config: &SolverConfig,
    evaluate: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
) -> Result<LineSearchOutcome> {
    let accept = |alpha: f64, value: f64| value <= f0 + alpha * config.sigma * directional;
    let full = evaluate(&[1.0])?[0];
    if accept(1.0, full) {
        return Ok(LineSearchOutcome { alpha: 1.0, value: full });
    }

    let grid = alpha_grid(config.delta, config.alpha_grid_size);
    let inner = &grid[..grid.len() - 1];
    let mut values = if inner.is_empty() { Vec::new() } else { evaluate(inner)? };
    values.push(full);
    // argmin, ties resolved toward the longer step
    let mut best = grid.len() - 1;
    for k in (0..grid.len()).rev() {
        if values[k] < values[best] {
            best = k;
        }
    }
    let alpha_init = grid[best];

    let candidates: Vec<f64> = (0..=config.max_backtracks)
        .map(|j| alpha_init * config.b.powi(j as i32))
        .collect();
    let values = evaluate(&candidates)?;
    for (&alpha, &value) in candidates.iter().zip(&values) {
        if accept(alpha, value) {
            return Ok(LineSearchOutcome { alpha, value });
        }
    }
    Err(Error::LineSearch {
        f0,
        directional,
        last_alpha: *candidates.last().unwrap_or(&alpha_init),
        last_value: *values.last().unwrap_or(&full),
    })
}

/// Grows `mu` after a shortened step, shrinks it (not below 1) after a full one.
pub fn adapt_mu(mu: f64, alpha: f64, eta1: f64, eta2: f64) -> f64 {
    if alpha < 1.0 {
        eta1 * mu
    } else {
        (mu / eta2).max(1.0)
    }
}

struct AlbStop<'a> {
    channel: &'a dyn ProgressChannel,
    iteration: u64,
    rank: usize,
}

impl StopSignal for AlbStop<'_> {
    fn fired(&self) -> bool {
        self.channel.should_stop(self.iteration)
    }

    fn report_pass_complete(&self) {
        self.channel.report_complete(self.iteration, self.rank);
    }
}

fn penalty_along(penalty: &ElasticNetPenalty, beta: &[f64], delta: &[f64], alpha: f64) -> f64 {
    beta.iter().zip(delta).map(|(&b, &d)| penalty.coordinate(b + alpha * d)).sum()
}

fn count_nonzero(v: &[f64]) -> usize {
    v.iter().filter(|x| **x != 0.0).count()
}

/// One outer iteration on this worker. Must be called collectively.
#[allow(clippy::too_many_arguments)]
pub fn outer_step(
    state: &mut ModelState,
    shard: &FeatureShard,
    config: &SolverConfig,
    transport: &mut dyn Transport,
    cursor: &mut BlockCursor,
    iteration: usize,
    coordinate_delay: Duration,
    started: Instant,
) -> Result<StepOutcome> {
    let penalty = config.penalty()?;
    let labels = shard.labels();
    let bytes_before = transport.stats().payload_bytes();

    let working = compute_working_set(config.loss, labels, &state.margins)?;
    let loss0 = total_loss(config.loss, labels, &state.margins)?;

    let params = BlockParams {
        mu: state.mu,
        nu: config.nu,
        penalty,
        mode: config.mode,
        coordinate_delay,
    };
    let delta = match config.mode {
        SolveMode::Bsp => solve_block(shard, &working, &state.beta_m, &params, cursor, &NeverStop),
        SolveMode::Alb => {
            let channel = transport.progress();
            let stop = AlbStop {
                channel: channel.as_ref(),
                iteration: iteration as u64,
                rank: transport.rank(),
            };
            solve_block(shard, &working, &state.beta_m, &params, cursor, &stop)
        }
    };

    let margin_delta = transport.allreduce_sum(&delta.local_margin_delta)?;
    let r_old_local = penalty.value_unchecked(&state.beta_m);
    let r_new_local = penalty_along(&penalty, &state.beta_m, &delta.delta_beta, 1.0);
    let reduced = transport.allreduce_scalars(&[
        delta.quad_form,
        r_old_local,
        r_new_local,
        delta.nnz() as f64,
    ])?;
    let quad_total = state.mu * reduced[0];
    let (r_old, r_new) = (reduced[1], reduced[2]);
    let f0 = loss0 + r_old;

    let mu_used = state.mu;
    let mut converged = reduced[3] == 0.0;
    let mut alpha = 1.0;
    let mut objective = f0;
    if !converged {
        let directional = directional_d(&working, &margin_delta, r_new - r_old, quad_total, config.gamma);
        let scale: f64 = working.g.iter().zip(&margin_delta).map(|(g, d)| (g * d).abs()).sum::<f64>()
            + config.gamma * quad_total
            + r_new.abs()
            + r_old.abs();
        if directional > -STATIONARY_ULPS * scale {
            converged = true;
        } else {
            let mut evaluate = |alphas: &[f64]| -> Result<Vec<f64>> {
                let penalties = if alphas == [1.0] {
                    vec![r_new]
                } else {
                    let local: Vec<f64> = alphas
                        .iter()
                        .map(|&a| penalty_along(&penalty, &state.beta_m, &delta.delta_beta, a))
                        .collect();
                    transport.allreduce_scalars(&local)?
                };
                Ok(alphas
                    .iter()
                    .zip(penalties)
                    .map(|(&a, r)| total_loss_along(config.loss, labels, &state.margins, &margin_delta, a) + r)
                    .collect())
            };
            match line_search(f0, directional, config, &mut evaluate) {
                Ok(found) => {
                    alpha = found.alpha;
                    objective = found.value;
                }
                Err(Error::LineSearch { .. }) if -directional <= ROUNDOFF_RTOL * (1.0 + f0.abs()) => {
                    converged = true;
                }
                Err(e) => return Err(e),
            }
        }
    }

    if !converged {
        for (b, d) in state.beta_m.iter_mut().zip(&delta.delta_beta) {
            *b += alpha * d;
        }
        for (m, d) in state.margins.iter_mut().zip(&margin_delta) {
            *m += alpha * d;
        }
        if config.mu_adaptive {
            state.mu = adapt_mu(state.mu, alpha, config.eta1, config.eta2);
        }
    }
    let nnz = transport.allreduce_scalars(&[count_nonzero(&state.beta_m) as f64])?[0] as usize;

    Ok(StepOutcome {
        stats: IterationStats {
            iteration,
            seconds: started.elapsed().as_secs_f64(),
            objective,
            alpha,
            mu: mu_used,
            nnz,
            reduce_bytes: transport.stats().payload_bytes() - bytes_before,
            coordinates_visited: delta.coordinates_visited,
        },
        objective_before: f0,
        converged,
    })
}

/// Optional instrumentation for [`fit_with`].
#[derive(Default)]
pub struct FitHooks<'a> {
    /// Artificial delay before every coordinate update (fault injection).
    pub coordinate_delay: Duration,
    /// Called after every iteration with the updated state.
    pub on_iteration: Option<Box<dyn FnMut(&ModelState, &IterationStats) + 'a>>,
}

/// Output of [`fit`] on one worker.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    /// Global feature ids of `beta_m`.
    pub feature_ids: Vec<usize>,
    pub beta_m: Vec<f64>,
    pub history: Vec<IterationStats>,
    pub state: ModelState,
    /// True if a stopping rule fired before `max_outer`.
    pub converged: bool,
}

impl FitResult {
    pub fn final_objective(&self) -> Option<f64> {
        self.history.last().map(|s| s.objective)
    }
}

/// Trains from `beta = 0`, `mu = mu_init`. Must be called collectively by
/// every rank of `transport`.
pub fn fit(shard: &FeatureShard, config: &SolverConfig, transport: &mut dyn Transport) -> Result<FitResult> {
    fit_with(shard, config, transport, FitHooks::default())
}

pub fn fit_with(
    shard: &FeatureShard,
    config: &SolverConfig,
    transport: &mut dyn Transport,
    mut hooks: FitHooks<'_>,
) -> Result<FitResult> {
    config.validate()?;
    for &y in shard.labels() {
        config.loss.check_label(y)?;
    }
    if config.mode == SolveMode::Alb {
        let want = alb_threshold(config.kappa, transport.world_size());
        let have = transport.progress().threshold();
        if want != have {
            return Err(Error::invalid(format!(
                "transport stops load-balanced passes after {have} ranks but kappa={} implies {want}",
                config.kappa
            )));
        }
    }

    let started = Instant::now();
    let mut state = ModelState::new(shard.len(), shard.n(), config.mu_init);
    let mut cursor = BlockCursor::default();
    let mut history = Vec::new();
    let mut converged = false;
    for iteration in 1..=config.max_outer {
        let outcome = outer_step(
            &mut state,
            shard,
            config,
            transport,
            &mut cursor,
            iteration,
            hooks.coordinate_delay,
            started,
        )?;
        if let Some(cb) = hooks.on_iteration.as_mut() {
            cb(&state, &outcome.stats);
        }
        let after = outcome.stats.objective;
        let small_change = (outcome.objective_before - after).abs() <= config.tol * (1.0 + after.abs());
        history.push(outcome.stats);
        if outcome.converged || small_change {
            converged = true;
            break;
        }
    }
    Ok(FitResult {
        feature_ids: shard.feature_ids().to_vec(),
        beta_m: state.beta_m.clone(),
        history,
        state,
        converged,
    })
}

/// Assembles the full weight vector on every rank with one extra collective.
pub fn gather_weights(transport: &mut dyn Transport, result: &FitResult, num_features: usize) -> Result<Vec<f64>> {
    let mut dense = vec![0.0; num_features];
    for (&j, &b) in result.feature_ids.iter().zip(&result.beta_m) {
        dense[j] = b;
    }
    transport.allreduce_sum(&dense)
}

pub const HISTORY_HEADER: &str = "iteration,seconds,objective,alpha,mu,nnz,reduce_bytes";

/// Writes the history as CSV. Floats use the shortest representation that
/// parses back to the same value.
pub fn write_history_csv(mut out: impl Write, history: &[IterationStats]) -> io::Result<()> {
    writeln!(out, "{HISTORY_HEADER}")?;
    for s in history {
        writeln!(
            out,
            "{},{:?},{:?},{:?},{:?},{},{}",
            s.iteration, s.seconds, s.objective, s.alpha, s.mu, s.nnz, s.reduce_bytes
        )?;
    }
    Ok(())
}
