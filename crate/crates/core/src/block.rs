//! Per-worker block subproblem: one cycle (or, under load balancing, a
//! variable number of coordinates) of cyclic coordinate descent on the
//! penalized quadratic model restricted to the worker's feature block.

use std::time::Duration;

use crate::error::{Error, Result};
use crate::glm::{ElasticNetPenalty, WorkingSet};

/// Feature-major slice of the design matrix held by one worker, plus the
/// replicated label vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureShard {
    node_id: usize,
    n: usize,
    num_features: usize,
    feature_ids: Vec<usize>,
    col_ptr: Vec<usize>,
    rows: Vec<u32>,
    values: Vec<f64>,
    labels: Vec<f64>,
}

/// Borrowed sparse column: strictly increasing example indices and their
/// nonzero values.
#[derive(Debug, Clone, Copy)]
pub struct Column<'a> {
    pub rows: &'a [u32],
    pub values: &'a [f64],
}

impl Column<'_> {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.rows.iter().map(|&i| i as usize).zip(self.values.iter().copied())
    }
}

impl FeatureShard {
    /// Builds a shard from `(global feature id, column entries)` pairs.
    ///
    /// Columns are sorted by feature id; every invariant of the shard is
    /// checked here so the solver can index without bounds surprises.
    pub fn new(
        node_id: usize,
        n: usize,
        num_features: usize,
        mut columns: Vec<(usize, Vec<(u32, f64)>)>,
        labels: Vec<f64>,
    ) -> Result<Self> {
        if labels.len() != n {
            return Err(Error::invalid(format!("{} labels for {n} examples", labels.len())));
        }
        if n > u32::MAX as usize {
            return Err(Error::invalid(format!("{n} examples exceed the u32 row index")));
        }
        columns.sort_by_key(|(j, _)| *j);
        let mut feature_ids = Vec::with_capacity(columns.len());
        let mut col_ptr = Vec::with_capacity(columns.len() + 1);
        col_ptr.push(0);
        let mut rows = Vec::new();
        let mut values = Vec::new();
        for (j, entries) in columns {
            if j >= num_features {
                return Err(Error::invalid(format!("feature {j} outside 0..{num_features}")));
            }
            if feature_ids.last().is_some_and(|&prev| prev == j) {
                return Err(Error::invalid(format!("feature {j} appears twice")));
            }
            let mut last: Option<u32> = None;
            for (i, v) in entries {
                if i as usize >= n {
                    return Err(Error::invalid(format!("feature {j}: example {i} outside 0..{n}")));
                }
                if last.is_some_and(|l| l >= i) {
                    return Err(Error::invalid(format!(
                        "feature {j}: example indices not strictly increasing at {i}"
                    )));
                }
                if !v.is_finite() || v == 0.0 {
                    return Err(Error::invalid(format!(
                        "feature {j}: stored value {v} must be finite and nonzero"
                    )));
                }
                last = Some(i);
                rows.push(i);
                values.push(v);
            }
            feature_ids.push(j);
            col_ptr.push(rows.len());
        }
        Ok(Self {
            node_id,
            n,
            num_features,
            feature_ids,
            col_ptr,
            rows,
            values,
            labels,
        })
    }

    pub fn node_id(&self) -> usize {
        self.node_id
    }

    /// Number of examples.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Total feature count across all shards.
    pub fn num_features(&self) -> usize {
        self.num_features
    }

    /// Number of features held by this shard.
    pub fn len(&self) -> usize {
        self.feature_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.feature_ids.is_empty()
    }

    pub fn feature_ids(&self) -> &[usize] {
        &self.feature_ids
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn nnz(&self) -> usize {
        self.rows.len()
    }

    pub fn column(&self, local: usize) -> Column<'_> {
        let (a, b) = (self.col_ptr[local], self.col_ptr[local + 1]);
        Column {
            rows: &self.rows[a..b],
            values: &self.values[a..b],
        }
    }

    pub fn columns(&self) -> impl Iterator<Item = (usize, Column<'_>)> + '_ {
        (0..self.len()).map(move |k| (self.feature_ids[k], self.column(k)))
    }

    /// `X^m v` for a vector over the shard's local features.
    pub fn multiply(&self, local: &[f64]) -> Vec<f64> {
        assert_eq!(local.len(), self.len(), "vector length must match shard width");
        let mut out = vec![0.0; self.n];
        for (k, &b) in local.iter().enumerate() {
            if b != 0.0 {
                for (i, x) in self.column(k).iter() {
                    out[i] += b * x;
                }
            }
        }
        out
    }

    /// Squared Frobenius norm of the block.
    pub fn frobenius_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

/// Position in the shard's fixed cyclic feature order. Persists across outer
/// iterations so load-balanced runs resume where they stopped.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BlockCursor {
    pub next_index: usize,
    pub passes_completed_this_iteration: usize,
}

/// How the block pass decides when to stop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMode {
    /// Exactly one full cycle over the block.
    Bsp,
    /// Cycle until the stop signal fires.
    Alb,
}

/// Cross-worker stop flag for load-balanced passes.
///
/// `fired` must be cheap and safe to poll while other workers update the
/// underlying state.
pub trait StopSignal {
    fn fired(&self) -> bool;

    /// Called once per iteration when this worker finishes its first full
    /// cycle over the block.
    fn report_pass_complete(&self) {}
}

/// Signal that never fires.
#[derive(Debug, Clone, Copy, Default)]
pub struct NeverStop;

impl StopSignal for NeverStop {
    fn fired(&self) -> bool {
        false
    }
}

/// Parameters of one block pass.
#[derive(Debug, Clone, Copy)]
pub struct BlockParams {
    pub mu: f64,
    pub nu: f64,
    pub penalty: ElasticNetPenalty,
    pub mode: SolveMode,
    /// Artificial per-coordinate delay; zero outside fault-injection runs.
    pub coordinate_delay: Duration,
}

/// Step proposed by one worker for its block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockDelta {
    /// Indexed by local feature position.
    pub delta_beta: Vec<f64>,
    /// `X^m delta_beta`, length `n`.
    pub local_margin_delta: Vec<f64>,
    /// `sum_i w_i d_i^2 + nu * ||delta_beta||^2`, before scaling by `mu`.
    pub quad_form: f64,
    pub coordinates_visited: usize,
}

impl BlockDelta {
    pub fn zeros(width: usize, n: usize) -> Self {
        Self {
            delta_beta: vec![0.0; width],
            local_margin_delta: vec![0.0; n],
            quad_form: 0.0,
            coordinates_visited: 0,
        }
    }

    pub fn nnz(&self) -> usize {
        self.delta_beta.iter().filter(|d| **d != 0.0).count()
    }
}

/// `sgn(x) * max(|x| - a, 0)`
#[inline]
pub fn soft_threshold(x: f64, a: f64) -> f64 {
    debug_assert!(a >= 0.0);
    if x > a {
        x - a
    } else if x < -a {
        x + a
    } else {
        0.0
    }
}

/// Exact minimizer over coordinate `j` of the block model
/// `g^T X dB + 1/2 dB^T mu (H + nu I) dB + R(beta + dB)`, returned as the new
/// total `delta_beta_j`.
///
/// `local_margin_delta` is the current `X^m dB` including this coordinate's
/// present contribution.
#[allow(clippy::too_many_arguments)]
pub fn coordinate_delta(
    column: Column<'_>,
    working: &WorkingSet,
    local_margin_delta: &[f64],
    beta_j: f64,
    delta_beta_j: f64,
    mu: f64,
    nu: f64,
    penalty: &ElasticNetPenalty,
) -> f64 {
    let mut neg_grad = 0.0;
    let mut coupled = 0.0;
    let mut curvature = 0.0;
    for (i, x) in column.iter() {
        let w = working.w[i];
        neg_grad -= x * working.g[i];
        coupled += w * x * local_margin_delta[i];
        curvature += w * x * x;
    }
    let numerator =
        neg_grad - mu * coupled + mu * curvature * (beta_j + delta_beta_j) + mu * nu * beta_j;
    let denominator = mu * (curvature + nu) + penalty.lambda2;
    soft_threshold(numerator, penalty.lambda1) / denominator - beta_j
}

/// Runs the block pass starting at `cursor`.
///
/// In BSP mode exactly one full cycle is made and `stop` is only consulted
/// before each coordinate. In ALB mode the pass keeps cycling, reporting its
/// first completed cycle to `stop`, until the signal fires.
pub fn solve_block(
    shard: &FeatureShard,
    working: &WorkingSet,
    beta_m: &[f64],
    params: &BlockParams,
    cursor: &mut BlockCursor,
    stop: &dyn StopSignal,
) -> BlockDelta {
    let width = shard.len();
    let n = shard.n();
    debug_assert_eq!(beta_m.len(), width);
    debug_assert_eq!(working.len(), n);
    let mut out = BlockDelta::zeros(width, n);
    cursor.passes_completed_this_iteration = 0;
    if width == 0 {
        stop.report_pass_complete();
        cursor.passes_completed_this_iteration = 1;
        return out;
    }
    if cursor.next_index >= width {
        cursor.next_index = 0;
    }

    let budget = match params.mode {
        SolveMode::Bsp => width,
        SolveMode::Alb => usize::MAX,
    };
    let mut visited = 0;
    while visited < budget {
        if stop.fired() {
            break;
        }
        if !params.coordinate_delay.is_zero() {
            std::thread::sleep(params.coordinate_delay);
        }
        let k = cursor.next_index;
        let column = shard.column(k);
        let current = out.delta_beta[k];
        let updated = coordinate_delta(
            column,
            working,
            &out.local_margin_delta,
            beta_m[k],
            current,
            params.mu,
            params.nu,
            &params.penalty,
        );
        let step = updated - current;
        if step != 0.0 {
            out.delta_beta[k] = updated;
            for (i, x) in column.iter() {
                out.local_margin_delta[i] += step * x;
            }
        }
        visited += 1;
        cursor.next_index = (k + 1) % width;
        if visited % width == 0 {
            cursor.passes_completed_this_iteration += 1;
            if visited == width {
                stop.report_pass_complete();
            }
        }
    }
    out.coordinates_visited = visited;
    out.quad_form = working
        .w
        .iter()
        .zip(&out.local_margin_delta)
        .map(|(w, d)| w * d * d)
        .sum::<f64>()
        + params.nu * out.delta_beta.iter().map(|d| d * d).sum::<f64>();
    out
}

/// `mu * (sum_i w_i d_i^2 + nu * ||delta_beta||^2)`
pub fn block_quadratic_form(delta: &BlockDelta, mu: f64) -> f64 {
    mu * delta.quad_form
}
