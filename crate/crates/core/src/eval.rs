//! Metrics and the serial dense reference solver used to certify results.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::glm::{compute_working_set, total_loss, ElasticNetPenalty, LossKind};

/// Area under the precision-recall curve, integrated with recall steps:
/// `sum over thresholds of (Rc(a) - Rc(a_prev)) * Pr(a)`, thresholds being the
/// distinct scores in decreasing order. Labels `> 0` count as positive.
pub fn auprc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::invalid(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("NaN score"));
    }
    let positives = labels.iter().filter(|&&y| y > 0.0).count();
    if positives == 0 {
        return Err(Error::UndefinedMetric("auPRC needs at least one positive label".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let (mut tp, mut seen, mut area, mut last_tp) = (0usize, 0usize, 0.0, 0usize);
    let mut k = 0;
    while k < order.len() {
        let a = scores[order[k]];
        while k < order.len() && scores[order[k]] == a {
            tp += usize::from(labels[order[k]] > 0.0);
            seen += 1;
            k += 1;
        }
        if tp > last_tp {
            area += (tp - last_tp) as f64 / positives as f64 * (tp as f64 / seen as f64);
            last_tp = tp;
        }
    }
    Ok(area)
}

/// `(f - f*) / f*`. Slightly negative values (reference slack) pass through.
pub fn relative_suboptimality(f: f64, f_star: f64) -> Result<f64> {
    if !(f_star > 0.0) {
        return Err(Error::invalid(format!("reference objective {f_star} must be positive")));
    }
    Ok((f - f_star) / f_star)
}

pub fn nnz(beta: &[f64]) -> usize {
    beta.iter().filter(|b| **b != 0.0).count()
}

/// Row-major dense design with labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseProblem {
    pub n: usize,
    pub p: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl DenseProblem {
    pub fn new(n: usize, p: usize, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != n * p || y.len() != n {
            return Err(Error::invalid(format!(
                "dense problem {n}x{p} given {} entries and {} labels",
                x.len(),
                y.len()
            )));
        }
        Ok(Self { n, p, x, y })
    }

    pub fn from_dataset(data: &Dataset) -> Self {
        let (n, p) = (data.n(), data.num_features());
        let mut x = vec![0.0; n * p];
        for (i, row) in data.rows.iter().enumerate() {
            for &(j, v) in row {
                x[i * p + j] = v;
            }
        }
        Self {
            n,
            p,
            x,
            y: data.labels.clone(),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.x[i * self.p + j]
    }

    pub fn margins(&self, beta: &[f64]) -> Vec<f64> {
        self.x
            .chunks(self.p.max(1))
            .take(self.n)
            .map(|row| row.iter().zip(beta).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn objective(&self, loss: LossKind, penalty: &ElasticNetPenalty, beta: &[f64]) -> Result<f64> {
        Ok(total_loss(loss, &self.y, &self.margins(beta))? + penalty.value(beta)?)
    }

    /// Gradient of `L + (lambda2/2)|beta|^2`.
    pub fn smooth_gradient(&self, loss: LossKind, penalty: &ElasticNetPenalty, beta: &[f64]) -> Result<Vec<f64>> {
        let ws = compute_working_set(loss, &self.y, &self.margins(beta))?;
        let mut grad: Vec<f64> = beta.iter().map(|b| penalty.lambda2 * b).collect();
        for i in 0..self.n {
            for (j, gj) in grad.iter_mut().enumerate() {
                *gj += self.get(i, j) * ws.g[i];
            }
        }
        Ok(grad)
    }
}

/// Largest violation of the coordinate-wise optimality conditions.
pub fn optimality_residual(smooth_grad: &[f64], beta: &[f64], lambda1: f64) -> f64 {
    smooth_grad
        .iter()
        .zip(beta)
        .map(|(&g, &b)| {
            if b > 0.0 {
                (g + lambda1).abs()
            } else if b < 0.0 {
                (g - lambda1).abs()
            } else {
                (g.abs() - lambda1).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSolution {
    pub beta: Vec<f64>,
    pub objective: f64,
    /// Infinity norm of the gradient of the smooth part at `beta`.
    pub grad_norm_smooth_part: f64,
    pub optimality_residual: f64,
    pub iterations: usize,
}

const REFERENCE_MAX_OUTER: usize = 10_000;
const REFERENCE_MAX_INNER: usize = 5_000;

/// Serial proximal Newton with a full (not block-diagonal) Hessian model,
/// solved by cyclic coordinate descent to high accuracy, then a backtracking
/// step on the true objective. Stops once [`optimality_residual`] is at most
/// `tol`.
pub fn reference_fit(
    problem: &DenseProblem,
    loss: LossKind,
    penalty: &ElasticNetPenalty,
    tol: f64,
) -> Result<ReferenceSolution> {
    for &y in &problem.y {
        loss.check_label(y)?;
    }
    if !(tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    let (n, p) = (problem.n, problem.p);
    let lambda1 = penalty.lambda1;
    let lambda2 = penalty.lambda2;
    let col_sq: Vec<f64> = (0..p).map(|j| (0..n).map(|i| problem.get(i, j).powi(2)).sum()).collect();

    let mut beta = vec![0.0; p];
    let mut margins = vec![0.0; n];
    let mut f = problem.objective(loss, penalty, &beta)?;

    for iteration in 0..REFERENCE_MAX_OUTER {
        let grad = problem.smooth_gradient(loss, penalty, &beta)?;
        let residual = optimality_residual(&grad, &beta, lambda1);
        if residual <= tol {
            return Ok(ReferenceSolution {
                grad_norm_smooth_part: grad.iter().fold(0.0, |m, g| f64::max(m, g.abs())),
                beta,
                objective: f,
                optimality_residual: residual,
                iterations: iteration,
            });
        }

        let ws = compute_working_set(loss, &problem.y, &margins)?;
        // z = beta + d, xd = X d
        let mut z = beta.clone();
        let mut xd = vec![0.0; n];
        let curv: Vec<f64> = (0..p)
            .map(|j| {
                let c: f64 = (0..n).map(|i| ws.w[i] * problem.get(i, j).powi(2)).sum();
                c + 1e-12 * (1.0 + col_sq[j])
            })
            .collect();
        for _ in 0..REFERENCE_MAX_INNER {
            let mut biggest = 0.0f64;
            for j in 0..p {
                let lin: f64 = (0..n)
                    .map(|i| problem.get(i, j) * (ws.g[i] + ws.w[i] * xd[i]))
                    .sum();
                let c = curv[j];
                let new = crate::block::soft_threshold(c * z[j] - lin, lambda1) / (c + lambda2);
                let step = new - z[j];
                if step != 0.0 {
                    for (i, x) in xd.iter_mut().enumerate() {
                        *x += problem.get(i, j) * step;
                    }
                    z[j] = new;
                    biggest = biggest.max(step.abs() * (1.0 + c.sqrt()));
                }
            }
            if biggest <= 1e-14 * (1.0 + z.iter().fold(0.0, |m, v| f64::max(m, v.abs()))) {
                break;
            }
        }

        let d: Vec<f64> = z.iter().zip(&beta).map(|(a, b)| a - b).collect();
        if d.iter().all(|v| *v == 0.0) {
            return Err(Error::Oracle(format!("no progress at residual {residual:e}")));
        }
        let xd = problem.margins(&d);
        let linear: f64 = ws.g.iter().zip(&xd).map(|(g, v)| g * v).sum();
        // coordinate-wise so small changes are not lost against |R|
        let penalty_change: f64 = z
            .iter()
            .zip(&beta)
            .map(|(&a, &b)| lambda1 * (a.abs() - b.abs()) + 0.5 * lambda2 * (a - b) * (a + b))
            .sum();
        let directional = linear + penalty_change;
        if directional > -1e-13 * (1.0 + f.abs()) {
            // the predicted decrease is below what f can resolve; near the
            // solution the full Newton step is the right one
            beta = z;
            margins = problem.margins(&beta);
            f = problem.objective(loss, penalty, &beta)?;
            continue;
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = beta.iter().zip(&d).map(|(b, s)| b + alpha * s).collect();
            let tm: Vec<f64> = margins.iter().zip(&xd).map(|(m, s)| m + alpha * s).collect();
            let ft = total_loss(loss, &problem.y, &tm)? + penalty.value(&trial)?;
            if ft <= f + 1e-4 * alpha * directional {
                accepted = Some((trial, ft));
                break;
            }
            alpha *= 0.5;
        }
        let Some((trial, ft)) = accepted else {
            return Err(Error::Oracle(format!(
                "line search stalled at residual {residual:e} (D = {directional:e})"
            )));
        };
        beta = trial;
        // recompute rather than accumulate so drift cannot build up
        margins = problem.margins(&beta);
        f = ft.min(problem.objective(loss, penalty, &beta)?);
    }
    Err(Error::Oracle(format!(
        "no convergence to {tol:e} within {REFERENCE_MAX_OUTER} iterations"
    )))
}
