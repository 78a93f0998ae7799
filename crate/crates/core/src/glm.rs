//! Example-wise losses, the elastic-net penalty and the working quantities
//! `(g_i, w_i)` that define the quadratic model of the loss at the current
//! margins.
//!
//! The usual IRLS response `z_i = -g_i / w_i` is never formed. Every place it
//! would appear uses `w_i * z_i = -g_i` instead, so saturated examples with
//! `w_i = 0` are harmless.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// `ln(sqrt(2*pi))`
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Below this standardized margin the probit terms switch from `erfc` to the
/// continued fraction for the Mills ratio.
const PROBIT_TAIL: f64 = -5.0;
const MILLS_TERMS: usize = 160;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    /// `0.5 * (y - yhat)^2`
    Squared,
    /// `log(1 + exp(-y * yhat))`, labels in {-1, +1}
    Logistic,
    /// `-log(Phi(y * yhat))`, labels in {-1, +1}
    Probit,
}

/// Value and first two derivatives of a loss with respect to the margin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossEval {
    pub value: f64,
    pub grad: f64,
    pub hess: f64,
}

impl LossKind {
    /// Uniform upper bound on the second derivative in the margin.
    ///
    /// The probit bound is a fixed constant checked numerically by the test
    /// suite (the true supremum is just below 1).
    pub fn hess_bound(self) -> f64 {
        match self {
            LossKind::Squared => 1.0,
            LossKind::Logistic => 0.25,
            LossKind::Probit => 3.0,
        }
    }

    pub fn requires_binary_labels(self) -> bool {
        !matches!(self, LossKind::Squared)
    }

    pub fn check_label(self, y: f64) -> Result<()> {
        if !y.is_finite() {
            return Err(Error::invalid(format!("non-finite label {y}")));
        }
        if self.requires_binary_labels() && y != 1.0 && y != -1.0 {
            return Err(Error::invalid(format!(
                "{self} loss needs labels in {{-1, +1}}, got {y}"
            )));
        }
        Ok(())
    }

    /// Loss value, gradient and curvature at one example.
    pub fn eval(self, y: f64, yhat: f64) -> Result<LossEval> {
        self.check_label(y)?;
        if !yhat.is_finite() {
            return Err(Error::invalid(format!("non-finite margin {yhat}")));
        }
        Ok(self.eval_unchecked(y, yhat))
    }

    pub(crate) fn eval_unchecked(self, y: f64, yhat: f64) -> LossEval {
        match self {
            LossKind::Squared => {
                let r = yhat - y;
                LossEval {
                    value: 0.5 * r * r,
                    grad: r,
                    hess: 1.0,
                }
            }
            LossKind::Logistic => {
                let t = y * yhat;
                // sigma(-t) and sigma(t) without overflow
                let (s_neg, s_pos) = if t >= 0.0 {
                    let e = (-t).exp();
                    (e / (1.0 + e), 1.0 / (1.0 + e))
                } else {
                    let e = t.exp();
                    (1.0 / (1.0 + e), e / (1.0 + e))
                };
                LossEval {
                    value: softplus(-t),
                    grad: -y * s_neg,
                    hess: s_neg * s_pos,
                }
            }
            LossKind::Probit => {
                let t = y * yhat;
                let (log_cdf, ratio, curvature_factor) = probit_terms(t);
                LossEval {
                    value: -log_cdf,
                    grad: -y * ratio,
                    hess: ratio * curvature_factor,
                }
            }
        }
    }

    /// Loss value only.
    pub(crate) fn value_unchecked(self, y: f64, yhat: f64) -> f64 {
        match self {
            LossKind::Squared => {
                let r = yhat - y;
                0.5 * r * r
            }
            LossKind::Logistic => softplus(-y * yhat),
            LossKind::Probit => -probit_terms(y * yhat).0,
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Squared => "squared",
            LossKind::Logistic => "logistic",
            LossKind::Probit => "probit",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squared" => Ok(LossKind::Squared),
            "logistic" => Ok(LossKind::Logistic),
            "probit" => Ok(LossKind::Probit),
            other => Err(Error::invalid(format!("unknown loss '{other}'"))),
        }
    }
}

/// `log(1 + exp(x))`
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Standard normal CDF.
pub fn normal_cdf(t: f64) -> f64 {
    0.5 * libm::erfc(-t * FRAC_1_SQRT_2)
}

/// Returns `(log Phi(t), phi(t)/Phi(t), t + phi(t)/Phi(t))`.
///
/// The last term is the factor that turns the inverse Mills ratio into the
/// probit curvature; in the lower tail it is read straight off the continued
/// fraction so it does not suffer cancellation.
fn probit_terms(t: f64) -> (f64, f64, f64) {
    if t < PROBIT_TAIL {
        let u = -t;
        // Phi(-u)/phi(u) = 1/(u + r), r = 1/(u + 2/(u + 3/(u + ...)))
        let mut tail = 0.0;
        for k in (1..=MILLS_TERMS).rev() {
            tail = k as f64 / (u + tail);
        }
        let ratio = u + tail;
        let log_cdf = -0.5 * u * u - LN_SQRT_2PI - ratio.ln();
        (log_cdf, ratio, tail)
    } else {
        let log_cdf = if t > 0.0 {
            (-0.5 * libm::erfc(t * FRAC_1_SQRT_2)).ln_1p()
        } else {
            (0.5 * libm::erfc(-t * FRAC_1_SQRT_2)).ln()
        };
        let density = (-0.5 * t * t).exp() / (2.0 * PI).sqrt();
        let ratio = density / normal_cdf(t);
        (log_cdf, ratio, t + ratio)
    }
}

/// `lambda1 * ||beta||_1 + lambda2 / 2 * ||beta||^2`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElasticNetPenalty {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl ElasticNetPenalty {
    pub fn new(lambda1: f64, lambda2: f64) -> Result<Self> {
        if !(lambda1.is_finite() && lambda1 >= 0.0 && lambda2.is_finite() && lambda2 >= 0.0) {
            return Err(Error::invalid(format!(
                "penalties must be finite and nonnegative (l1={lambda1}, l2={lambda2})"
            )));
        }
        Ok(Self { lambda1, lambda2 })
    }

    #[inline]
    pub fn coordinate(&self, b: f64) -> f64 {
        self.lambda1 * b.abs() + 0.5 * self.lambda2 * b * b
    }

    pub fn value(&self, beta: &[f64]) -> Result<f64> {
        if let Some(b) = beta.iter().find(|b| !b.is_finite()) {
            return Err(Error::invalid(format!("non-finite weight {b}")));
        }
        Ok(self.value_unchecked(beta))
    }

    pub(crate) fn value_unchecked(&self, beta: &[f64]) -> f64 {
        beta.iter().map(|&b| self.coordinate(b)).sum()
    }
}

/// Per-example first and second loss derivatives at the current margins.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkingSet {
    pub g: Vec<f64>,
    pub w: Vec<f64>,
}

impl WorkingSet {
    pub fn len(&self) -> usize {
        self.g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g.is_empty()
    }
}

pub fn compute_working_set(loss: LossKind, labels: &[f64], margins: &[f64]) -> Result<WorkingSet> {
    if labels.len() != margins.len() {
        return Err(Error::invalid(format!(
            "{} labels but {} margins",
            labels.len(),
            margins.len()
        )));
    }
    let mut g = Vec::with_capacity(labels.len());
    let mut w = Vec::with_capacity(labels.len());
    for (&y, &m) in labels.iter().zip(margins) {
        let e = loss.eval(y, m)?;
        g.push(e.grad);
        w.push(e.hess);
    }
    Ok(WorkingSet { g, w })
}

/// `sum_i loss(y_i, margin_i)`
pub fn total_loss(loss: LossKind, labels: &[f64], margins: &[f64]) -> Result<f64> {
    if labels.len() != margins.len() {
        return Err(Error::invalid(format!(
            "{} labels but {} margins",
            labels.len(),
            margins.len()
        )));
    }
    let mut sum = 0.0;
    for (&y, &m) in labels.iter().zip(margins) {
        sum += loss.eval(y, m)?.value;
    }
    Ok(sum)
}

/// Loss at `margins + alpha * direction`, without input validation. The
/// arithmetic per example matches the margin update in the driver exactly.
pub(crate) fn total_loss_along(
    loss: LossKind,
    labels: &[f64],
    margins: &[f64],
    direction: &[f64],
    alpha: f64,
) -> f64 {
    labels
        .iter()
        .zip(margins.iter().zip(direction))
        .map(|(&y, (&m, &d))| loss.value_unchecked(y, m + alpha * d))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn squared_at_zero() {
        let e = LossKind::Squared.eval(2.0, 0.0).unwrap();
        assert_eq!((e.value, e.grad, e.hess), (2.0, -2.0, 1.0));
    }

    #[test]
    fn logistic_at_zero() {
        let e = LossKind::Logistic.eval(1.0, 0.0).unwrap();
        assert!(close(e.value, 2f64.ln(), 1e-15));
        assert_eq!(e.grad, -0.5);
        assert_eq!(e.hess, 0.25);
    }

    #[test]
    fn probit_at_zero() {
        let e = LossKind::Probit.eval(1.0, 0.0).unwrap();
        assert!(close(e.value, 2f64.ln(), 1e-14));
        assert!(close(e.grad, -0.797_884_560_802_865_4, 1e-13));
        assert!(close(e.hess, 2.0 / PI, 1e-13));
    }

    // Frozen from a 50-digit mpmath evaluation of -log Phi(y*yhat) and its
    // derivatives.
    #[test]
    fn probit_matches_extended_precision() {
        let cases = [
            (1.0, 0.3, 0.481_410_161_588_481_2, -0.617_220_853_612_734_5, 0.566_127_838_218_252_9),
            (-1.0, -0.3, 0.481_410_161_588_481_2, 0.617_220_853_612_734_5, 0.566_127_838_218_252_9),
            (1.0, -2.5, 5.081_648_277_278_690, -2.822_744_797_663_907, 0.911_026_198_578_884_6),
            (1.0, -5.0, 15.064_998_393_988_726, -5.186_503_967_125_842, 0.967_303_565_382_887_8),
            (1.0, -8.0, 35.013_437_159_914_55, -8.121_368_112_236_113, 0.985_675_116_556_659_1),
            (1.0, -40.0, 804.608_442_013_753_8, -40.024_968_847_207_26, 0.999_377_331_621_408_6),
            (-1.0, 7.5, 31.075_890_902_890_001, 7.628_966_391_103_766, 0.983_880_263_312_573_9),
            (1.0, 1.7, 0.045_589_029_170_068_94, -0.098_435_919_689_931_51, 0.177_030_693_758_086_2),
            (1.0, 12.0, 1.776_482_112_077_679e-33, -2.146_383_735_663_060_3e-32, 2.575_660_482_795_672_4e-31),
        ];
        for (y, yh, v, g, h) in cases {
            let e = LossKind::Probit.eval(y, yh).unwrap();
            assert!((e.value - v).abs() <= 1e-12 * v.abs(), "value at {y},{yh}: {} vs {v}", e.value);
            assert!((e.grad - g).abs() <= 1e-11 * g.abs(), "grad at {y},{yh}: {} vs {g}", e.grad);
            assert!((e.hess - h).abs() <= 1e-10 * h.abs(), "hess at {y},{yh}: {} vs {h}", e.hess);
        }
    }

    #[test]
    fn logistic_saturates_cleanly() {
        let ws = compute_working_set(LossKind::Logistic, &[1.0], &[40.0]).unwrap();
        // 1 / (1 + e^40)
        let expected = 4.248_354_255_291_589e-18;
        assert!((ws.g[0] + expected).abs() <= 1e-12 * expected);
        assert!((ws.w[0] - expected).abs() <= 1e-12 * expected);
        let e = LossKind::Logistic.eval(1.0, -40.0).unwrap();
        assert!(close(e.value, 40.0, 1e-15));
        assert!(e.hess.is_finite() && e.hess > 0.0);
        let e = LossKind::Logistic.eval(-1.0, 800.0).unwrap();
        assert_eq!(e.value, 800.0);
        assert_eq!(e.hess, 0.0);
    }

    #[test]
    fn working_set_examples() {
        let ws = compute_working_set(LossKind::Squared, &[2.0, 0.0], &[0.0, 0.0]).unwrap();
        assert_eq!(ws.g, vec![-2.0, 0.0]);
        assert_eq!(ws.w, vec![1.0, 1.0]);
        let ws = compute_working_set(LossKind::Logistic, &[1.0], &[0.0]).unwrap();
        assert_eq!((ws.g[0], ws.w[0]), (-0.5, 0.25));
        assert!(compute_working_set(LossKind::Squared, &[1.0], &[]).is_err());
    }

    #[test]
    fn total_loss_examples() {
        let l = total_loss(LossKind::Logistic, &[1.0, -1.0, 1.0, -1.0], &[0.0; 4]).unwrap();
        assert!(close(l, 4.0 * 2f64.ln(), 1e-15));
        assert_eq!(total_loss(LossKind::Squared, &[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        let l = total_loss(LossKind::Probit, &[1.0, -1.0], &[0.3, -0.3]).unwrap();
        assert!(close(l, 0.962_820_323_176_962_4, 1e-13));
        assert!(total_loss(LossKind::Probit, &[1.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(LossKind::Squared.eval(1.0, f64::NAN).is_err());
        assert!(LossKind::Squared.eval(f64::INFINITY, 0.0).is_err());
        assert!(LossKind::Logistic.eval(0.0, 0.0).is_err());
        assert!(LossKind::Probit.eval(2.0, 0.0).is_err());
        assert!(LossKind::Squared.eval(2.5, 0.0).is_ok());
    }

    #[test]
    fn penalty_examples() {
        let p = ElasticNetPenalty::new(1.0, 2.0).unwrap();
        assert_eq!(p.value(&[1.0, -2.0]).unwrap(), 8.0);
        let p = ElasticNetPenalty::new(0.0, 0.0).unwrap();
        assert_eq!(p.value(&[3.0, -1.5, 7.0]).unwrap(), 0.0);
        let p = ElasticNetPenalty::new(0.5, 0.0).unwrap();
        assert_eq!(p.value(&[-4.0]).unwrap(), 2.0);
        assert!(p.value(&[f64::NAN]).is_err());
        assert!(ElasticNetPenalty::new(-1.0, 0.0).is_err());
    }

    #[test]
    fn loss_names_round_trip() {
        for k in [LossKind::Squared, LossKind::Logistic, LossKind::Probit] {
            assert_eq!(k.to_string().parse::<LossKind>().unwrap(), k);
        }
        assert!("poisson".parse::<LossKind>().is_err());
    }
}
