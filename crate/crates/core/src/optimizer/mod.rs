//! Pose retargeting, regularized bone fitting and coarse-to-fine growth.
//!
//! Rotations are updated by left-multiplied exponentials of axis-angle
//! increments, translations additively and scales in log space. The default
//! method is gradient descent with Armijo backtracking; Adam is available by
//! flag.

mod fit;
mod grow;
mod kmeans;
mod retarget;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use fit::{coarse_to_fine, fit_bones, fit_mask_bounds, init_roots, CoarseToFine, DepthSummary, FitData, FitReport, FitStep};
pub use grow::{grow_bone, grow_depth, ChildScale, GrowConfig, Growth};
pub use kmeans::{farthest_point_init, lloyd, KMeans};
pub use retarget::{retarget, retarget_with, RetargetConfig, RetargetObjective, RetargetReport, RetargetScope, RetargetStep};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Gradient descent with Armijo backtracking and step growth after acceptance.
    Gd,
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub bone_mask: f64,
    pub overlap: f64,
    pub cover: f64,
    pub data: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            bone_mask: 0.1,
            overlap: 0.001,
            cover: 0.001,
            data: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    /// Initial step for gradient descent; learning rate for Adam.
    pub step_size: f64,
    pub max_steps: usize,
    pub method: Method,
    pub loss_weights: LossWeights,
    /// Stop once the tracked metric is at or below this value.
    pub convergence_tol: f64,
    pub seed: u64,
    /// Backtracking halvings tried before a step is declared stalled.
    pub max_backtracks: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            step_size: 1e-2,
            max_steps: 200,
            method: Method::Gd,
            loss_weights: LossWeights::default(),
            convergence_tol: 1e-9,
            seed: 0,
            max_backtracks: 40,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::Config("step_size must be positive".into()));
        }
        let w = &self.loss_weights;
        if [w.bone_mask, w.overlap, w.cover, w.data].iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Config("loss weights must be nonnegative".into()));
        }
        if !(self.convergence_tol >= 0.0) {
            return Err(Error::Config("convergence_tol must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxSteps,
    /// Backtracking found no decrease.
    Stalled,
    ZeroGradient,
    Cancelled,
}

pub(crate) struct Eval {
    pub loss: f64,
    /// Quantity reported alongside the loss (Chamfer distance for retargeting).
    pub metric: f64,
    pub grad: Vec<f64>,
}

pub(crate) trait Problem {
    type State: Clone;
    fn evaluate(&self, state: &Self::State) -> Result<Eval>;
    /// `state ⊕ step` with the same layout as the gradient.
    fn retract(&self, state: &Self::State, step: &[f64]) -> Self::State;
}

pub(crate) struct Outcome<S> {
    pub state: S,
    /// `(step, loss, metric)` for the initial state and every accepted step.
    pub trace: Vec<(usize, f64, f64)>,
    pub stop: StopReason,
}

const ARMIJO_C: f64 = 1e-4;
const DIVERGENCE_FACTOR: f64 = 10.0;
const DIVERGENCE_STEPS: usize = 20;

/// Runs the configured method. `observe` sees every recorded `(step, loss, metric)`
/// and returns `false` to cancel.
pub(crate) fn descend<P: Problem>(
    problem: &P,
    init: P::State,
    cfg: &OptimConfig,
    mut observe: impl FnMut(usize, f64, f64) -> bool,
) -> Result<Outcome<P::State>> {
    cfg.validate()?;
    let mut state = init;
    let mut eval = problem.evaluate(&state)?;
    if !eval.loss.is_finite() {
        return Err(Error::Diverged("initial objective is not finite".into()));
    }
    let initial_metric = eval.metric;
    let mut trace = vec![(0, eval.loss, eval.metric)];
    if !observe(0, eval.loss, eval.metric) {
        return Ok(Outcome { state, trace, stop: StopReason::Cancelled });
    }
    if eval.metric <= cfg.convergence_tol {
        return Ok(Outcome { state, trace, stop: StopReason::Converged });
    }
    let mut alpha = cfg.step_size;
    let (mut m, mut v) = (vec![0.0; eval.grad.len()], vec![0.0; eval.grad.len()]);
    let mut above = 0;
    let mut stop = StopReason::MaxSteps;
    for step in 1..=cfg.max_steps {
        let g2: f64 = eval.grad.iter().map(|x| x * x).sum();
        if g2 == 0.0 {
            stop = StopReason::ZeroGradient;
            break;
        }
        match cfg.method {
            Method::Gd => {
                let mut accepted = None;
                for _ in 0..=cfg.max_backtracks {
                    let dir: Vec<f64> = eval.grad.iter().map(|g| -alpha * g).collect();
                    let cand = problem.retract(&state, &dir);
                    let e = problem.evaluate(&cand)?;
                    if e.loss.is_finite() && e.loss <= eval.loss - ARMIJO_C * alpha * g2 {
                        accepted = Some((cand, e));
                        break;
                    }
                    alpha *= 0.5;
                }
                match accepted {
                    Some((s, e)) => {
                        state = s;
                        eval = e;
                        alpha *= 2.0;
                    }
                    None => {
                        stop = StopReason::Stalled;
                        break;
                    }
                }
            }
            Method::Adam => {
                let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
                let t = step as i32;
                let dir: Vec<f64> = eval
                    .grad
                    .iter()
                    .enumerate()
                    .map(|(i, g)| {
                        m[i] = b1 * m[i] + (1.0 - b1) * g;
                        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                        let mh = m[i] / (1.0 - b1.powi(t));
                        let vh = v[i] / (1.0 - b2.powi(t));
                        -cfg.step_size * mh / (vh.sqrt() + eps)
                    })
                    .collect();
                state = problem.retract(&state, &dir);
                eval = problem.evaluate(&state)?;
                if !eval.loss.is_finite() {
                    return Err(Error::Diverged(format!("objective became non-finite at step {step}")));
                }
            }
        }
        trace.push((step, eval.loss, eval.metric));
        if !observe(step, eval.loss, eval.metric) {
            stop = StopReason::Cancelled;
            break;
        }
        if eval.metric > DIVERGENCE_FACTOR * initial_metric {
            above += 1;
            if above >= DIVERGENCE_STEPS {
                return Err(Error::Diverged(format!(
                    "metric {:.6e} above {DIVERGENCE_FACTOR}x its initial value {:.6e} for {DIVERGENCE_STEPS} steps (step {step})",
                    eval.metric, initial_metric
                )));
            }
        } else {
            above = 0;
        }
        if eval.metric <= cfg.convergence_tol {
            stop = StopReason::Converged;
            break;
        }
    }
    Ok(Outcome { state, trace, stop })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Quadratic;

    impl Problem for Quadratic {
        type State = Vec<f64>;
        fn evaluate(&self, s: &Vec<f64>) -> Result<Eval> {
            let loss = (s[0] - 1.0).powi(2) + 10.0 * (s[1] + 2.0).powi(2);
            Ok(Eval {
                loss,
                metric: loss,
                grad: vec![2.0 * (s[0] - 1.0), 20.0 * (s[1] + 2.0)],
            })
        }
        fn retract(&self, s: &Vec<f64>, step: &[f64]) -> Vec<f64> {
            s.iter().zip(step).map(|(a, b)| a + b).collect()
        }
    }

    #[test]
    fn gd_trace_is_nonincreasing_and_converges() {
        let cfg = OptimConfig { max_steps: 500, convergence_tol: 1e-12, ..Default::default() };
        let out = descend(&Quadratic, vec![5.0, 5.0], &cfg, |_, _, _| true).unwrap();
        assert!(out.trace.windows(2).all(|w| w[1].1 <= w[0].1));
        assert_eq!(out.stop, StopReason::Converged);
        assert!((out.state[0] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn adam_reaches_minimum() {
        let cfg = OptimConfig { method: Method::Adam, step_size: 0.1, max_steps: 2000, convergence_tol: 1e-8, ..Default::default() };
        let out = descend(&Quadratic, vec![5.0, 5.0], &cfg, |_, _, _| true).unwrap();
        assert!(out.trace.last().unwrap().1 < 1e-6);
    }

    #[test]
    fn observer_can_cancel() {
        let out = descend(&Quadratic, vec![5.0, 5.0], &OptimConfig::default(), |s, _, _| s < 3).unwrap();
        assert_eq!(out.stop, StopReason::Cancelled);
        assert_eq!(out.trace.len(), 4);
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = OptimConfig { step_size: 0.0, ..Default::default() };
        assert!(descend(&Quadratic, vec![0.0, 0.0], &cfg, |_, _, _| true).is_err());
    }
}
