use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::report::{IterationRecord, SolveReport, Termination};
use super::{policy_statistic, InferenceConfig};
use crate::error::{Error, Result};
use crate::mdp::{self, DiscreteMDP, TabularPolicy};
use crate::OpCounts;

/// Logit floor used when converting deterministic table entries.
const MIN_LOGIT: f64 = -700.0;

/// Per-state softmax over action logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxPolicy {
    num_states: usize,
    num_actions: usize,
    logits: Vec<f64>,
}

impl SoftmaxPolicy {
    pub fn new(num_states: usize, num_actions: usize, logits: Vec<f64>) -> Result<Self> {
        if logits.len() != num_states * num_actions {
            return Err(Error::DimensionMismatch {
                what: "softmax logits",
                expected: num_states * num_actions,
                got: logits.len(),
            });
        }
        if let Some(i) = logits.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("logits[{i}]"), "must be finite"));
        }
        Ok(Self {
            num_states,
            num_actions,
            logits,
        })
    }

    /// All-zero logits: the uniform policy.
    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        Self {
            num_states,
            num_actions,
            logits: vec![0.0; num_states * num_actions],
        }
    }

    /// Logits `log π(a|s)`, floored for zero entries.
    pub fn from_tabular(policy: &TabularPolicy) -> Self {
        Self {
            num_states: policy.num_states(),
            num_actions: policy.num_actions(),
            logits: policy.as_flat().iter().map(|p| p.ln().max(MIN_LOGIT)).collect(),
        }
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn to_tabular(&self) -> TabularPolicy {
        let na = self.num_actions;
        let mut table = Vec::with_capacity(self.logits.len());
        for row in self.logits.chunks(na) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|l| (l - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            table.extend(exps.iter().map(|e| e / total));
        }
        TabularPolicy::from_flat_unchecked(self.num_states, na, table)
    }

    fn shifted(&self, direction: &DVector<f64>, step: f64) -> Self {
        Self {
            num_states: self.num_states,
            num_actions: self.num_actions,
            logits: self
                .logits
                .iter()
                .zip(direction.iter())
                .map(|(l, d)| l + step * d)
                .collect(),
        }
    }
}

/// `log U` as a function of the logits.
pub fn log_utility_logits(mdp: &DiscreteMDP, policy: &SoftmaxPolicy, cfg: &InferenceConfig) -> Result<f64> {
    let u = mdp::utility(mdp, &policy.to_tabular(), cfg.horizon)?;
    if u <= 0.0 {
        return Err(Error::ZeroUtility);
    }
    Ok(u.ln())
}

/// Gradient of `log U` with respect to the logits,
/// `stat(s,a) − π(a|s) Σ_{a'} stat(s,a')`. Also returns `U` and the
/// inference cost.
pub fn policy_gradient(
    mdp: &DiscreteMDP,
    policy: &SoftmaxPolicy,
    cfg: &InferenceConfig,
) -> Result<(DVector<f64>, f64, OpCounts)> {
    let table = policy.to_tabular();
    let stat = policy_statistic(mdp, &table, cfg)?;
    let na = policy.num_actions;
    let mut grad = DVector::zeros(policy.logits.len());
    for s in 0..policy.num_states {
        let row = &stat.statistic.as_slice()[s * na..(s + 1) * na];
        let mass: f64 = row.iter().sum();
        for a in 0..na {
            grad[s * na + a] = row[a] - table.prob(s, a) * mass;
        }
    }
    Ok((grad, stat.utility, stat.counts))
}

/// Gradient-ascent settings. Steps are chosen by Armijo backtracking on
/// `log U`, restarting from `initial_step` every iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgStop {
    pub tol: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub initial_step: f64,
    pub shrink: f64,
    pub armijo_c: f64,
    pub max_backtracks: usize,
}

impl Default for PgStop {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iters: 500,
            grad_tol: 1e-10,
            initial_step: 1.0,
            shrink: 0.5,
            armijo_c: 1e-4,
            max_backtracks: 60,
        }
    }
}

/// Softmax policy-gradient ascent on `log U`.
pub fn pg_solve(
    mdp: &DiscreteMDP,
    init: &SoftmaxPolicy,
    cfg: &InferenceConfig,
    stop: &PgStop,
) -> Result<SolveReport<SoftmaxPolicy>> {
    if !(stop.initial_step > 0.0 && stop.shrink > 0.0 && stop.shrink < 1.0) {
        return Err(Error::InvalidArgument(
            "step sizes must be positive and shrink in (0, 1)".into(),
        ));
    }
    let mut policy = init.clone();
    let (mut grad, mut u, _) = policy_gradient(mdp, &policy, cfg)?;
    let initial_utility = u;
    let mut iterations = Vec::new();
    let mut termination = Termination::MaxIterations;

    for iter in 1..=stop.max_iters {
        let start = Instant::now();
        let g2 = grad.norm_squared();
        if g2.sqrt() <= stop.grad_tol {
            termination = Termination::Converged;
            break;
        }
        let log_u = u.ln();
        let mut step = stop.initial_step;
        let mut accepted = None;
        for _ in 0..=stop.max_backtracks {
            let trial = policy.shifted(&grad, step);
            let trial_log_u = log_utility_logits(mdp, &trial, cfg)?;
            if trial_log_u >= log_u + stop.armijo_c * step * g2 {
                accepted = Some(trial);
                break;
            }
            step *= stop.shrink;
        }
        let Some(next) = accepted else {
            log::debug!("line search failed at iteration {iter}, |g| = {:.3e}", g2.sqrt());
            termination = Termination::LineSearchFailed;
            break;
        };
        policy = next;
        let previous = u;
        let counts;
        (grad, u, counts) = policy_gradient(mdp, &policy, cfg)?;
        iterations.push(IterationRecord {
            iter,
            utility: u,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
            matvec_count: counts.messages,
        });
        if (u - previous).abs() <= stop.tol {
            termination = Termination::Converged;
            break;
        }
    }

    Ok(SolveReport {
        backend: cfg.backend,
        horizon_mode: cfg.horizon.mode().to_string(),
        initial_utility,
        iterations,
        final_policy: policy,
        termination,
    })
}
