use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::report::{IterationRecord, SolveReport, Termination};
use super::{policy_statistic, InferenceConfig};
use crate::error::Result;
use crate::mdp::{random, DiscreteMDP, StateActionDist, TabularPolicy};

/// EM stopping rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmStop {
    /// Stop once `|ΔU|` is at most this.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for EmStop {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iters: 500,
        }
    }
}

/// Tabular M-step: `π(a|s) ∝ statistic(s, a)`. States without statistic mass
/// keep their previous row.
pub fn m_step(policy: &TabularPolicy, statistic: &StateActionDist) -> TabularPolicy {
    let na = policy.num_actions();
    let mut table = policy.as_flat().to_vec();
    for (s, row) in table.chunks_mut(na).enumerate() {
        let stat = &statistic.as_slice()[s * na..(s + 1) * na];
        let mass: f64 = stat.iter().sum();
        if mass > 0.0 && mass.is_finite() {
            for (p, v) in row.iter_mut().zip(stat) {
                *p = v / mass;
            }
        }
    }
    TabularPolicy::from_flat_unchecked(policy.num_states(), na, table)
}

/// One EM update of a tabular policy.
pub fn em_step_tabular(mdp: &DiscreteMDP, policy: &TabularPolicy, cfg: &InferenceConfig) -> Result<TabularPolicy> {
    let stat = policy_statistic(mdp, policy, cfg)?;
    Ok(m_step(policy, &stat.statistic))
}

/// Alternates E- and M-steps until the utility settles.
pub fn em_solve(
    mdp: &DiscreteMDP,
    init: &TabularPolicy,
    cfg: &InferenceConfig,
    stop: &EmStop,
) -> Result<SolveReport<TabularPolicy>> {
    let mut policy = init.clone();
    let mut stat = policy_statistic(mdp, &policy, cfg)?;
    let initial_utility = stat.utility;
    let mut iterations = Vec::new();
    let mut termination = Termination::MaxIterations;

    for iter in 1..=stop.max_iters {
        let start = Instant::now();
        policy = m_step(&policy, &stat.statistic);
        let previous = stat.utility;
        stat = policy_statistic(mdp, &policy, cfg)?;
        iterations.push(IterationRecord {
            iter,
            utility: stat.utility,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
            matvec_count: stat.counts.messages,
        });
        log::trace!("em iter {iter}: U = {:.12}", stat.utility);
        if (stat.utility - previous).abs() <= stop.tol {
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

/// Restart `index` of a run seeded with `seed` draws its initial policy from
/// its own generator seeded with `seed + index`, so results do not depend on
/// evaluation order.
pub fn restart_seed(seed: u64, index: u64) -> u64 {
    seed.wrapping_add(index)
}

/// EM from `restarts` Dirichlet(1) initial policies.
pub fn em_restarts(
    mdp: &DiscreteMDP,
    cfg: &InferenceConfig,
    stop: &EmStop,
    restarts: usize,
    seed: u64,
) -> Vec<Result<SolveReport<TabularPolicy>>> {
    (0..restarts as u64)
        .map(|r| {
            let init = random::random_policy(
                &mut ChaCha8Rng::seed_from_u64(restart_seed(seed, r)),
                mdp.num_states(),
                mdp.num_actions(),
            );
            em_solve(mdp, &init, cfg, stop)
        })
        .collect()
}
