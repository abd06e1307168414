//! Policy improvement on top of the inference statistic: tabular EM and
//! softmax policy gradients, each with either inference backend.

mod em;
mod pg;
mod report;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fb;
use crate::mdp::{self, DiscreteMDP, Horizon, StateActionDist, TabularPolicy};
use crate::qinf::{self, StationaryOptions};
use crate::OpCounts;

pub use em::{em_restarts, em_solve, em_step_tabular, m_step, restart_seed, EmStop};
pub use pg::{log_utility_logits, pg_solve, policy_gradient, PgStop, SoftmaxPolicy};
pub(crate) use report::csv_err;
pub use report::{IterationRecord, SolveReport, Termination};

/// Which inference route produces the statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    /// Forward-backward; on an infinite horizon, truncated by the
    /// time-marginal heuristic.
    Fb,
    /// Q-function recursions; on an infinite horizon, the stationary route.
    Q,
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backend::Fb => "fb",
            Backend::Q => "q",
        })
    }
}

impl FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fb" => Ok(Backend::Fb),
            "q" => Ok(Backend::Q),
            other => Err(Error::InvalidArgument(format!(
                "unknown backend `{other}` (expected fb or q)"
            ))),
        }
    }
}

/// Everything needed to turn a policy into a statistic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferenceConfig {
    pub backend: Backend,
    pub horizon: Horizon,
    /// Stationary route settings (infinite horizon, q backend).
    pub stationary: StationaryOptions,
    /// Time-marginal cut-off threshold (infinite horizon, fb backend).
    pub eta: f64,
    /// Largest horizon the time-marginal cut-off may return.
    pub cutoff_cap: usize,
}

impl InferenceConfig {
    pub fn new(backend: Backend, horizon: Horizon) -> Self {
        Self {
            backend,
            horizon,
            stationary: StationaryOptions::default(),
            eta: 0.01,
            cutoff_cap: 10_000,
        }
    }

    /// Label used in reports, e.g. `q-infinite` or `time-marginal-0.01`.
    pub fn method_label(&self) -> String {
        match (self.backend, self.horizon) {
            (Backend::Fb, Horizon::Infinite) => format!("time-marginal-{}", self.eta),
            (Backend::Q, Horizon::Infinite) => "q-infinite".to_string(),
            (b, _) => b.to_string(),
        }
    }
}

/// The E-step result: `Σ_t Σ_{τ≤t} q(z_τ, t)` and the policy's utility under
/// the configured horizon.
#[derive(Debug, Clone)]
pub struct PolicyStatistic {
    pub statistic: StateActionDist,
    pub utility: f64,
    pub counts: OpCounts,
    /// Horizon the statistic was computed over, when it is finite.
    pub effective_horizon: Option<usize>,
}

/// Runs the configured inference backend.
pub fn policy_statistic(mdp: &DiscreteMDP, policy: &TabularPolicy, cfg: &InferenceConfig) -> Result<PolicyStatistic> {
    match (cfg.backend, cfg.horizon) {
        (Backend::Fb, Horizon::Finite(h)) => {
            let s = fb::fb_policy_statistic(mdp, policy, h)?;
            Ok(PolicyStatistic {
                statistic: s.statistic,
                utility: s.utility,
                counts: s.counts,
                effective_horizon: Some(h),
            })
        }
        (Backend::Q, Horizon::Finite(h)) => {
            let qf = qinf::q_functions_finite(mdp, policy, h)?;
            Ok(PolicyStatistic {
                statistic: qinf::q_policy_statistic(&qf),
                utility: qf.utility,
                counts: qf.counts,
                effective_horizon: Some(h),
            })
        }
        (Backend::Q, Horizon::Infinite) => {
            let inf = qinf::q_statistic_infinite(mdp, policy, &cfg.stationary)?;
            Ok(PolicyStatistic {
                statistic: inf.statistic,
                utility: inf.stationary.utility,
                counts: inf.counts,
                effective_horizon: None,
            })
        }
        (Backend::Fb, Horizon::Infinite) => {
            let cut = fb::time_marginal_horizon(mdp, policy, cfg.eta, cfg.cutoff_cap)?;
            let h = cut.horizon();
            let s = fb::fb_policy_statistic(mdp, policy, h)?;
            Ok(PolicyStatistic {
                statistic: s.statistic,
                utility: mdp::utility(mdp, policy, Horizon::Infinite)?,
                counts: s.counts,
                effective_horizon: Some(h),
            })
        }
    }
}

/// Exhaustive search over deterministic policies. Returns the best policy
/// and its utility; exponential in the number of states.
pub fn best_deterministic_policy(mdp: &DiscreteMDP, horizon: Horizon) -> Result<(TabularPolicy, f64)> {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let total = (na as f64).powi(ns as i32);
    if total > crate::tol::ENUMERATION_CAP {
        return Err(Error::EnumerationTooLarge {
            size: total,
            cap: crate::tol::ENUMERATION_CAP,
        });
    }
    let mut choice = vec![0usize; ns];
    let mut best: Option<(TabularPolicy, f64)> = None;
    loop {
        let pol = TabularPolicy::deterministic(na, &choice)?;
        let u = mdp::utility(mdp, &pol, horizon)?;
        if best.as_ref().is_none_or(|(_, b)| u > *b) {
            best = Some((pol, u));
        }
        let mut i = 0;
        loop {
            if i == ns {
                return Ok(best.expect("at least one policy"));
            }
            choice[i] += 1;
            if choice[i] < na {
                break;
            }
            choice[i] = 0;
            i += 1;
        }
    }
}
