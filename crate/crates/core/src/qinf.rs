//! Q-function inference of the reward-weighted marginals in Θ(H).
//!
//! Conditioned on the next pair, the reward-weighted distribution over `z_τ`
//! does not depend on the component `t`; it is the reversal of the plain
//! trajectory distribution, `p(z_τ | z_{τ+1})`. Summing components therefore
//! commutes with the reversal, and
//!
//! ```text
//! Q_τ(z) = Σ_{t≥τ} q(z_τ = z, t)
//!        = γ^{τ-1} α_τ(z) R(z) / U  +  Σ_{z'} p(z_τ = z | z_{τ+1} = z') Q_{τ+1}(z')
//! ```
//!
//! runs backwards from `Q_H = γ^{H-1} α_H ⊙ R / U` in one matrix-vector
//! product per step. For an infinite horizon, once the state-action chain is
//! stationary at `τ̂` the Q-functions decay geometrically,
//! `Q_{τ+1} = γ Q_τ`, and the tail of the sum is
//! `γ^{τ̂-1} / (1-γ) · Q` with `Q = (I − γ ←P)^{-1} μ`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mdp::{self, DiscreteMDP, Horizon, JointTransition, StateActionDist, TabularPolicy};
use crate::OpCounts;

/// Above this many state-action pairs the stationary Q-function is found by
/// fixed-point iteration instead of a dense solve.
pub const DIRECT_SOLVE_LIMIT: usize = 2000;

/// Finite-horizon Q-functions.
#[derive(Debug, Clone)]
pub struct QFunctions {
    /// `Q_1..Q_H`.
    pub q: Vec<StateActionDist>,
    /// Mixture weights `q(t) = Σ_z q(z_t = z, t)`.
    pub weights: Vec<f64>,
    pub utility: f64,
    pub counts: OpCounts,
}

impl QFunctions {
    pub fn horizon(&self) -> usize {
        self.q.len()
    }
}

/// `q(z_τ = z, τ) = γ^{τ-1} α_τ(z) R(z) / U`.
pub fn q_component_term(alpha_tau: &StateActionDist, mdp: &DiscreteMDP, tau: usize, utility: f64) -> StateActionDist {
    debug_assert!(utility > 0.0);
    let scale = mdp.discount().powi(tau as i32 - 1) / utility;
    StateActionDist(alpha_tau.0.component_mul(&mdp.reward_vector()) * scale)
}

/// One reversal step `Σ_{z'} p(z_t = z | z_{t+1} = z') v(z')` without forming
/// the reversal matrix: `α_t(z) · (Pᵀ (v / α_{t+1}))(z)`, with unreachable
/// `z'` contributing nothing.
fn reverse_step(
    joint: &JointTransition<'_>,
    alpha_t: &DVector<f64>,
    alpha_next: &DVector<f64>,
    v: &DVector<f64>,
) -> DVector<f64> {
    let ratio = v.zip_map(alpha_next, |q, a| if a > 0.0 { q / a } else { 0.0 });
    joint.apply_transpose(&ratio).component_mul(alpha_t)
}

/// Q-functions `Q_1..Q_H` by one forward pass and one backward reversal pass.
pub fn q_functions_finite(mdp: &DiscreteMDP, policy: &TabularPolicy, horizon: usize) -> Result<QFunctions> {
    let alphas = mdp::forward_messages(mdp, policy, horizon)?;
    let joint = JointTransition::new(mdp, policy)?;
    let reward = mdp.reward_vector();
    let gamma = mdp.discount();

    let mut weights: Vec<f64> = alphas
        .iter()
        .enumerate()
        .map(|(t, a)| gamma.powi(t as i32) * a.0.dot(&reward))
        .collect();
    let utility: f64 = weights.iter().sum();
    if utility <= 0.0 {
        return Err(Error::ZeroUtility);
    }
    weights.iter_mut().for_each(|w| *w /= utility);

    let mut q = vec![StateActionDist::zeros(mdp.num_pairs()); horizon];
    q[horizon - 1] = q_component_term(&alphas[horizon - 1], mdp, horizon, utility);
    for tau in (1..horizon).rev() {
        let carried = reverse_step(&joint, &alphas[tau - 1].0, &alphas[tau].0, &q[tau].0);
        q[tau - 1] = StateActionDist(q_component_term(&alphas[tau - 1], mdp, tau, utility).0 + carried);
    }

    Ok(QFunctions {
        q,
        weights,
        utility,
        counts: OpCounts {
            messages: 2 * horizon as u64,
            products: 0,
        },
    })
}

/// `Σ_τ Q_τ(z)`, equal to the forward-backward double sum.
pub fn q_policy_statistic(qf: &QFunctions) -> StateActionDist {
    let mut acc = DVector::zeros(qf.q[0].len());
    for q in &qf.q {
        acc += &q.0;
    }
    StateActionDist(acc)
}

/// Settings for the stationary (infinite-horizon) route.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StationaryOptions {
    /// Max-norm threshold on `‖α_{t+1} − α_t‖` that declares stationarity.
    pub tol: f64,
    /// Forward-iteration cap.
    pub cap: usize,
    /// Convergence threshold of the fixed-point solver, when it is used.
    pub fixed_point_tol: f64,
    pub fixed_point_cap: usize,
    /// Force the fixed-point solver regardless of size.
    pub force_fixed_point: bool,
}

impl Default for StationaryOptions {
    fn default() -> Self {
        Self {
            tol: 0.01,
            cap: 100_000,
            fixed_point_tol: 1e-12,
            fixed_point_cap: 1_000_000,
            force_fixed_point: false,
        }
    }
}

impl StationaryOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, ..Self::default() }
    }
}

/// Forward messages `α_1..α_{τ̂+1}`. With `t` the first index where
/// `‖α_{t+1} − α_t‖_∞ ≤ tol`, `τ̂ = t + 1` (one safety step past the test).
fn forward_until_stationary(joint: &JointTransition<'_>, tol: f64, cap: usize) -> Result<(Vec<DVector<f64>>, usize)> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "stationarity tolerance must be positive, got {tol}"
        )));
    }
    let mut alphas = vec![joint.initial_message()];
    let mut last_change = f64::INFINITY;
    for t in 1..=cap {
        let next = joint.apply(&alphas[t - 1]);
        last_change = mdp::max_abs_diff(&next, &alphas[t - 1]);
        alphas.push(next);
        if last_change <= tol {
            let extra = joint.apply(&alphas[t]);
            alphas.push(extra);
            return Ok((alphas, t + 1));
        }
    }
    // Periodic chains never settle; report the smallest lag that repeats.
    let n = alphas.len();
    let period = (2..=8usize)
        .filter(|p| *p < n)
        .find(|p| mdp::max_abs_diff(&alphas[n - 1], &alphas[n - 1 - p]) <= tol);
    Err(Error::NotConverged {
        what: "forward messages (stationary distribution)",
        iterations: cap,
        last_change,
        period,
    })
}

/// Stationary state-action distribution `α = α_τ̂` by power iteration, and
/// the convergence index `τ̂`.
pub fn stationary_distribution(
    mdp: &DiscreteMDP,
    policy: &TabularPolicy,
    tol: f64,
    cap: usize,
) -> Result<(StateActionDist, usize)> {
    let joint = JointTransition::new(mdp, policy)?;
    let (mut alphas, tau_hat) = forward_until_stationary(&joint, tol, cap)?;
    alphas.truncate(tau_hat);
    Ok((StateActionDist(alphas.pop().expect("at least one message")), tau_hat))
}

/// Stationary reversal `←p(z | z') = P(z'|z) α(z) / (Pα)(z')`.
///
/// The denominator is the propagated `Pα` rather than `α` itself, so every
/// column over a reachable `z'` sums to one even though `α` is only
/// stationary to within the tolerance.
pub fn stationary_reversal(joint: &DMatrix<f64>, alpha: &StateActionDist) -> DMatrix<f64> {
    let next = StateActionDist(joint * &alpha.0);
    mdp::reversal_dynamics(alpha, joint, &next)
}

/// Solves `(I − γ ←P) Q = μ` on the support of `α`; `Q` is zero elsewhere.
pub fn stationary_q_direct(
    alpha: &StateActionDist,
    reversal: &DMatrix<f64>,
    mu: &StateActionDist,
    gamma: f64,
) -> Result<StateActionDist> {
    let support: Vec<usize> = (0..alpha.len()).filter(|&z| alpha.0[z] > 0.0).collect();
    let n = support.len();
    let system = DMatrix::from_fn(n, n, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - gamma * reversal[(support[i], support[j])]
    });
    let rhs = DVector::from_fn(n, |i, _| mu.0[support[i]]);
    let sol = system.lu().solve(&rhs).ok_or(Error::Singular("stationary Q system"))?;
    let mut q = DVector::zeros(alpha.len());
    for (i, &z) in support.iter().enumerate() {
        q[z] = sol[i].max(0.0);
    }
    Ok(StateActionDist(q))
}

fn fixed_point(
    mu: &DVector<f64>,
    gamma: f64,
    tol: f64,
    cap: usize,
    apply: impl Fn(&DVector<f64>) -> DVector<f64>,
) -> Result<(DVector<f64>, usize)> {
    let mut q = DVector::zeros(mu.len());
    let mut change = f64::INFINITY;
    for it in 1..=cap {
        let next = mu + apply(&q) * gamma;
        change = mdp::max_abs_diff(&next, &q);
        q = next;
        if change <= tol {
            return Ok((q, it));
        }
    }
    Err(Error::NotConverged {
        what: "stationary Q fixed point",
        iterations: cap,
        last_change: change,
        period: None,
    })
}

/// Iterates `Q ← μ + γ ←P Q` from zero. Returns the solution and the number
/// of iterations used.
pub fn stationary_q_fixed_point(
    mu: &StateActionDist,
    reversal: &DMatrix<f64>,
    gamma: f64,
    tol: f64,
    cap: usize,
) -> Result<(StateActionDist, usize)> {
    let (q, it) = fixed_point(&mu.0, gamma, tol, cap, |q| reversal * q)?;
    Ok((StateActionDist(q), it))
}

/// Stationary quantities of the infinite-horizon route.
#[derive(Debug, Clone)]
pub struct StationarySolution {
    pub alpha: StateActionDist,
    pub tau_hat: usize,
    /// Dense `←P`; left empty when the problem exceeds [`DIRECT_SOLVE_LIMIT`].
    pub reversal: Option<DMatrix<f64>>,
    /// Stationary Q-function `Q = γ^{1-τ̂} Q_τ̂`.
    pub q: StateActionDist,
    pub utility: f64,
}

/// Infinite-horizon statistic and its parts.
#[derive(Debug, Clone)]
pub struct InfiniteStatistic {
    /// `Σ_{t<τ̂} Q_t + γ^{τ̂-1}/(1−γ) Q`.
    pub statistic: StateActionDist,
    /// Pre-stationary Q-functions `Q_1..Q_{τ̂-1}`.
    pub prefix: Vec<StateActionDist>,
    pub stationary: StationarySolution,
    pub counts: OpCounts,
}

/// Infinite-horizon EM / policy-gradient statistic.
///
/// Forward messages are iterated to stationarity, the stationary Q-function
/// is solved for, `Q_τ̂ = γ^{τ̂-1} Q` seeds the time-indexed reversal
/// recursion back to `Q_1`, and the stationary tail is summed in closed form.
/// The utility normalizing `μ = α ⊙ R / U` is the exact infinite-horizon one.
pub fn q_statistic_infinite(
    mdp: &DiscreteMDP,
    policy: &TabularPolicy,
    opts: &StationaryOptions,
) -> Result<InfiniteStatistic> {
    let gamma = mdp.discount();
    let joint = JointTransition::new(mdp, policy)?;
    let utility = mdp::utility(mdp, policy, Horizon::Infinite)?;
    if utility <= 0.0 {
        return Err(Error::ZeroUtility);
    }
    let (alphas, tau_hat) = forward_until_stationary(&joint, opts.tol, opts.cap)?;
    let mut counts = OpCounts {
        messages: alphas.len() as u64,
        products: 0,
    };

    let alpha = StateActionDist(alphas[tau_hat - 1].clone());
    let mu = StateActionDist(alpha.0.component_mul(&mdp.reward_vector()) / utility);
    let nz = mdp.num_pairs();
    let (q, reversal) = if nz <= DIRECT_SOLVE_LIMIT && !opts.force_fixed_point {
        let rev = stationary_reversal(&joint.to_dense(), &alpha);
        (stationary_q_direct(&alpha, &rev, &mu, gamma)?, Some(rev))
    } else {
        let (alpha_s, next) = (&alphas[tau_hat - 1], &alphas[tau_hat]);
        let (q, it) = fixed_point(&mu.0, gamma, opts.fixed_point_tol, opts.fixed_point_cap, |v| {
            reverse_step(&joint, alpha_s, next, v)
        })?;
        counts.messages += it as u64;
        (StateActionDist(q), None)
    };
    counts.messages += 1;

    let tail_scale = gamma.powi(tau_hat as i32 - 1);
    let mut current = &q.0 * tail_scale;
    let mut prefix = vec![StateActionDist::zeros(nz); tau_hat - 1];
    let mut statistic = &q.0 * (tail_scale / (1.0 - gamma));
    for t in (1..tau_hat).rev() {
        let carried = reverse_step(&joint, &alphas[t - 1], &alphas[t], &current);
        current = q_component_term(&StateActionDist(alphas[t - 1].clone()), mdp, t, utility).0 + carried;
        statistic += &current;
        prefix[t - 1] = StateActionDist(current.clone());
        counts.messages += 1;
    }

    Ok(InfiniteStatistic {
        statistic: StateActionDist(statistic),
        prefix,
        stationary: StationarySolution {
            alpha,
            tau_hat,
            reversal,
            q,
            utility,
        },
        counts,
    })
}
