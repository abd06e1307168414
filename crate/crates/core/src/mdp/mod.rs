//! Discrete MDPs, tabular policies and the trajectory-distribution primitives
//! every inference route builds on.
//!
//! State-action pairs are flattened as `z = s * num_actions + a`. The joint
//! transition `P(z'|z) = π(a'|s') p(s'|s,a)` is column-stochastic: column `z`
//! is the distribution of the next pair.
//!
//! Discounting is kept out of the messages. The reward at step `t` is
//! `γ^{t-1} R(z_t)`; the scalar `γ^{t-1}` is applied to mixture weights and
//! utility sums only, so backward messages start from the undiscounted `R`.

mod brute;
pub mod random;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tol;

pub use brute::{brute_force_marginals, enumerate_values, BruteForce};

/// Planning horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Horizon {
    Finite(usize),
    Infinite,
}

impl Horizon {
    pub fn finite(h: usize) -> Result<Self> {
        if h == 0 {
            return Err(Error::InvalidArgument("finite horizon must be at least 1".into()));
        }
        Ok(Horizon::Finite(h))
    }

    pub fn mode(&self) -> &'static str {
        match self {
            Horizon::Finite(_) => "finite",
            Horizon::Infinite => "infinite",
        }
    }
}

impl fmt::Display for Horizon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Horizon::Finite(h) => write!(f, "{h}"),
            Horizon::Infinite => write!(f, "inf"),
        }
    }
}

impl FromStr for Horizon {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "inf" | "infinite" => Ok(Horizon::Infinite),
            other => {
                let h: usize = other.parse().map_err(|_| {
                    Error::InvalidArgument(format!("horizon `{other}` is neither an integer nor `inf`"))
                })?;
                Horizon::finite(h)
            }
        }
    }
}

/// A vector indexed by state-action pairs: a distribution (forward messages,
/// marginals) or a nonnegative potential (backward messages, Q-functions).
#[derive(Debug, Clone, PartialEq)]
pub struct StateActionDist(pub DVector<f64>);

impl StateActionDist {
    pub fn zeros(n: usize) -> Self {
        Self(DVector::zeros(n))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.0.sum()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn is_potential(&self) -> bool {
        self.0.iter().all(|v| v.is_finite() && *v >= 0.0)
    }

    pub fn is_distribution(&self, tol: f64) -> bool {
        self.is_potential() && (self.sum() - 1.0).abs() <= tol
    }

    /// Normalized copy; `None` when the total mass is zero.
    pub fn normalized(&self) -> Option<Self> {
        let s = self.sum();
        (s > 0.0).then(|| Self(&self.0 / s))
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        max_abs_diff(&self.0, &other.0)
    }
}

pub(crate) fn max_abs_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Tabular stochastic policy `π(a|s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    num_states: usize,
    num_actions: usize,
    table: Vec<f64>,
}

impl TabularPolicy {
    /// Rows are `table[s][a]`; each must be a probability vector.
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let num_states = rows.len();
        if num_states == 0 {
            return Err(Error::invalid("policy", "no states"));
        }
        let num_actions = rows[0].len();
        let mut table = Vec::with_capacity(num_states * num_actions);
        for (s, row) in rows.into_iter().enumerate() {
            if row.len() != num_actions {
                return Err(Error::DimensionMismatch {
                    what: "policy row",
                    expected: num_actions,
                    got: row.len(),
                });
            }
            check_probability_row(&row, tol::STRUCTURAL, || format!("policy[{s}]"))?;
            table.extend(row);
        }
        Ok(Self {
            num_states,
            num_actions,
            table,
        })
    }

    pub(crate) fn from_flat_unchecked(num_states: usize, num_actions: usize, table: Vec<f64>) -> Self {
        debug_assert_eq!(table.len(), num_states * num_actions);
        Self {
            num_states,
            num_actions,
            table,
        }
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        let p = 1.0 / num_actions as f64;
        Self::from_flat_unchecked(num_states, num_actions, vec![p; num_states * num_actions])
    }

    /// Deterministic policy choosing `actions[s]` in state `s`.
    pub fn deterministic(num_actions: usize, actions: &[usize]) -> Result<Self> {
        let mut table = vec![0.0; actions.len() * num_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= num_actions {
                return Err(Error::invalid(
                    "policy",
                    format!("action {a} out of range in state {s}"),
                ));
            }
            table[s * num_actions + a] = 1.0;
        }
        Ok(Self::from_flat_unchecked(actions.len(), num_actions, table))
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.table[s * self.num_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.table[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.table
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.table.chunks(self.num_actions).map(<[f64]>::to_vec).collect()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.table
            .iter()
            .zip(&other.table)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn check_probability_row(row: &[f64], tol: f64, name: impl Fn() -> String) -> Result<()> {
    if let Some(v) = row.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::invalid(name(), format!("entry {v} is negative or not finite")));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > tol {
        return Err(Error::invalid(name(), format!("sums to {sum}, not 1")));
    }
    Ok(())
}

/// Tabular MDP with stationary reward `R(s,a) ≥ 0` and discount `γ ∈ [0,1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMDP {
    num_states: usize,
    num_actions: usize,
    initial: Vec<f64>,
    /// `p(s'|s,a)` at `[(s * A + a) * S + s']`.
    transition: Vec<f64>,
    /// `R(s,a)` at `[s * A + a]`.
    reward: Vec<f64>,
    discount: f64,
}

/// On-disk layout of a discrete model.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscreteMdpJson {
    pub num_states: usize,
    pub num_actions: usize,
    pub gamma: f64,
    pub initial: Vec<f64>,
    pub transition: Vec<Vec<Vec<f64>>>,
    pub reward: Vec<Vec<f64>>,
}

impl DiscreteMDP {
    /// `transition[s][a][s']`, `reward[s][a]`.
    pub fn new(
        initial: Vec<f64>,
        transition: Vec<Vec<Vec<f64>>>,
        reward: Vec<Vec<f64>>,
        discount: f64,
    ) -> Result<Self> {
        let num_states = initial.len();
        if num_states == 0 {
            return Err(Error::invalid("num_states", "must be positive"));
        }
        if transition.len() != num_states {
            return Err(Error::DimensionMismatch {
                what: "transition (states)",
                expected: num_states,
                got: transition.len(),
            });
        }
        let num_actions = transition[0].len();
        if num_actions == 0 {
            return Err(Error::invalid("num_actions", "must be positive"));
        }
        check_probability_row(&initial, tol::STRUCTURAL, || "initial".to_string())?;
        if !(0.0..1.0).contains(&discount) {
            return Err(Error::invalid("gamma", format!("{discount} is outside [0, 1)")));
        }

        let mut flat_t = Vec::with_capacity(num_states * num_actions * num_states);
        for (s, per_action) in transition.into_iter().enumerate() {
            if per_action.len() != num_actions {
                return Err(Error::DimensionMismatch {
                    what: "transition (actions)",
                    expected: num_actions,
                    got: per_action.len(),
                });
            }
            for (a, row) in per_action.into_iter().enumerate() {
                if row.len() != num_states {
                    return Err(Error::DimensionMismatch {
                        what: "transition (next states)",
                        expected: num_states,
                        got: row.len(),
                    });
                }
                check_probability_row(&row, tol::STRUCTURAL, || format!("transition[{s}][{a}]"))?;
                flat_t.extend(row);
            }
        }

        if reward.len() != num_states {
            return Err(Error::DimensionMismatch {
                what: "reward (states)",
                expected: num_states,
                got: reward.len(),
            });
        }
        let mut flat_r = Vec::with_capacity(num_states * num_actions);
        for (s, row) in reward.into_iter().enumerate() {
            if row.len() != num_actions {
                return Err(Error::DimensionMismatch {
                    what: "reward (actions)",
                    expected: num_actions,
                    got: row.len(),
                });
            }
            for (a, r) in row.iter().enumerate() {
                if !r.is_finite() || *r < 0.0 {
                    return Err(Error::invalid(
                        format!("reward[{s}][{a}]"),
                        format!("{r} is negative or not finite; rewards must be nonnegative"),
                    ));
                }
            }
            flat_r.extend(row);
        }

        Ok(Self {
            num_states,
            num_actions,
            initial,
            transition: flat_t,
            reward: flat_r,
            discount,
        })
    }

    pub fn from_json_value(raw: DiscreteMdpJson) -> Result<Self> {
        if raw.initial.len() != raw.num_states {
            return Err(Error::DimensionMismatch {
                what: "initial",
                expected: raw.num_states,
                got: raw.initial.len(),
            });
        }
        if let Some(row) = raw.transition.first() {
            if row.len() != raw.num_actions {
                return Err(Error::DimensionMismatch {
                    what: "transition (actions)",
                    expected: raw.num_actions,
                    got: row.len(),
                });
            }
        }
        Self::new(raw.initial, raw.transition, raw.reward, raw.gamma)
    }

    /// Adds a constant to every reward. Shifting changes the EM trajectory;
    /// it only preserves the optimal policy's argmax when the horizon
    /// weighting is uniform, so this is an experimental ingestion option.
    pub fn with_reward_shift(mut self, shift: f64) -> Result<Self> {
        for r in &mut self.reward {
            *r += shift;
            if *r < 0.0 || !r.is_finite() {
                return Err(Error::invalid(
                    "reward",
                    format!("shift {shift} makes a reward negative"),
                ));
            }
        }
        Ok(self)
    }

    pub fn to_json_value(&self) -> DiscreteMdpJson {
        let (ns, na) = (self.num_states, self.num_actions);
        DiscreteMdpJson {
            num_states: ns,
            num_actions: na,
            gamma: self.discount,
            initial: self.initial.clone(),
            transition: (0..ns)
                .map(|s| (0..na).map(|a| self.next_state_row(s, a).to_vec()).collect())
                .collect(),
            reward: self.reward.chunks(na).map(<[f64]>::to_vec).collect(),
        }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    /// Number of state-action pairs |Z|.
    pub fn num_pairs(&self) -> usize {
        self.num_states * self.num_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.num_actions + a]
    }

    /// Reward as a vector over flattened state-action pairs.
    pub fn reward_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.reward)
    }

    pub fn transition_prob(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transition[(s * self.num_actions + a) * self.num_states + next]
    }

    pub fn next_state_row(&self, s: usize, a: usize) -> &[f64] {
        let base = (s * self.num_actions + a) * self.num_states;
        &self.transition[base..base + self.num_states]
    }

    pub(crate) fn check_policy(&self, policy: &TabularPolicy) -> Result<()> {
        if policy.num_states() != self.num_states {
            return Err(Error::DimensionMismatch {
                what: "policy states",
                expected: self.num_states,
                got: policy.num_states(),
            });
        }
        if policy.num_actions() != self.num_actions {
            return Err(Error::DimensionMismatch {
                what: "policy actions",
                expected: self.num_actions,
                got: policy.num_actions(),
            });
        }
        Ok(())
    }
}

/// Matrix-free view of `P(z'|z) = π(a'|s') p(s'|s,a)`.
///
/// Products cost O(|S|·|Z|) instead of O(|Z|²) by pushing mass through the
/// state transition first and splitting it over actions afterwards.
#[derive(Debug, Clone, Copy)]
pub struct JointTransition<'a> {
    mdp: &'a DiscreteMDP,
    policy: &'a TabularPolicy,
}

impl<'a> JointTransition<'a> {
    pub fn new(mdp: &'a DiscreteMDP, policy: &'a TabularPolicy) -> Result<Self> {
        mdp.check_policy(policy)?;
        Ok(Self { mdp, policy })
    }

    pub fn dim(&self) -> usize {
        self.mdp.num_pairs()
    }

    /// `P v`: propagates a forward message one step.
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let (ns, na) = (self.mdp.num_states, self.mdp.num_actions);
        let mut next_state = vec![0.0; ns];
        for z in 0..ns * na {
            let w = v[z];
            if w == 0.0 {
                continue;
            }
            let row = &self.mdp.transition[z * ns..(z + 1) * ns];
            for (acc, p) in next_state.iter_mut().zip(row) {
                *acc += w * p;
            }
        }
        let mut out = DVector::zeros(ns * na);
        for (s, &mass) in next_state.iter().enumerate() {
            for (a, pi) in self.policy.row(s).iter().enumerate() {
                out[s * na + a] = mass * pi;
            }
        }
        out
    }

    /// `Pᵀ w`: propagates a backward message one step.
    pub fn apply_transpose(&self, w: &DVector<f64>) -> DVector<f64> {
        let (ns, na) = (self.mdp.num_states, self.mdp.num_actions);
        let state_value: Vec<f64> = (0..ns)
            .map(|s| {
                self.policy
                    .row(s)
                    .iter()
                    .enumerate()
                    .map(|(a, pi)| pi * w[s * na + a])
                    .sum()
            })
            .collect();
        DVector::from_iterator(
            ns * na,
            (0..ns * na).map(|z| {
                self.mdp.transition[z * ns..(z + 1) * ns]
                    .iter()
                    .zip(&state_value)
                    .map(|(p, v)| p * v)
                    .sum()
            }),
        )
    }

    /// Dense `|Z|×|Z|` matrix with entry `(z', z) = P(z'|z)`.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let (ns, na) = (self.mdp.num_states, self.mdp.num_actions);
        let nz = ns * na;
        DMatrix::from_fn(nz, nz, |zn, z| {
            let (sn, an) = (zn / na, zn % na);
            self.policy.prob(sn, an) * self.mdp.transition[z * ns + sn]
        })
    }

    /// `α₁(s,a) = p₁(s) π(a|s)`.
    pub fn initial_message(&self) -> DVector<f64> {
        let na = self.mdp.num_actions;
        DVector::from_fn(self.dim(), |z, _| {
            self.mdp.initial[z / na] * self.policy.prob(z / na, z % na)
        })
    }
}

/// Dense joint state-action transition matrix; every column sums to one.
pub fn joint_transition(mdp: &DiscreteMDP, policy: &TabularPolicy) -> Result<DMatrix<f64>> {
    Ok(JointTransition::new(mdp, policy)?.to_dense())
}

/// Forward messages `α₁..α_H`; `α_t` is the state-action marginal at step `t`.
pub fn forward_messages(mdp: &DiscreteMDP, policy: &TabularPolicy, horizon: usize) -> Result<Vec<StateActionDist>> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let joint = JointTransition::new(mdp, policy)?;
    let mut out = Vec::with_capacity(horizon);
    out.push(StateActionDist(joint.initial_message()));
    for t in 1..horizon {
        let next = joint.apply(&out[t - 1].0);
        out.push(StateActionDist(next));
    }
    Ok(out)
}

/// Total expected discounted reward of `policy`.
///
/// The infinite-horizon value is computed exactly from the state-value
/// linear system `(I − γ P_π) V = R_π`, `U = p₁ · V`, which needs no mixing
/// assumption on the chain.
pub fn utility(mdp: &DiscreteMDP, policy: &TabularPolicy, horizon: Horizon) -> Result<f64> {
    match horizon {
        Horizon::Finite(h) => {
            let joint = JointTransition::new(mdp, policy)?;
            let r = mdp.reward_vector();
            let mut alpha = joint.initial_message();
            let mut total = 0.0;
            let mut discount = 1.0;
            for t in 0..h {
                if t > 0 {
                    alpha = joint.apply(&alpha);
                }
                total += discount * alpha.dot(&r);
                discount *= mdp.discount;
            }
            Ok(total)
        }
        Horizon::Infinite => {
            let v = state_values(mdp, policy)?;
            Ok(mdp.initial.iter().zip(v.iter()).map(|(p, v)| p * v).sum())
        }
    }
}

/// Infinite-horizon state values under `policy`.
fn state_values(mdp: &DiscreteMDP, policy: &TabularPolicy) -> Result<DVector<f64>> {
    mdp.check_policy(policy)?;
    let (ns, na) = (mdp.num_states, mdp.num_actions);
    let gamma = mdp.discount;
    let mut system = DMatrix::<f64>::identity(ns, ns);
    let mut rhs = DVector::zeros(ns);
    for s in 0..ns {
        for a in 0..na {
            let pi = policy.prob(s, a);
            if pi == 0.0 {
                continue;
            }
            rhs[s] += pi * mdp.reward(s, a);
            for (sn, p) in mdp.next_state_row(s, a).iter().enumerate() {
                system[(s, sn)] -= gamma * pi * p;
            }
        }
    }
    system.lu().solve(&rhs).ok_or(Error::Singular("state-value system"))
}

/// Classical state-action values `Q^π(s,a) = R(s,a) + γ Σ π(a'|s')p(s'|s,a) Q^π(s',a')`.
///
/// For `Finite(k)` this is the value with `k` steps remaining (k applications
/// of the Bellman backup starting from `R`).
pub fn classical_policy_evaluation(
    mdp: &DiscreteMDP,
    policy: &TabularPolicy,
    horizon: Horizon,
) -> Result<StateActionDist> {
    let joint = JointTransition::new(mdp, policy)?;
    let r = mdp.reward_vector();
    match horizon {
        Horizon::Finite(k) => {
            if k == 0 {
                return Err(Error::InvalidArgument("need at least one remaining step".into()));
            }
            let mut q = r.clone();
            for _ in 1..k {
                q = &r + joint.apply_transpose(&q) * mdp.discount;
            }
            Ok(StateActionDist(q))
        }
        Horizon::Infinite => {
            let v = state_values(mdp, policy)?;
            let (ns, na) = (mdp.num_states, mdp.num_actions);
            Ok(StateActionDist(DVector::from_fn(ns * na, |z, _| {
                let ev: f64 = mdp.transition[z * ns..(z + 1) * ns]
                    .iter()
                    .zip(v.iter())
                    .map(|(p, v)| p * v)
                    .sum();
                r[z] + mdp.discount * ev
            })))
        }
    }
}

/// System reversal dynamics `p(z_t | z_{t+1})` as a matrix with entry
/// `(z, z') = P(z'|z) α_t(z) / α_{t+1}(z')`.
///
/// `alpha_next` must equal `joint · alpha_t`. Columns for unreachable `z'`
/// (`α_{t+1}(z') = 0`) are all zeros.
pub fn reversal_dynamics(
    alpha_t: &StateActionDist,
    joint: &DMatrix<f64>,
    alpha_next: &StateActionDist,
) -> DMatrix<f64> {
    let nz = alpha_t.len();
    debug_assert!(
        max_abs_diff(&(joint * &alpha_t.0), &alpha_next.0) <= tol::NORMALIZATION,
        "alpha_next is not the forward propagation of alpha_t"
    );
    DMatrix::from_fn(nz, nz, |z, zn| {
        let denom = alpha_next.0[zn];
        if denom > 0.0 {
            joint[(zn, z)] * alpha_t.0[z] / denom
        } else {
            0.0
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn single_state(reward: f64, gamma: f64) -> DiscreteMDP {
        DiscreteMDP::new(vec![1.0], vec![vec![vec![1.0]]], vec![vec![reward]], gamma).unwrap()
    }

    #[test]
    fn single_pair_joint_is_identity() {
        let mdp = single_state(1.0, 0.5);
        let p = joint_transition(&mdp, &TabularPolicy::uniform(1, 1)).unwrap();
        assert_eq!(p, DMatrix::from_element(1, 1, 1.0));
    }

    #[test]
    fn joint_matches_hand_expansion() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mdp = random::random_mdp(&mut rng, 2, 2, 0.9);
        let pol = random::random_policy(&mut rng, 2, 2);
        let p = joint_transition(&mdp, &pol).unwrap();
        for z in 0..4 {
            let (s, a) = (z / 2, z % 2);
            let col: f64 = p.column(z).sum();
            assert_relative_eq!(col, 1.0, epsilon = 1e-12);
            for zn in 0..4 {
                let (sn, an) = (zn / 2, zn % 2);
                let expect = pol.prob(sn, an) * mdp.transition_prob(s, a, sn);
                assert_relative_eq!(p[(zn, z)], expect, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn matrix_free_products_match_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mdp = random::random_mdp(&mut rng, 4, 3, 0.9);
        let pol = random::random_policy(&mut rng, 4, 3);
        let joint = JointTransition::new(&mdp, &pol).unwrap();
        let dense = joint.to_dense();
        let v = DVector::from_fn(12, |i, _| (i as f64 * 0.37).sin().abs());
        assert!(max_abs_diff(&joint.apply(&v), &(&dense * &v)) < 1e-14);
        assert!(max_abs_diff(&joint.apply_transpose(&v), &(dense.transpose() * &v)) < 1e-14);
    }

    #[test]
    fn utility_of_single_pair_is_geometric() {
        let mdp = single_state(1.0, 0.5);
        let pol = TabularPolicy::uniform(1, 1);
        assert_relative_eq!(utility(&mdp, &pol, Horizon::Finite(3)).unwrap(), 1.75, epsilon = 1e-15);
        assert_relative_eq!(utility(&mdp, &pol, Horizon::Infinite).unwrap(), 2.0, epsilon = 1e-14);
        let q = classical_policy_evaluation(&mdp, &pol, Horizon::Infinite).unwrap();
        assert_relative_eq!(q.0[0], 2.0, epsilon = 1e-14);
    }

    #[test]
    fn forward_messages_stay_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mdp = random::random_mdp(&mut rng, 5, 3, 0.9);
        let pol = random::random_policy(&mut rng, 5, 3);
        for a in forward_messages(&mdp, &pol, 30).unwrap() {
            assert!(a.is_distribution(1e-10));
        }
        let one = forward_messages(&single_state(1.0, 0.5), &TabularPolicy::uniform(1, 1), 3).unwrap();
        assert!(one.iter().all(|a| a.0[0] == 1.0));
    }

    #[test]
    fn finite_utility_is_monotone_in_horizon() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mdp = random::random_mdp(&mut rng, 3, 2, 0.8);
        let pol = random::random_policy(&mut rng, 3, 2);
        let mut last = 0.0;
        for h in 1..25 {
            let u = utility(&mdp, &pol, Horizon::Finite(h)).unwrap();
            assert!(u >= last);
            last = u;
        }
        assert!(utility(&mdp, &pol, Horizon::Infinite).unwrap() >= last);
    }

    #[test]
    fn swap_chain_reversal_is_the_swap() {
        // Two states, one action, deterministic swap; uniform marginal is stationary.
        let mdp = DiscreteMDP::new(
            vec![0.5, 0.5],
            vec![vec![vec![0.0, 1.0]], vec![vec![1.0, 0.0]]],
            vec![vec![1.0], vec![0.0]],
            0.9,
        )
        .unwrap();
        let pol = TabularPolicy::uniform(2, 1);
        let p = joint_transition(&mdp, &pol).unwrap();
        let alpha = StateActionDist(DVector::from_vec(vec![0.5, 0.5]));
        let rev = reversal_dynamics(&alpha, &p, &alpha);
        assert_eq!(rev, p.transpose());
    }

    #[test]
    fn unreachable_columns_are_zero() {
        let mdp = DiscreteMDP::new(
            vec![1.0, 0.0],
            vec![vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0]]],
            vec![vec![1.0], vec![1.0]],
            0.9,
        )
        .unwrap();
        let pol = TabularPolicy::uniform(2, 1);
        let p = joint_transition(&mdp, &pol).unwrap();
        let a = forward_messages(&mdp, &pol, 2).unwrap();
        let rev = reversal_dynamics(&a[0], &p, &a[1]);
        assert_eq!(rev.column(1).sum(), 0.0);
        assert_eq!(rev[(0, 0)], 1.0);
    }

    #[test]
    fn rejects_bad_models() {
        assert!(DiscreteMDP::new(vec![0.5, 0.4], vec![vec![vec![1.0, 0.0]]; 2], vec![vec![0.0]; 2], 0.9).is_err());
        assert!(DiscreteMDP::new(vec![1.0], vec![vec![vec![1.0]]], vec![vec![-1.0]], 0.9).is_err());
        assert!(DiscreteMDP::new(vec![1.0], vec![vec![vec![1.0]]], vec![vec![1.0]], 1.0).is_err());
        assert!(DiscreteMDP::new(vec![1.0], vec![vec![vec![0.9]]], vec![vec![1.0]], 0.5).is_err());
        let mdp = single_state(1.0, 0.5);
        assert!(matches!(
            joint_transition(&mdp, &TabularPolicy::uniform(2, 1)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn horizon_parses() {
        assert_eq!("inf".parse::<Horizon>().unwrap(), Horizon::Infinite);
        assert_eq!("12".parse::<Horizon>().unwrap(), Horizon::Finite(12));
        assert!("0".parse::<Horizon>().is_err());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mdp = random::random_mdp(&mut rng, 3, 2, 0.95);
        let text = serde_json::to_string(&mdp.to_json_value()).unwrap();
        let back = DiscreteMDP::from_json_value(serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back, mdp);
    }
}
