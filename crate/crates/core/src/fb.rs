//! Forward-backward (α-β) inference of the reward-weighted marginals.
//!
//! Component `t` of the reward-weighted path distribution is a chain of
//! length `t`, and its marginals are `q(z_τ|t) ∝ α_τ(z) β_{t+1-τ}(z)`.
//! Forward and backward messages are computed once and shared by all
//! `(τ, t)` pairs, but every pair still needs its own elementwise product,
//! which makes the policy statistic Θ(H²).

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::mdp::{DiscreteMDP, JointTransition, StateActionDist, TabularPolicy};
use crate::OpCounts;

/// Backward messages `β_1..β_K` stored as `β_k = scaled[k-1] · exp(log_scale[k-1])`.
///
/// Each scaled message sums to one (or is all zeros when `β_k ≡ 0`), so long
/// horizons do not underflow.
#[derive(Debug, Clone)]
pub struct BackwardMessages {
    scaled: Vec<DVector<f64>>,
    log_scale: Vec<f64>,
}

impl BackwardMessages {
    pub fn len(&self) -> usize {
        self.scaled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scaled.is_empty()
    }

    /// Scaled message `β_k / exp(log_scale(k))`.
    pub fn scaled(&self, k: usize) -> &DVector<f64> {
        &self.scaled[k - 1]
    }

    pub fn log_scale(&self, k: usize) -> f64 {
        self.log_scale[k - 1]
    }

    /// Unscaled `β_k`.
    pub fn value(&self, k: usize) -> StateActionDist {
        let s = self.log_scale(k);
        if s == f64::NEG_INFINITY {
            return StateActionDist::zeros(self.scaled[k - 1].len());
        }
        StateActionDist(self.scaled(k) * s.exp())
    }
}

fn rescale(v: DVector<f64>) -> (DVector<f64>, f64) {
    let total = v.sum();
    if total > 0.0 {
        (v / total, total.ln())
    } else {
        (v, f64::NEG_INFINITY)
    }
}

/// `β_1 = R`, `β_{k+1}(z) = Σ_{z'} P(z'|z) β_k(z')`.
pub fn backward_messages(mdp: &DiscreteMDP, policy: &TabularPolicy, count: usize) -> Result<BackwardMessages> {
    if count == 0 {
        return Err(Error::InvalidArgument("need at least one backward message".into()));
    }
    let joint = JointTransition::new(mdp, policy)?;
    let (first, first_scale) = rescale(mdp.reward_vector());
    let mut scaled = Vec::with_capacity(count);
    let mut log_scale = Vec::with_capacity(count);
    scaled.push(first);
    log_scale.push(first_scale);
    for k in 1..count {
        let (next, s) = rescale(joint.apply_transpose(&scaled[k - 1]));
        let prev = log_scale[k - 1];
        scaled.push(next);
        log_scale.push(prev + s);
    }
    Ok(BackwardMessages { scaled, log_scale })
}

/// Forward and backward messages for a horizon `H`.
#[derive(Debug, Clone)]
pub struct MessageSet {
    pub forward: Vec<StateActionDist>,
    pub backward: BackwardMessages,
}

impl MessageSet {
    pub fn new(mdp: &DiscreteMDP, policy: &TabularPolicy, horizon: usize) -> Result<Self> {
        Ok(Self {
            forward: crate::mdp::forward_messages(mdp, policy, horizon)?,
            backward: backward_messages(mdp, policy, horizon)?,
        })
    }

    pub fn horizon(&self) -> usize {
        self.forward.len()
    }
}

/// A normalized component marginal and its log proportionality constant.
#[derive(Debug, Clone)]
pub struct ComponentMarginal {
    pub dist: StateActionDist,
    /// `ln Σ_z α_τ(z) β_{t+1-τ}(z)`, which equals `ln E[R(z_t)]` for every τ.
    pub log_mass: f64,
}

/// `q(z_τ | t) ∝ α_τ ⊙ β_{t+1-τ}` for `1 ≤ τ ≤ t ≤ H`.
pub fn fb_marginal(messages: &MessageSet, tau: usize, t: usize) -> Result<ComponentMarginal> {
    let h = messages.horizon();
    if !(1 <= tau && tau <= t && t <= h) {
        return Err(Error::InvalidArgument(format!(
            "marginal indices need 1 ≤ τ ≤ t ≤ H, got τ={tau}, t={t}, H={h}"
        )));
    }
    let k = t + 1 - tau;
    let product = messages.forward[tau - 1].0.component_mul(messages.backward.scaled(k));
    let total = product.sum();
    if total <= 0.0 {
        return Err(Error::DegenerateComponent { t });
    }
    Ok(ComponentMarginal {
        dist: StateActionDist(product / total),
        log_mass: total.ln() + messages.backward.log_scale(k),
    })
}

/// Output of [`fb_policy_statistic`].
#[derive(Debug, Clone)]
pub struct FbStatistic {
    /// `Σ_t Σ_{τ≤t} q(z_τ = z, t)`.
    pub statistic: StateActionDist,
    /// Finite-horizon utility used to normalize the mixture weights.
    pub utility: f64,
    /// Mixture weights `q(t)`, `t = 1..H`.
    pub weights: Vec<f64>,
    pub counts: OpCounts,
}

/// The EM / policy-gradient statistic by forward-backward smoothing of
/// every mixture component. Components with zero reward mass get weight 0.
pub fn fb_policy_statistic(mdp: &DiscreteMDP, policy: &TabularPolicy, horizon: usize) -> Result<FbStatistic> {
    let messages = MessageSet::new(mdp, policy, horizon)?;
    let mut counts = OpCounts {
        messages: 2 * horizon as u64,
        products: 0,
    };
    let reward = mdp.reward_vector();
    let gamma = mdp.discount();

    let mut weights: Vec<f64> = messages
        .forward
        .iter()
        .enumerate()
        .map(|(t, a)| gamma.powi(t as i32) * a.0.dot(&reward))
        .collect();
    let utility: f64 = weights.iter().sum();
    if utility <= 0.0 {
        return Err(Error::ZeroUtility);
    }
    weights.iter_mut().for_each(|w| *w /= utility);

    let nz = mdp.num_pairs();
    let mut stat = vec![0.0; nz];
    for t in 1..=horizon {
        let w = weights[t - 1];
        if w == 0.0 {
            continue;
        }
        for tau in 1..=t {
            let alpha = messages.forward[tau - 1].0.as_slice();
            let beta = messages.backward.scaled(t + 1 - tau).as_slice();
            let norm: f64 = alpha.iter().zip(beta).map(|(a, b)| a * b).sum();
            if norm <= 0.0 {
                return Err(Error::DegenerateComponent { t });
            }
            let scale = w / norm;
            for ((acc, a), b) in stat.iter_mut().zip(alpha).zip(beta) {
                *acc += scale * a * b;
            }
            counts.products += 1;
        }
    }

    Ok(FbStatistic {
        statistic: StateActionDist(DVector::from_vec(stat)),
        utility,
        weights,
        counts,
    })
}

/// Time-marginal `q(t) = γ^{t-1} Σ_z α_t(z) R(z) / U`: the share of the
/// utility earned at step `t`.
pub fn time_marginal(mdp: &DiscreteMDP, t: usize, alpha_t: &StateActionDist, utility: f64) -> f64 {
    debug_assert!(utility > 0.0);
    mdp.discount().powi(t as i32 - 1) * alpha_t.0.dot(&mdp.reward_vector()) / utility
}

/// Result of the time-marginal horizon heuristic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cutoff {
    /// The cut-off inequality held at this horizon.
    Triggered(usize),
    /// The cap was reached without the inequality holding.
    Capped(usize),
}

impl Cutoff {
    pub fn horizon(&self) -> usize {
        match *self {
            Cutoff::Triggered(h) | Cutoff::Capped(h) => h,
        }
    }
}

/// Smallest `t` with `q(t+1) ≤ η Σ_{τ≤t} q(τ)`, the truncation rule used by
/// time-marginal infinite-horizon EM.
///
/// The time-marginal is computed the way that method does it, by growing
/// backward messages from the first slice: `q(t) ∝ γ^{t-1} Σ_z α_1(z) β_t(z)`.
/// The rule cannot fire before any reward mass has been seen.
pub fn time_marginal_horizon(mdp: &DiscreteMDP, policy: &TabularPolicy, eta: f64, cap: usize) -> Result<Cutoff> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::InvalidArgument(format!("η must lie in (0, 1), got {eta}")));
    }
    if cap == 0 {
        return Err(Error::InvalidArgument("horizon cap must be positive".into()));
    }
    let joint = JointTransition::new(mdp, policy)?;
    let alpha1 = joint.initial_message();
    let ln_gamma = mdp.discount().ln();

    let (mut beta, mut log_scale) = rescale(mdp.reward_vector());
    let mass = |beta: &DVector<f64>, log_scale: f64, t: usize| {
        if log_scale == f64::NEG_INFINITY {
            return 0.0;
        }
        let dot = alpha1.dot(beta);
        if dot <= 0.0 {
            0.0
        } else {
            (dot.ln() + log_scale + (t as f64 - 1.0) * ln_gamma).exp()
        }
    };

    let mut cumulative = mass(&beta, log_scale, 1);
    for t in 1..cap {
        let (next, s) = rescale(joint.apply_transpose(&beta));
        beta = next;
        log_scale += s;
        let q_next = mass(&beta, log_scale, t + 1);
        if cumulative > 0.0 && q_next <= eta * cumulative {
            return Ok(Cutoff::Triggered(t));
        }
        cumulative += q_next;
    }
    Ok(Cutoff::Capped(cap))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{brute_force_marginals, forward_messages, random, utility, Horizon};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single(gamma: f64) -> (DiscreteMDP, TabularPolicy) {
        (
            DiscreteMDP::new(vec![1.0], vec![vec![vec![1.0]]], vec![vec![1.0]], gamma).unwrap(),
            TabularPolicy::uniform(1, 1),
        )
    }

    #[test]
    fn single_pair_backward_messages_are_one() {
        let (mdp, pol) = single(0.5);
        let b = backward_messages(&mdp, &pol, 4).unwrap();
        for k in 1..=4 {
            assert_relative_eq!(b.value(k).0[0], 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn single_pair_statistic() {
        let (mdp, pol) = single(0.5);
        let s = fb_policy_statistic(&mdp, &pol, 2).unwrap();
        assert_relative_eq!(s.statistic.0[0], 4.0 / 3.0, epsilon = 1e-14);
        let m = MessageSet::new(&mdp, &pol, 3).unwrap();
        for t in 1..=3 {
            for tau in 1..=t {
                assert_relative_eq!(fb_marginal(&m, tau, t).unwrap().dist.0[0], 1.0);
            }
        }
    }

    #[test]
    fn third_backward_message_matches_two_step_expansion() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mdp = random::random_mdp(&mut rng, 2, 2, 0.9);
        let pol = random::random_policy(&mut rng, 2, 2);
        let b = backward_messages(&mdp, &pol, 3).unwrap();
        let p = crate::mdp::joint_transition(&mdp, &pol).unwrap();
        let r = mdp.reward_vector();
        for z in 0..4 {
            let mut expect = 0.0;
            for z1 in 0..4 {
                for z2 in 0..4 {
                    expect += p[(z1, z)] * p[(z2, z1)] * r[z2];
                }
            }
            assert_relative_eq!(b.value(3).0[z], expect, epsilon = 1e-14);
        }
    }

    #[test]
    fn last_slice_marginal_is_reward_weighted_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let mdp = random::random_mdp(&mut rng, 3, 2, 0.9);
        let pol = random::random_policy(&mut rng, 3, 2);
        let m = MessageSet::new(&mdp, &pol, 5).unwrap();
        for t in 1..=5 {
            let got = fb_marginal(&m, t, t).unwrap().dist;
            let expect = StateActionDist(m.forward[t - 1].0.component_mul(&mdp.reward_vector()))
                .normalized()
                .unwrap();
            assert!(got.max_abs_diff(&expect) < 1e-14);
        }
    }

    #[test]
    fn marginals_match_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let mdp = random::random_mdp(&mut rng, 2, 2, 0.85);
        let pol = random::random_policy(&mut rng, 2, 2);
        let m = MessageSet::new(&mdp, &pol, 3).unwrap();
        let bf = brute_force_marginals(&mdp, &pol, 3, 1e6).unwrap();
        for t in 1..=3 {
            for tau in 1..=t {
                let got = fb_marginal(&m, tau, t).unwrap();
                assert!(got.dist.max_abs_diff(&bf.conditional(tau, t).unwrap()) < 1e-10);
                // τ-independence of the proportionality constant
                let alpha_t = &m.forward[t - 1];
                assert_relative_eq!(
                    got.log_mass.exp(),
                    alpha_t.0.dot(&mdp.reward_vector()),
                    max_relative = 1e-12
                );
            }
        }
        let s = fb_policy_statistic(&mdp, &pol, 3).unwrap();
        assert!(s.statistic.max_abs_diff(&bf.double_sum()) < 1e-10);
    }

    #[test]
    fn product_count_is_triangular() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let mdp = random::random_mdp(&mut rng, 3, 2, 0.9);
        let pol = random::random_policy(&mut rng, 3, 2);
        for h in [4usize, 8, 16] {
            let s = fb_policy_statistic(&mdp, &pol, h).unwrap();
            assert_eq!(s.counts.products, (h * (h + 1) / 2) as u64);
            assert_eq!(s.counts.messages, 2 * h as u64);
        }
    }

    #[test]
    fn time_marginals_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let mdp = random::random_mdp(&mut rng, 3, 2, 0.9);
        let pol = random::random_policy(&mut rng, 3, 2);
        let alphas = forward_messages(&mdp, &pol, 7).unwrap();
        let u = utility(&mdp, &pol, Horizon::Finite(7)).unwrap();
        let total: f64 = alphas
            .iter()
            .enumerate()
            .map(|(t, a)| time_marginal(&mdp, t + 1, a, u))
            .sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-10);
        let bf = brute_force_marginals(&mdp, &pol, 4, 1e6).unwrap();
        let u4 = utility(&mdp, &pol, Horizon::Finite(4)).unwrap();
        for t in 1..=4 {
            assert_relative_eq!(
                time_marginal(&mdp, t, &alphas[t - 1], u4),
                bf.component_weight(t),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn geometric_time_marginal_cutoff() {
        let (mdp, pol) = single(0.5);
        // q(t+1) = 0.5^{t+1}, Σ_{τ≤t} q(τ) = 1 − 0.5^t: first holds at t = 6.
        assert_eq!(
            time_marginal_horizon(&mdp, &pol, 0.01, 1000).unwrap(),
            Cutoff::Triggered(6)
        );
        assert_eq!(
            time_marginal_horizon(&mdp, &pol, 0.99, 1000).unwrap(),
            Cutoff::Triggered(1)
        );
        assert_eq!(time_marginal_horizon(&mdp, &pol, 1e-9, 5).unwrap(), Cutoff::Capped(5));
    }

    #[test]
    fn zero_reward_is_reported() {
        let mdp = DiscreteMDP::new(vec![1.0], vec![vec![vec![1.0]]], vec![vec![0.0]], 0.5).unwrap();
        assert!(matches!(
            fb_policy_statistic(&mdp, &TabularPolicy::uniform(1, 1), 3),
            Err(Error::ZeroUtility)
        ));
    }
}
