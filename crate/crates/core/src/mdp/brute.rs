//! Exhaustive trajectory enumeration. Exponential in the horizon; used only
//! as ground truth for the message-passing routes.

use nalgebra::{DMatrix, DVector};

use super::{DiscreteMDP, JointTransition, StateActionDist, TabularPolicy};
use crate::error::{Error, Result};

/// Marginals of the reward-weighted path distribution, by enumeration.
///
/// Component `t` weights every length-`t` trajectory by `γ^{t-1} R(z_t) p(z_{1:t})`;
/// all tables are normalized by the finite-horizon utility `U`.
#[derive(Debug, Clone)]
pub struct BruteForce {
    horizon: usize,
    nz: usize,
    utility: f64,
    /// `q(z_τ = z, t)` at `[((t-1) * H + (τ-1)) * nz + z]`.
    joint: Vec<f64>,
    /// `q(z_τ = z, z_{τ+1} = z', t)` at `[((t-1) * H + (τ-1)) * nz² + z * nz + z']`.
    pairs: Vec<f64>,
    /// Unconditional `p(z_τ)` at `[(τ-1) * nz + z]`.
    marginal: Vec<f64>,
}

fn trajectory_count(nz: usize, horizon: usize) -> f64 {
    (1..=horizon).map(|t| (nz as f64).powi(t as i32)).sum()
}

pub fn brute_force_marginals(
    mdp: &DiscreteMDP,
    policy: &TabularPolicy,
    horizon: usize,
    cap: f64,
) -> Result<BruteForce> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let joint_op = JointTransition::new(mdp, policy)?;
    let nz = joint_op.dim();
    let size = trajectory_count(nz, horizon);
    if size > cap {
        return Err(Error::EnumerationTooLarge { size, cap });
    }
    let p = joint_op.to_dense();
    let alpha1 = joint_op.initial_message();
    let reward = mdp.reward_vector();

    let mut bf = BruteForce {
        horizon,
        nz,
        utility: 0.0,
        joint: vec![0.0; horizon * horizon * nz],
        pairs: vec![0.0; horizon * horizon * nz * nz],
        marginal: vec![0.0; horizon * nz],
    };
    let discounts: Vec<f64> = (0..horizon).map(|t| mdp.discount().powi(t as i32)).collect();

    let mut path = Vec::with_capacity(horizon);
    for z in 0..nz {
        if alpha1[z] > 0.0 {
            path.push(z);
            visit(&mut bf, &p, &reward, &discounts, &mut path, alpha1[z]);
            path.pop();
        }
    }

    let u = bf.utility;
    if u <= 0.0 {
        return Err(Error::ZeroUtility);
    }
    bf.joint.iter_mut().for_each(|v| *v /= u);
    bf.pairs.iter_mut().for_each(|v| *v /= u);
    Ok(bf)
}

fn visit(
    bf: &mut BruteForce,
    p: &DMatrix<f64>,
    reward: &DVector<f64>,
    discounts: &[f64],
    path: &mut Vec<usize>,
    prob: f64,
) {
    let (h, nz) = (bf.horizon, bf.nz);
    let t = path.len();
    let zt = path[t - 1];
    bf.marginal[(t - 1) * nz + zt] += prob;

    let w = discounts[t - 1] * reward[zt] * prob;
    if w > 0.0 {
        bf.utility += w;
        for tau in 1..=t {
            let slot = (t - 1) * h + (tau - 1);
            bf.joint[slot * nz + path[tau - 1]] += w;
            if tau < t {
                bf.pairs[slot * nz * nz + path[tau - 1] * nz + path[tau]] += w;
            }
        }
    }

    if t < h {
        for zn in 0..nz {
            let step = p[(zn, zt)];
            if step > 0.0 {
                path.push(zn);
                visit(bf, p, reward, discounts, path, prob * step);
                path.pop();
            }
        }
    }
}

impl BruteForce {
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn utility(&self) -> f64 {
        self.utility
    }

    /// `q(z_τ = ·, t)`, the joint with the component variable.
    pub fn joint(&self, tau: usize, t: usize) -> StateActionDist {
        assert!(1 <= tau && tau <= t && t <= self.horizon);
        let slot = (t - 1) * self.horizon + (tau - 1);
        StateActionDist(DVector::from_column_slice(
            &self.joint[slot * self.nz..(slot + 1) * self.nz],
        ))
    }

    /// Mixture weight `q(t)`.
    pub fn component_weight(&self, t: usize) -> f64 {
        self.joint(t, t).sum()
    }

    /// `q(z_τ | t)`; `None` when component `t` has no mass.
    pub fn conditional(&self, tau: usize, t: usize) -> Option<StateActionDist> {
        self.joint(tau, t).normalized()
    }

    /// `q(z_τ = z, z_{τ+1} = z', t)` as a matrix indexed `(z, z')`.
    pub fn pair(&self, tau: usize, t: usize) -> DMatrix<f64> {
        assert!(1 <= tau && tau < t && t <= self.horizon);
        let slot = (t - 1) * self.horizon + (tau - 1);
        let nz2 = self.nz * self.nz;
        DMatrix::from_row_slice(self.nz, self.nz, &self.pairs[slot * nz2..(slot + 1) * nz2])
    }

    /// Unconditional trajectory marginal `p(z_τ)`.
    pub fn marginal(&self, tau: usize) -> StateActionDist {
        StateActionDist(DVector::from_column_slice(
            &self.marginal[(tau - 1) * self.nz..tau * self.nz],
        ))
    }

    /// `Σ_{t≥τ} q(z_τ, t)`.
    pub fn q_function(&self, tau: usize) -> StateActionDist {
        let mut acc = DVector::zeros(self.nz);
        for t in tau..=self.horizon {
            acc += self.joint(tau, t).0;
        }
        StateActionDist(acc)
    }

    /// `Σ_t Σ_{τ≤t} q(z_τ, t)`: the EM / policy-gradient statistic.
    pub fn double_sum(&self) -> StateActionDist {
        let mut acc = DVector::zeros(self.nz);
        for tau in 1..=self.horizon {
            acc += self.q_function(tau).0;
        }
        StateActionDist(acc)
    }
}

/// Expected discounted reward over `k` steps starting from each pair,
/// `E[Σ_{i=1}^k γ^{i-1} R(z_i) | z_1 = z]`, by enumerating continuations.
pub fn enumerate_values(mdp: &DiscreteMDP, policy: &TabularPolicy, k: usize) -> Result<StateActionDist> {
    let joint_op = JointTransition::new(mdp, policy)?;
    let p = joint_op.to_dense();
    let r = mdp.reward_vector();
    let nz = joint_op.dim();

    fn walk(p: &DMatrix<f64>, r: &DVector<f64>, gamma: f64, z: usize, depth: usize, k: usize, prob: f64) -> f64 {
        let mut total = gamma.powi(depth as i32 - 1) * r[z] * prob;
        if depth < k {
            for zn in 0..p.nrows() {
                let step = p[(zn, z)];
                if step > 0.0 {
                    total += walk(p, r, gamma, zn, depth + 1, k, prob * step);
                }
            }
        }
        total
    }

    Ok(StateActionDist(DVector::from_fn(nz, |z, _| {
        walk(&p, &r, mdp.discount(), z, 1, k, 1.0)
    })))
}
