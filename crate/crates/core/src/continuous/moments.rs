use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use super::{check_compatible, GaussianPolicy, LinearGaussianMDP, MixtureReward, PSD_SLACK};
use crate::error::{Error, Result};
use crate::OpCounts;

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

fn chol(m: DMatrix<f64>, what: &'static str) -> Result<Cholesky<f64, Dyn>> {
    m.cholesky().ok_or(Error::NotPositiveDefinite(what))
}

fn log_det(c: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// The policy folded into the dynamics: `z' ~ N(F z + m̄, Σ̄)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lifted {
    pub f: DMatrix<f64>,
    pub sigma_bar: DMatrix<f64>,
    pub m_bar: DVector<f64>,
}

impl Lifted {
    pub fn new(model: &LinearGaussianMDP, policy: &GaussianPolicy) -> Self {
        let (ns, na) = (model.n_s, model.n_a);
        let nz = ns + na;
        let k = &policy.k;
        let mut f = DMatrix::zeros(nz, nz);
        f.view_mut((0, 0), (ns, ns)).copy_from(&model.a);
        f.view_mut((0, ns), (ns, na)).copy_from(&model.b);
        f.view_mut((ns, 0), (na, ns)).copy_from(&(k * &model.a));
        f.view_mut((ns, ns), (na, na)).copy_from(&(k * &model.b));
        let sigma_bar = lift_covariance(&model.sigma, k, policy.pi_sigma);
        let mut m_bar = DVector::zeros(nz);
        m_bar.rows_mut(ns, na).copy_from(&policy.m);
        Self { f, sigma_bar, m_bar }
    }
}

/// Covariance of `[s; K s + m + ε]` for `s` with covariance `cov`.
fn lift_covariance(cov: &DMatrix<f64>, k: &DMatrix<f64>, pi_sigma: f64) -> DMatrix<f64> {
    let (ns, na) = (k.ncols(), k.nrows());
    let mut out = DMatrix::zeros(ns + na, ns + na);
    let kc = k * cov;
    out.view_mut((0, 0), (ns, ns)).copy_from(cov);
    out.view_mut((0, ns), (ns, na)).copy_from(&kc.transpose());
    out.view_mut((ns, 0), (na, ns)).copy_from(&kc);
    let mut aa = &kc * k.transpose();
    for i in 0..na {
        aa[(i, i)] += pi_sigma;
    }
    out.view_mut((ns, ns), (na, na)).copy_from(&aa);
    symmetrize(&mut out);
    out
}

/// Marginal of `z_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Forward marginals `α_1..α_H` and the lifted dynamics that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardMoments {
    pub lifted: Lifted,
    pub moments: Vec<JointMoments>,
}

pub fn forward_moments(model: &LinearGaussianMDP, policy: &GaussianPolicy, horizon: usize) -> Result<ForwardMoments> {
    if horizon == 0 {
        return Err(Error::invalid("H", "horizon must be at least 1"));
    }
    if policy.k.nrows() != model.n_a || policy.k.ncols() != model.n_s {
        return Err(Error::DimensionMismatch {
            what: "policy gain K",
            expected: model.n_a * model.n_s,
            got: policy.k.len(),
        });
    }
    let lifted = Lifted::new(model, policy);
    let mut mean = DVector::zeros(model.n_z());
    mean.rows_mut(0, model.n_s).copy_from(&model.mu0);
    mean.rows_mut(model.n_s, model.n_a)
        .copy_from(&(&policy.k * &model.mu0 + &policy.m));
    let mut moments = vec![JointMoments {
        mean,
        cov: lift_covariance(&model.sigma0, &policy.k, policy.pi_sigma),
    }];
    for t in 1..horizon {
        let prev = &moments[t - 1];
        let mean = &lifted.f * &prev.mean + &lifted.m_bar;
        let mut cov = &lifted.f * &prev.cov * lifted.f.transpose() + &lifted.sigma_bar;
        symmetrize(&mut cov);
        let min_eig = SymmetricEigen::new(cov.clone()).eigenvalues.min();
        if min_eig < -PSD_SLACK || !min_eig.is_finite() {
            return Err(Error::NotPositiveDefinite("forward covariance"));
        }
        moments.push(JointMoments { mean, cov });
    }
    Ok(ForwardMoments { lifted, moments })
}

/// `z_t | z_{t+1} ~ N(G z_{t+1} + ←m, ←Σ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Reversal {
    pub g: DMatrix<f64>,
    pub m: DVector<f64>,
    pub cov: DMatrix<f64>,
}

pub fn gaussian_reversal(moments: &JointMoments, lifted: &Lifted) -> Result<Reversal> {
    let fs = &lifted.f * &moments.cov;
    let mut innovation = &fs * lifted.f.transpose() + &lifted.sigma_bar;
    symmetrize(&mut innovation);
    let c = chol(innovation, "reversal innovation")?;
    // S⁻¹ F Σ, transposed, is Σ Fᵀ S⁻¹.
    let g = c.solve(&fs).transpose();
    let m = &moments.mean - &g * (&lifted.f * &moments.mean + &lifted.m_bar);
    let mut cov = &moments.cov - &g * &fs;
    symmetrize(&mut cov);
    Ok(Reversal { g, m, cov })
}

/// An observation-form factor `exp(log_scale - ½ log|L|) exp(-½ (y - M z)ᵀ L⁻¹ (y - M z))`.
/// Keeping `log_scale = log w + ½ log|L|` makes it invariant under backward propagation.
#[derive(Debug, Clone)]
pub(crate) struct ObsTerm {
    log_scale: f64,
    y: DVector<f64>,
    m: DMatrix<f64>,
    l: DMatrix<f64>,
}

impl ObsTerm {
    fn from_reward(reward: &MixtureReward) -> Result<Vec<ObsTerm>> {
        reward
            .components
            .iter()
            .map(|c| {
                let ld = log_det(&chol(c.l.clone(), "reward covariance L")?);
                Ok(ObsTerm {
                    log_scale: c.w.ln() + 0.5 * ld,
                    y: c.y.clone(),
                    m: reward.m.clone(),
                    l: c.l.clone(),
                })
            })
            .collect()
    }

    /// `∫ N(z'; F z + m̄, Σ̄) factor(z') dz'` as a factor of `z`.
    fn propagate(&self, lifted: &Lifted) -> ObsTerm {
        let mut l = &self.m * &lifted.sigma_bar * self.m.transpose() + &self.l;
        symmetrize(&mut l);
        ObsTerm {
            log_scale: self.log_scale,
            y: &self.y - &self.m * &lifted.m_bar,
            m: &self.m * &lifted.f,
            l,
        }
    }
}

/// Moments of `α(z) R(z)` for a Gaussian `α` and a positive potential `R`,
/// normalized by the mass: `mean = E[z]`, `second = E[z zᵀ]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardMoments {
    pub log_mass: f64,
    pub mean: DVector<f64>,
    pub second: DMatrix<f64>,
}

impl RewardMoments {
    pub fn mass(&self) -> f64 {
        self.log_mass.exp()
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        &self.second - &self.mean * self.mean.transpose()
    }
}

fn observe(moments: &JointMoments, terms: &[ObsTerm]) -> Result<RewardMoments> {
    let mut parts = Vec::with_capacity(terms.len());
    for t in terms {
        let mc = &t.m * &moments.cov;
        let mut s = &mc * t.m.transpose() + &t.l;
        symmetrize(&mut s);
        let c = chol(s, "reward innovation")?;
        let r = &t.y - &t.m * &moments.mean;
        let gain = c.solve(&mc).transpose();
        let log_mass = t.log_scale - 0.5 * log_det(&c) - 0.5 * r.dot(&c.solve(&r));
        let mean = &moments.mean + &gain * &r;
        let cov = &moments.cov - &gain * &mc;
        let second = cov + &mean * mean.transpose();
        parts.push((log_mass, mean, second));
    }
    let log_mass = log_sum_exp(parts.iter().map(|p| p.0));
    let n = moments.mean.len();
    let mut mean = DVector::zeros(n);
    let mut second = DMatrix::zeros(n, n);
    if log_mass.is_finite() {
        for (lm, mu, sec) in &parts {
            let w = (lm - log_mass).exp();
            mean += w * mu;
            second += w * sec;
        }
    }
    symmetrize(&mut second);
    Ok(RewardMoments { log_mass, mean, second })
}

/// Mass and moments of `α_t(z) R(z)`.
pub fn reward_component_moments(moments: &JointMoments, reward: &MixtureReward) -> Result<RewardMoments> {
    observe(moments, &ObsTerm::from_reward(reward)?)
}

/// Zeroth, first and (uncentered) second moments of an unnormalized potential.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateMoments {
    pub mass: f64,
    pub first: DVector<f64>,
    pub second: DMatrix<f64>,
}

impl AggregateMoments {
    pub fn zeros(n: usize) -> Self {
        Self {
            mass: 0.0,
            first: DVector::zeros(n),
            second: DMatrix::zeros(n, n),
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        (self.mass - other.mass)
            .abs()
            .max((&self.first - &other.first).amax())
            .max((&self.second - &other.second).amax())
    }
}

/// Per-`t` output of the linear-time recursion. Index `i` holds time `i + 1`.
#[derive(Debug, Clone)]
pub struct QMoments {
    pub forward: ForwardMoments,
    /// `q(t) = γ^{t-1} c_t / U`.
    pub weights: Vec<f64>,
    pub reward: Vec<RewardMoments>,
    /// `Z_t = Σ_{s≥t} q(s)`, the mass of `Q_t`.
    pub tail: Vec<f64>,
    pub first: Vec<DVector<f64>>,
    pub second: Vec<DMatrix<f64>>,
    pub reversals: Vec<Reversal>,
    pub utility: f64,
    pub log_utility: f64,
    /// `products` counts Gaussian conditioning steps.
    pub counts: OpCounts,
}

impl QMoments {
    pub fn horizon(&self) -> usize {
        self.weights.len()
    }

    /// `Σ_τ Q_τ` moments.
    pub fn aggregate(&self) -> AggregateMoments {
        let n = self.first[0].len();
        let mut out = AggregateMoments::zeros(n);
        for t in 0..self.horizon() {
            out.mass += self.tail[t];
            out.first += &self.first[t];
            out.second += &self.second[t];
        }
        out
    }
}

/// Forward pass plus per-step reward moments; returns them with `log U`.
fn weighted_forward(
    model: &LinearGaussianMDP,
    policy: &GaussianPolicy,
    reward: &MixtureReward,
    horizon: usize,
) -> Result<(ForwardMoments, Vec<RewardMoments>, Vec<f64>, f64)> {
    check_compatible(model, policy, reward)?;
    let forward = forward_moments(model, policy, horizon)?;
    let terms = ObsTerm::from_reward(reward)?;
    let reward_moments = forward
        .moments
        .iter()
        .map(|m| observe(m, &terms))
        .collect::<Result<Vec<_>>>()?;
    let log_gamma = model.gamma.ln();
    let log_weighted: Vec<f64> = reward_moments
        .iter()
        .enumerate()
        .map(|(t, r)| {
            if t == 0 {
                r.log_mass
            } else {
                t as f64 * log_gamma + r.log_mass
            }
        })
        .collect();
    let log_u = log_sum_exp(log_weighted.iter().copied());
    if !log_u.is_finite() {
        return Err(Error::ZeroUtility);
    }
    let weights = log_weighted.iter().map(|lw| (lw - log_u).exp()).collect();
    Ok((forward, reward_moments, weights, log_u))
}

/// Linear-time backward recursion for the first two moments of every `Q_t`.
pub fn q_moment_recursion(
    model: &LinearGaussianMDP,
    policy: &GaussianPolicy,
    reward: &MixtureReward,
    horizon: usize,
) -> Result<QMoments> {
    let (forward, reward_moments, weights, log_u) = weighted_forward(model, policy, reward, horizon)?;
    let j = reward.components.len() as u64;
    let h = horizon;
    let mut counts = OpCounts {
        messages: h as u64,
        products: h as u64 * j,
    };

    let mut reversals = Vec::with_capacity(h.saturating_sub(1));
    for t in 0..h - 1 {
        reversals.push(gaussian_reversal(&forward.moments[t], &forward.lifted)?);
    }

    let mut tail = vec![0.0; h];
    let mut first = vec![DVector::zeros(model.n_z()); h];
    let mut second = vec![DMatrix::zeros(model.n_z(), model.n_z()); h];
    tail[h - 1] = weights[h - 1];
    first[h - 1] = weights[h - 1] * &reward_moments[h - 1].mean;
    second[h - 1] = weights[h - 1] * &reward_moments[h - 1].second;
    for t in (0..h - 1).rev() {
        let rev = &reversals[t];
        let (q, r) = (weights[t], &reward_moments[t]);
        let z_next = tail[t + 1];
        let g_m1 = &rev.g * &first[t + 1];
        let mut s = q * &r.second
            + z_next * (&rev.cov + &rev.m * rev.m.transpose())
            + &rev.g * &second[t + 1] * rev.g.transpose()
            + &g_m1 * rev.m.transpose()
            + &rev.m * g_m1.transpose();
        symmetrize(&mut s);
        tail[t] = q + z_next;
        first[t] = q * &r.mean + g_m1 + z_next * &rev.m;
        second[t] = s;
        counts.messages += 1;
        counts.products += 1;
    }

    Ok(QMoments {
        forward,
        weights,
        reward: reward_moments,
        tail,
        first,
        second,
        reversals,
        utility: log_u.exp(),
        log_utility: log_u,
        counts,
    })
}

/// Quadratic-time baseline: backward messages in observation form, then one
/// conditioning of every `α_τ` on every `β_{t-τ+1}` for all `τ ≤ t`.
/// Returns the aggregate moments of `Σ_τ Q_τ`, `U` and the counts.
pub fn fb_moment_baseline(
    model: &LinearGaussianMDP,
    policy: &GaussianPolicy,
    reward: &MixtureReward,
    horizon: usize,
) -> Result<(AggregateMoments, f64, OpCounts)> {
    let (forward, _, _, log_u) = weighted_forward(model, policy, reward, horizon)?;
    let h = horizon;
    let mut counts = OpCounts {
        messages: 2 * h as u64,
        products: 0,
    };
    let mut betas = vec![ObsTerm::from_reward(reward)?];
    for k in 1..h {
        let next = betas[k - 1].iter().map(|b| b.propagate(&forward.lifted)).collect();
        betas.push(next);
    }
    let log_gamma = model.gamma.ln();
    let mut agg = AggregateMoments::zeros(model.n_z());
    for t in 0..h {
        let discount = if t == 0 { 0.0 } else { t as f64 * log_gamma };
        for tau in 0..=t {
            let rm = observe(&forward.moments[tau], &betas[t - tau])?;
            counts.products += betas[t - tau].len() as u64;
            let w = (discount + rm.log_mass - log_u).exp();
            agg.mass += w;
            agg.first += w * &rm.mean;
            agg.second += w * &rm.second;
        }
    }
    symmetrize(&mut agg.second);
    Ok((agg, log_u.exp(), counts))
}
