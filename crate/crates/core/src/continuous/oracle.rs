//! Reference values for the continuous moments computed straight from the
//! trajectory law: `s₁ ~ N(μ₀, Σ₀)`, `a_t ~ N(K s_t + m, π_σ I)`,
//! `s_{t+1} ~ N(A s_t + B a_t, Σ)`. Nothing here goes through the lifted
//! dynamics, the reversal or the Gaussian product formulas.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::moments::AggregateMoments;
use super::{check_compatible, GaussianPolicy, LinearGaussianMDP, MixtureReward};
use crate::error::{Error, Result};

/// Nodes and weights for `E[f(x)]`, `x ~ N(0, 1)` (Golub-Welsch).
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64 / 2.0).sqrt()
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| (eig.eigenvalues[k] * 2f64.sqrt(), eig.eigenvectors[(0, k)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// `R(z)` with the reward covariances inverted once, stored row-major.
struct RewardEval {
    dy: usize,
    nz: usize,
    m: Vec<f64>,
    parts: Vec<(f64, Vec<f64>, Vec<f64>)>,
}

impl RewardEval {
    fn new(reward: &MixtureReward) -> Result<Self> {
        let row_major = |m: &DMatrix<f64>| m.transpose().as_slice().to_vec();
        let parts = reward
            .components
            .iter()
            .map(|c| {
                let inv = c.l.clone().try_inverse().ok_or(Error::Singular("reward covariance"))?;
                Ok((c.w, c.y.as_slice().to_vec(), row_major(&inv)))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            dy: reward.m.nrows(),
            nz: reward.m.ncols(),
            m: row_major(&reward.m),
            parts,
        })
    }

    fn eval(&self, z: &[f64], scratch: &mut Vec<f64>) -> f64 {
        let (dy, nz) = (self.dy, self.nz);
        scratch.clear();
        scratch.extend((0..dy).map(|i| {
            self.m[i * nz..(i + 1) * nz]
                .iter()
                .zip(z)
                .map(|(m, z)| m * z)
                .sum::<f64>()
        }));
        let mut total = 0.0;
        for (w, y, inv) in &self.parts {
            let mut quad = 0.0;
            for i in 0..dy {
                let ri = y[i] - scratch[i];
                for j in 0..dy {
                    quad += ri * inv[i * dy + j] * (y[j] - scratch[j]);
                }
            }
            total += w * (-0.5 * quad).exp();
        }
        total
    }
}

fn add_features(acc: &mut AggregateMoments, z: &[f64], w: f64) {
    acc.mass += w;
    for i in 0..z.len() {
        acc.first[i] += w * z[i];
        for j in 0..z.len() {
            acc.second[(i, j)] += w * z[i] * z[j];
        }
    }
}

struct Quadrature<'a> {
    model: &'a LinearGaussianMDP,
    policy: &'a GaussianPolicy,
    reward: RewardEval,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    horizon: usize,
    per_tau: Vec<AggregateMoments>,
    scratch: Vec<f64>,
}

impl Quadrature<'_> {
    /// Integrates over `a_t` and everything after it given `s_t`. Returns the
    /// weighted discounted reward collected from step `t` on, and credits it
    /// to the features of `z_t`.
    fn visit_state(&mut self, t: usize, s: f64, weight: f64) -> f64 {
        let (k, m, sd) = (self.policy.k[(0, 0)], self.policy.m[0], self.policy.pi_sigma.sqrt());
        let mut total = 0.0;
        for i in 0..self.nodes.len() {
            let a = k * s + m + sd * self.nodes[i];
            let w = weight * self.weights[i];
            let mut future = self.model.gamma.powi(t as i32) * self.reward.eval(&[s, a], &mut self.scratch) * w;
            if t + 1 < self.horizon {
                let mean = self.model.a[(0, 0)] * s + self.model.b[(0, 0)] * a;
                let sd_s = self.model.sigma[(0, 0)].sqrt();
                for j in 0..self.nodes.len() {
                    future += self.visit_state(t + 1, mean + sd_s * self.nodes[j], w * self.weights[j]);
                }
            }
            add_features(&mut self.per_tau[t], &[s, a], future);
            total += future;
        }
        total
    }
}

/// `Q_τ` moments (index `τ - 1`) and `U` by nested Gauss-Hermite quadrature
/// over whole trajectories of a model with scalar state and action.
/// Cost grows as `nodes^(2H)`.
pub fn quadrature_q_moments(
    model: &LinearGaussianMDP,
    policy: &GaussianPolicy,
    reward: &MixtureReward,
    horizon: usize,
    nodes: usize,
) -> Result<(Vec<AggregateMoments>, f64)> {
    check_compatible(model, policy, reward)?;
    if model.n_s != 1 || model.n_a != 1 {
        return Err(Error::InvalidArgument(
            "quadrature oracle needs scalar state and action".into(),
        ));
    }
    if horizon == 0 {
        return Err(Error::invalid("H", "horizon must be at least 1"));
    }
    let (x, w) = gauss_hermite(nodes);
    let mut quad = Quadrature {
        model,
        policy,
        reward: RewardEval::new(reward)?,
        nodes: x,
        weights: w,
        horizon,
        per_tau: vec![AggregateMoments::zeros(2); horizon],
        scratch: Vec::new(),
    };
    let (mu0, sd0) = (model.mu0[0], model.sigma0[(0, 0)].sqrt());
    let mut u = 0.0;
    for i in 0..nodes {
        let w = quad.weights[i];
        u += quad.visit_state(0, mu0 + sd0 * quad.nodes[i], w);
    }
    if !(u > 0.0) {
        return Err(Error::ZeroUtility);
    }
    let per_tau = quad
        .per_tau
        .into_iter()
        .map(|mut a| {
            a.mass /= u;
            a.first /= u;
            a.second /= u;
            a
        })
        .collect();
    Ok((per_tau, u))
}

/// Monte Carlo estimate of `Σ_τ Q_τ` moments with standard errors.
#[derive(Debug, Clone)]
pub struct MonteCarloMoments {
    pub estimate: AggregateMoments,
    pub std_error: AggregateMoments,
    pub utility: f64,
    pub utility_std_error: f64,
    pub samples: usize,
}

/// Running sums for the ratio estimator `Σ X / Σ Y`, with `X` shifted by
/// a pilot ratio to keep the variance sums well conditioned.
struct RatioSums {
    shift: Vec<f64>,
    x: Vec<f64>,
    xx: Vec<f64>,
    xy: Vec<f64>,
    y: f64,
    yy: f64,
    n: usize,
}

impl RatioSums {
    fn new(shift: Vec<f64>) -> Self {
        let k = shift.len();
        Self {
            shift,
            x: vec![0.0; k],
            xx: vec![0.0; k],
            xy: vec![0.0; k],
            y: 0.0,
            yy: 0.0,
            n: 0,
        }
    }

    fn push(&mut self, features: &[f64], y: f64) {
        for (i, f) in features.iter().enumerate() {
            let d = f - self.shift[i] * y;
            self.x[i] += d;
            self.xx[i] += d * d;
            self.xy[i] += d * y;
        }
        self.y += y;
        self.yy += y * y;
        self.n += 1;
    }

    /// Ratio estimates and delta-method standard errors.
    fn finish(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.n as f64;
        let ybar = self.y / n;
        let mut est = Vec::with_capacity(self.x.len());
        let mut se = Vec::with_capacity(self.x.len());
        for i in 0..self.x.len() {
            let r = self.x[i] / self.y;
            let resid = self.xx[i] - 2.0 * r * self.xy[i] + r * r * self.yy;
            est.push(self.shift[i] + r);
            se.push((resid.max(0.0) / (n - 1.0) / n).sqrt() / ybar);
        }
        (est, se)
    }
}

/// Feature layout: `[mass, z (n), upper triangle of z zᵀ]`.
fn feature_len(nz: usize) -> usize {
    1 + nz + nz * (nz + 1) / 2
}

fn unpack(values: &[f64], nz: usize) -> AggregateMoments {
    let mut out = AggregateMoments::zeros(nz);
    out.mass = values[0];
    out.first.copy_from_slice(&values[1..=nz]);
    let mut k = 1 + nz;
    for i in 0..nz {
        for j in i..nz {
            out.second[(i, j)] = values[k];
            out.second[(j, i)] = values[k];
            k += 1;
        }
    }
    out
}

struct Simulator {
    nz: usize,
    ns: usize,
    na: usize,
    mu0: Vec<f64>,
    chol0: DMatrix<f64>,
    chol: DMatrix<f64>,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    k: DMatrix<f64>,
    m: Vec<f64>,
    action_sd: f64,
    gamma: f64,
    reward: RewardEval,
    horizon: usize,
}

impl Simulator {
    /// Simulates one trajectory into `zs` (row-major `H × n_z`) and the
    /// discounted rewards into `rs`.
    fn trajectory(&self, rng: &mut ChaCha8Rng, zs: &mut [f64], rs: &mut [f64], scratch: &mut Vec<f64>) {
        let (ns, na, nz) = (self.ns, self.na, self.nz);
        let mut noise = [0.0f64; 64];
        let mut s = vec![0.0; ns];
        for v in noise.iter_mut().take(ns) {
            *v = StandardNormal.sample(rng);
        }
        for i in 0..ns {
            s[i] = self.mu0[i] + (0..=i).map(|j| self.chol0[(i, j)] * noise[j]).sum::<f64>();
        }
        let mut discount = 1.0;
        for t in 0..self.horizon {
            let z = &mut zs[t * nz..(t + 1) * nz];
            z[..ns].copy_from_slice(&s);
            for i in 0..na {
                let eps: f64 = StandardNormal.sample(rng);
                z[ns + i] = self.m[i] + (0..ns).map(|j| self.k[(i, j)] * s[j]).sum::<f64>() + self.action_sd * eps;
            }
            rs[t] = discount * self.reward.eval(z, scratch);
            discount *= self.gamma;
            if t + 1 < self.horizon {
                for v in noise.iter_mut().take(ns) {
                    *v = StandardNormal.sample(rng);
                }
                for i in 0..ns {
                    let drift = (0..ns).map(|j| self.a[(i, j)] * z[j]).sum::<f64>()
                        + (0..na).map(|j| self.b[(i, j)] * z[ns + j]).sum::<f64>();
                    s[i] = drift + (0..=i).map(|j| self.chol[(i, j)] * noise[j]).sum::<f64>();
                }
            }
        }
    }
}

/// Simulates `samples` trajectories and estimates `U` and the moments of
/// `Σ_τ Q_τ`. A short pilot run from a separate stream centres the sums.
pub fn monte_carlo_q_moments(
    model: &LinearGaussianMDP,
    policy: &GaussianPolicy,
    reward: &MixtureReward,
    horizon: usize,
    samples: usize,
    seed: u64,
) -> Result<MonteCarloMoments> {
    check_compatible(model, policy, reward)?;
    if samples < 2 || horizon == 0 {
        return Err(Error::InvalidArgument(
            "need at least two samples and a positive horizon".into(),
        ));
    }
    if model.n_s > 64 {
        return Err(Error::InvalidArgument(
            "state dimension too large for the simulator".into(),
        ));
    }
    let chol = |m: &DMatrix<f64>, what| {
        m.clone()
            .cholesky()
            .map(|c| c.unpack())
            .ok_or(Error::NotPositiveDefinite(what))
    };
    let sim = Simulator {
        nz: model.n_z(),
        ns: model.n_s,
        na: model.n_a,
        mu0: model.mu0.iter().copied().collect(),
        chol0: chol(&model.sigma0, "Sigma0")?,
        chol: chol(&model.sigma, "Sigma")?,
        a: model.a.clone(),
        b: model.b.clone(),
        k: policy.k.clone(),
        m: policy.m.iter().copied().collect(),
        action_sd: policy.pi_sigma.sqrt(),
        gamma: model.gamma,
        reward: RewardEval::new(reward)?,
        horizon,
    };
    let nz = sim.nz;
    let mut zs = vec![0.0; horizon * nz];
    let mut rs = vec![0.0; horizon];
    let mut features = vec![0.0; feature_len(nz)];
    let mut scratch = Vec::new();

    let mut run = |rng: &mut ChaCha8Rng, count: usize, sums: &mut RatioSums| {
        for _ in 0..count {
            sim.trajectory(rng, &mut zs, &mut rs, &mut scratch);
            features.iter_mut().for_each(|f| *f = 0.0);
            let mut tail = 0.0;
            for t in (0..horizon).rev() {
                tail += rs[t];
                let z = &zs[t * nz..(t + 1) * nz];
                features[0] += tail;
                let mut k = 1 + nz;
                for i in 0..nz {
                    features[1 + i] += tail * z[i];
                    for j in i..nz {
                        features[k] += tail * z[i] * z[j];
                        k += 1;
                    }
                }
            }
            sums.push(&features, tail);
        }
    };

    let pilot_count = (samples / 100).clamp(2, 10_000);
    let mut pilot = RatioSums::new(vec![0.0; feature_len(nz)]);
    run(
        &mut ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15),
        pilot_count,
        &mut pilot,
    );
    let shift = if pilot.y > 0.0 {
        pilot.finish().0
    } else {
        vec![0.0; feature_len(nz)]
    };

    let mut sums = RatioSums::new(shift);
    run(&mut ChaCha8Rng::seed_from_u64(seed), samples, &mut sums);
    if !(sums.y > 0.0) {
        return Err(Error::ZeroUtility);
    }
    let (est, se) = sums.finish();
    let n = samples as f64;
    let u = sums.y / n;
    let u_var = (sums.yy / n - u * u).max(0.0) * n / (n - 1.0);
    Ok(MonteCarloMoments {
        estimate: unpack(&est, nz),
        std_error: unpack(&se, nz),
        utility: u,
        utility_std_error: (u_var / n).sqrt(),
        samples,
    })
}
