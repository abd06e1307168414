//! Linear-Gaussian MDPs with Gaussian-mixture rewards.
//!
//! The state-action vector `z = [s; a]` evolves linearly under a linear
//! Gaussian policy `a ~ N(K s + m, π_σ I)`, so every forward message is a
//! Gaussian and the reversal dynamics are a linear-Gaussian conditional.
//! The Q-functions are then mixtures of (unnormalized) Gaussians whose first
//! two moments obey a backward recursion, which is all the EM update for
//! `(K, m, π_σ)` needs.

mod em;
mod moments;
pub mod oracle;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use em::{continuous_em_solve, gaussian_em_energy, m_step_gaussian, ContinuousBudget};
pub use moments::{
    fb_moment_baseline, forward_moments, gaussian_reversal, q_moment_recursion, reward_component_moments,
    AggregateMoments, ForwardMoments, JointMoments, Lifted, QMoments, Reversal, RewardMoments,
};

/// Largest negative eigenvalue tolerated in a propagated covariance.
pub const PSD_SLACK: f64 = 1e-8;

fn check_finite(field: &str, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::invalid(format!("{field}[{i}]"), "must be finite")),
        None => Ok(()),
    }
}

fn check_shape(what: &'static str, m: &DMatrix<f64>, rows: usize, cols: usize) -> Result<()> {
    if m.nrows() != rows {
        return Err(Error::DimensionMismatch {
            what,
            expected: rows,
            got: m.nrows(),
        });
    }
    if m.ncols() != cols {
        return Err(Error::DimensionMismatch {
            what,
            expected: cols,
            got: m.ncols(),
        });
    }
    Ok(())
}

fn check_spd(name: &'static str, m: &DMatrix<f64>) -> Result<()> {
    if (m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) {
        return Err(Error::invalid(name, "must be symmetric"));
    }
    m.clone().cholesky().map(|_| ()).ok_or(Error::NotPositiveDefinite(name))
}

/// Dynamics `s' ~ N(A s + B a, Σ)` from `s_1 ~ N(μ₀, Σ₀)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussianMDP {
    pub n_s: usize,
    pub n_a: usize,
    pub mu0: DVector<f64>,
    pub sigma0: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    /// Discount in `[0, 1]`; only finite horizons are supported, so 1 is allowed.
    pub gamma: f64,
}

impl LinearGaussianMDP {
    pub fn new(
        mu0: DVector<f64>,
        sigma0: DMatrix<f64>,
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        sigma: DMatrix<f64>,
        gamma: f64,
    ) -> Result<Self> {
        let n_s = mu0.len();
        let n_a = b.ncols();
        if n_s == 0 || n_a == 0 {
            return Err(Error::invalid(
                "dimensions",
                "state and action dimensions must be positive",
            ));
        }
        check_shape("Sigma0", &sigma0, n_s, n_s)?;
        check_shape("A", &a, n_s, n_s)?;
        check_shape("B", &b, n_s, n_a)?;
        check_shape("Sigma", &sigma, n_s, n_s)?;
        for (name, m) in [("mu0", mu0.as_slice()), ("A", a.as_slice()), ("B", b.as_slice())] {
            check_finite(name, m)?;
        }
        check_spd("Sigma0", &sigma0)?;
        check_spd("Sigma", &sigma)?;
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::invalid("gamma", format!("must lie in [0, 1], got {gamma}")));
        }
        Ok(Self {
            n_s,
            n_a,
            mu0,
            sigma0,
            a,
            b,
            sigma,
            gamma,
        })
    }

    /// Dimension of `z = [s; a]`.
    pub fn n_z(&self) -> usize {
        self.n_s + self.n_a
    }
}

/// `a ~ N(K s + m, π_σ I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPolicy {
    #[serde(rename = "K", with = "row_major")]
    pub k: DMatrix<f64>,
    #[serde(with = "vector")]
    pub m: DVector<f64>,
    pub pi_sigma: f64,
}

impl GaussianPolicy {
    pub fn new(k: DMatrix<f64>, m: DVector<f64>, pi_sigma: f64) -> Result<Self> {
        if k.nrows() != m.len() {
            return Err(Error::DimensionMismatch {
                what: "policy offset m",
                expected: k.nrows(),
                got: m.len(),
            });
        }
        check_finite("K", k.as_slice())?;
        check_finite("m", m.as_slice())?;
        if !(pi_sigma > 0.0 && pi_sigma.is_finite()) {
            return Err(Error::invalid("pi_sigma", format!("must be positive, got {pi_sigma}")));
        }
        Ok(Self { k, m, pi_sigma })
    }

    /// Number of free parameters: `K`, `m` and the scalar `π_σ`.
    pub fn num_parameters(&self) -> usize {
        self.k.len() + self.m.len() + 1
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        (&self.k - &other.k)
            .amax()
            .max((&self.m - &other.m).amax())
            .max((self.pi_sigma - other.pi_sigma).abs())
    }

    fn check(&self, model: &LinearGaussianMDP) -> Result<()> {
        check_shape("policy gain K", &self.k, model.n_a, model.n_s)
    }
}

/// One unnormalized Gaussian bump `w exp(-½ (y - M z)ᵀ L⁻¹ (y - M z))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardComponent {
    pub w: f64,
    #[serde(with = "vector")]
    pub y: DVector<f64>,
    #[serde(rename = "L", with = "row_major")]
    pub l: DMatrix<f64>,
}

/// `R(z) = Σ_j w_j exp(-½ (y_j - M z)ᵀ L_j⁻¹ (y_j - M z))` with a shared `M`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureReward {
    pub components: Vec<RewardComponent>,
    #[serde(rename = "M", with = "row_major")]
    pub m: DMatrix<f64>,
}

impl MixtureReward {
    pub fn new(components: Vec<RewardComponent>, m: DMatrix<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::invalid("reward.components", "need at least one component"));
        }
        let dy = m.nrows();
        for (j, c) in components.iter().enumerate() {
            if !(c.w > 0.0 && c.w.is_finite()) {
                return Err(Error::invalid(format!("reward.components[{j}].w"), "must be positive"));
            }
            if c.y.len() != dy {
                return Err(Error::DimensionMismatch {
                    what: "reward target y",
                    expected: dy,
                    got: c.y.len(),
                });
            }
            check_shape("reward covariance L", &c.l, dy, dy)?;
            check_spd("reward covariance L", &c.l)?;
        }
        check_finite("M", m.as_slice())?;
        Ok(Self { components, m })
    }

    /// Evaluates `R(z)`.
    pub fn evaluate(&self, z: &DVector<f64>) -> f64 {
        let mz = &self.m * z;
        self.components
            .iter()
            .map(|c| {
                let r = &c.y - &mz;
                let chol = c.l.clone().cholesky().expect("validated at construction");
                c.w * (-0.5 * r.dot(&chol.solve(&r))).exp()
            })
            .sum()
    }

    fn check(&self, model: &LinearGaussianMDP) -> Result<()> {
        if self.m.ncols() != model.n_z() {
            return Err(Error::DimensionMismatch {
                what: "reward projection M (columns)",
                expected: model.n_z(),
                got: self.m.ncols(),
            });
        }
        Ok(())
    }
}

/// Checks that model, policy and reward fit together.
pub fn check_compatible(model: &LinearGaussianMDP, policy: &GaussianPolicy, reward: &MixtureReward) -> Result<()> {
    policy.check(model)?;
    reward.check(model)
}

mod row_major {
    use nalgebra::DMatrix;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        s.collect_seq(rows)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(D::Error::custom("matrix rows have different lengths"));
        }
        Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
    }
}

mod vector {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::deserialize(d)?))
    }
}

/// On-disk form of a continuous problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuousModelJson {
    pub n_s: usize,
    pub n_a: usize,
    #[serde(with = "vector")]
    pub mu0: DVector<f64>,
    #[serde(rename = "Sigma0", with = "row_major")]
    pub sigma0: DMatrix<f64>,
    #[serde(rename = "A", with = "row_major")]
    pub a: DMatrix<f64>,
    #[serde(rename = "B", with = "row_major")]
    pub b: DMatrix<f64>,
    #[serde(rename = "Sigma", with = "row_major")]
    pub sigma: DMatrix<f64>,
    pub gamma: f64,
    pub policy: GaussianPolicy,
    pub reward: MixtureReward,
}

/// A validated continuous problem: model, initial policy and reward.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousProblem {
    pub model: LinearGaussianMDP,
    pub policy: GaussianPolicy,
    pub reward: MixtureReward,
}

impl ContinuousProblem {
    pub fn from_json_value(raw: ContinuousModelJson) -> Result<Self> {
        let model = LinearGaussianMDP::new(raw.mu0, raw.sigma0, raw.a, raw.b, raw.sigma, raw.gamma)?;
        if model.n_s != raw.n_s {
            return Err(Error::DimensionMismatch {
                what: "n_s",
                expected: raw.n_s,
                got: model.n_s,
            });
        }
        if model.n_a != raw.n_a {
            return Err(Error::DimensionMismatch {
                what: "n_a",
                expected: raw.n_a,
                got: model.n_a,
            });
        }
        let policy = GaussianPolicy::new(raw.policy.k, raw.policy.m, raw.policy.pi_sigma)?;
        let reward = MixtureReward::new(raw.reward.components, raw.reward.m)?;
        check_compatible(&model, &policy, &reward)?;
        Ok(Self { model, policy, reward })
    }

    pub fn to_json_value(&self) -> ContinuousModelJson {
        let m = &self.model;
        ContinuousModelJson {
            n_s: m.n_s,
            n_a: m.n_a,
            mu0: m.mu0.clone(),
            sigma0: m.sigma0.clone(),
            a: m.a.clone(),
            b: m.b.clone(),
            sigma: m.sigma.clone(),
            gamma: m.gamma,
            policy: self.policy.clone(),
            reward: self.reward.clone(),
        }
    }
}
