use std::f64::consts::PI;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};

use super::moments::{fb_moment_baseline, q_moment_recursion, AggregateMoments};
use super::{GaussianPolicy, LinearGaussianMDP, MixtureReward};
use crate::error::{Error, Result};
use crate::solvers::{Backend, IterationRecord, SolveReport, Termination};
use crate::OpCounts;

const RIDGE: f64 = 1e-10;
const PI_SIGMA_FLOOR: f64 = 1e-8;

/// Blocks of the aggregate moments in terms of `x = [s; 1]` and `a`.
struct Blocks {
    /// `E[x xᵀ]`.
    xx: DMatrix<f64>,
    /// `E[a xᵀ]`.
    ax: DMatrix<f64>,
    /// `tr E[a aᵀ]`.
    aa_trace: f64,
    mass: f64,
    n_a: usize,
}

impl Blocks {
    fn new(agg: &AggregateMoments, n_s: usize) -> Result<Self> {
        let nz = agg.first.len();
        if n_s == 0 || n_s >= nz {
            return Err(Error::InvalidArgument(format!(
                "state dimension {n_s} does not split a {nz}-vector"
            )));
        }
        let n_a = nz - n_s;
        let mut xx = DMatrix::zeros(n_s + 1, n_s + 1);
        xx.view_mut((0, 0), (n_s, n_s))
            .copy_from(&agg.second.view((0, 0), (n_s, n_s)));
        xx.view_mut((0, n_s), (n_s, 1)).copy_from(&agg.first.rows(0, n_s));
        xx.view_mut((n_s, 0), (1, n_s))
            .copy_from(&agg.first.rows(0, n_s).transpose());
        xx[(n_s, n_s)] = agg.mass;
        let mut ax = DMatrix::zeros(n_a, n_s + 1);
        ax.view_mut((0, 0), (n_a, n_s))
            .copy_from(&agg.second.view((n_s, 0), (n_a, n_s)));
        ax.view_mut((0, n_s), (n_a, 1)).copy_from(&agg.first.rows(n_s, n_a));
        let aa_trace = agg.second.view((n_s, n_s), (n_a, n_a)).trace();
        Ok(Self {
            xx,
            ax,
            aa_trace,
            mass: agg.mass,
            n_a,
        })
    }

    /// `E[‖a − Θ x‖²]` under the aggregate potential.
    fn residual(&self, theta: &DMatrix<f64>) -> f64 {
        self.aa_trace - 2.0 * (theta * self.ax.transpose()).trace() + (theta * &self.xx * theta.transpose()).trace()
    }
}

fn theta_of(policy: &GaussianPolicy) -> DMatrix<f64> {
    let (na, ns) = policy.k.shape();
    let mut theta = DMatrix::zeros(na, ns + 1);
    theta.view_mut((0, 0), (na, ns)).copy_from(&policy.k);
    theta.set_column(ns, &policy.m);
    theta
}

/// `Σ_τ ∫ Q_τ(z) log π(a | s) dz` for the given policy parameters.
pub fn gaussian_em_energy(agg: &AggregateMoments, n_s: usize, policy: &GaussianPolicy) -> Result<f64> {
    let b = Blocks::new(agg, n_s)?;
    let v = policy.pi_sigma;
    Ok(-0.5 * (b.n_a as f64 * b.mass * (2.0 * PI * v).ln() + b.residual(&theta_of(policy)) / v))
}

/// Maximizes the energy: weighted least squares for `[K m]`, then the mean
/// residual variance per action dimension for `π_σ`.
pub fn m_step_gaussian(agg: &AggregateMoments, n_s: usize) -> Result<GaussianPolicy> {
    let b = Blocks::new(agg, n_s)?;
    if !(b.mass > 0.0) {
        return Err(Error::Singular("M-step normal equations (no mass)"));
    }
    let mut lhs = b.xx.clone();
    let ridge = RIDGE * lhs.trace();
    for i in 0..lhs.nrows() {
        lhs[(i, i)] += ridge;
    }
    let chol = lhs.cholesky().ok_or(Error::Singular("M-step normal equations"))?;
    let theta = chol.solve(&b.ax.transpose()).transpose();
    let pi_sigma = (b.residual(&theta) / (b.n_a as f64 * b.mass)).max(PI_SIGMA_FLOOR);
    let k = theta.columns(0, n_s).into_owned();
    let m = DVector::from_column_slice(theta.column(n_s).as_slice());
    GaussianPolicy::new(k, m, pi_sigma)
}

/// Stopping rules for continuous EM. Whichever fires first ends the run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuousBudget {
    pub max_iters: usize,
    pub wall: Option<Duration>,
    /// Stop once `|ΔU| ≤ rel_tol · U`; `None` runs the whole budget.
    pub rel_tol: Option<f64>,
}

impl Default for ContinuousBudget {
    fn default() -> Self {
        Self {
            max_iters: 500,
            wall: None,
            rel_tol: Some(1e-9),
        }
    }
}

fn e_step(
    model: &LinearGaussianMDP,
    policy: &GaussianPolicy,
    reward: &MixtureReward,
    horizon: usize,
    backend: Backend,
) -> Result<(AggregateMoments, f64, OpCounts)> {
    match backend {
        Backend::Q => {
            let q = q_moment_recursion(model, policy, reward, horizon)?;
            Ok((q.aggregate(), q.utility, q.counts))
        }
        Backend::Fb => fb_moment_baseline(model, policy, reward, horizon),
    }
}

/// EM on `(K, m, π_σ)` with either moment backend.
pub fn continuous_em_solve(
    model: &LinearGaussianMDP,
    init: &GaussianPolicy,
    reward: &MixtureReward,
    horizon: usize,
    backend: Backend,
    budget: &ContinuousBudget,
) -> Result<SolveReport<GaussianPolicy>> {
    let clock = Instant::now();
    let mut policy = init.clone();
    let (mut agg, mut u, _) = e_step(model, &policy, reward, horizon, backend)?;
    let initial_utility = u;
    let mut iterations = Vec::new();
    let mut termination = Termination::MaxIterations;

    for iter in 1..=budget.max_iters {
        if budget.wall.is_some_and(|w| clock.elapsed() >= w) {
            termination = Termination::Budget;
            break;
        }
        let start = Instant::now();
        policy = m_step_gaussian(&agg, model.n_s)?;
        let previous = u;
        let counts;
        (agg, u, counts) = e_step(model, &policy, reward, horizon, backend)?;
        iterations.push(IterationRecord {
            iter,
            utility: u,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
            matvec_count: counts.total(),
        });
        if budget.rel_tol.is_some_and(|tol| (u - previous).abs() <= tol * u) {
            termination = Termination::Converged;
            break;
        }
    }

    Ok(SolveReport {
        backend,
        horizon_mode: "finite".to_string(),
        initial_utility,
        iterations,
        final_policy: policy,
        termination,
    })
}
