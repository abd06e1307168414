//! Two-link arm after feedback linearization: each joint is a double
//! integrator driven by its commanded acceleration, and the reward is a
//! Gaussian bump around a target configuration at rest.

use std::f64::consts::PI;
use std::io::Write;
use std::time::Duration;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::fan_out;
use crate::continuous::{
    continuous_em_solve, ContinuousBudget, ContinuousProblem, GaussianPolicy, LinearGaussianMDP, MixtureReward,
    RewardComponent,
};
use crate::error::Result;
use crate::solvers::Backend;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManipulatorSpec {
    pub links: usize,
    pub dt: f64,
    pub horizon: usize,
    pub target_range: (f64, f64),
    pub gain_range: (f64, f64),
    pub pi_sigma_range: (f64, f64),
    /// Range of the diagonal entries of `Σ₀`, `Σ` and the reward covariance.
    pub cov_range: (f64, f64),
}

impl Default for ManipulatorSpec {
    fn default() -> Self {
        Self {
            links: 2,
            dt: 0.1,
            horizon: 100,
            target_range: (PI / 4.0, 3.0 * PI / 4.0),
            gain_range: (-1.0, 1.0),
            pi_sigma_range: (1.0, 2.0),
            cov_range: (1e-4, 0.05),
        }
    }
}

fn diag<R: Rng>(rng: &mut R, n: usize, range: (f64, f64)) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| rng.random_range(range.0..=range.1)))
}

/// State `[q; q̇]`, action `q̈`. Starts at rest at the origin; `γ = 1`.
pub fn make_manipulator(spec: &ManipulatorSpec, seed: u64) -> Result<ContinuousProblem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = spec.links;
    let ns = 2 * l;
    let mut a = DMatrix::identity(ns, ns);
    let mut b = DMatrix::zeros(ns, l);
    for j in 0..l {
        a[(j, l + j)] = spec.dt;
        b[(l + j, j)] = spec.dt;
    }
    let sigma0 = diag(&mut rng, ns, spec.cov_range);
    let sigma = diag(&mut rng, ns, spec.cov_range);
    let model = LinearGaussianMDP::new(DVector::zeros(ns), sigma0, a, b, sigma, 1.0)?;

    let mut y = DVector::zeros(ns);
    for j in 0..l {
        y[j] = rng.random_range(spec.target_range.0..=spec.target_range.1);
    }
    let proj = DMatrix::from_fn(ns, ns + l, |i, j| if i == j { 1.0 } else { 0.0 });
    let reward = MixtureReward::new(
        vec![RewardComponent {
            w: 1.0,
            y,
            l: diag(&mut rng, ns, spec.cov_range),
        }],
        proj,
    )?;

    let (lo, hi) = spec.gain_range;
    let k = DMatrix::from_fn(l, ns, |_, _| rng.random_range(lo..=hi));
    let m = DVector::from_fn(l, |_, _| rng.random_range(lo..=hi));
    let pi_sigma = rng.random_range(spec.pi_sigma_range.0..=spec.pi_sigma_range.1);
    let policy = GaussianPolicy::new(k, m, pi_sigma)?;
    Ok(ContinuousProblem { model, policy, reward })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManipulatorExperiment {
    pub spec: ManipulatorSpec,
    pub seeds: Vec<u64>,
    /// Wall-clock budget per (seed, backend) run.
    pub budget: Duration,
    pub backends: Vec<Backend>,
    pub jobs: usize,
}

impl Default for ManipulatorExperiment {
    fn default() -> Self {
        Self {
            spec: ManipulatorSpec::default(),
            seeds: vec![0],
            budget: Duration::from_secs(30),
            backends: vec![Backend::Q, Backend::Fb],
            jobs: 1,
        }
    }
}

/// One point of a learning curve. `iter = 0` is the initial policy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManipulatorRow {
    pub seed: u64,
    pub backend: Backend,
    /// Cumulative EM time up to this iterate.
    pub wall_s: f64,
    pub iter: usize,
    /// Utility over the best utility seen for this seed by any backend.
    pub norm_utility: f64,
    #[serde(skip)]
    pub utility: f64,
}

/// Keeps the early iterations and then every hundredth one.
fn keep_row(iter: usize, last: usize) -> bool {
    iter <= 200 || iter.is_multiple_of(100) || iter == last
}

/// Runs EM with every backend on every seed under the same wall budget.
/// Failed runs are logged and skipped.
pub fn run_manipulator_experiment(exp: &ManipulatorExperiment) -> Result<Vec<ManipulatorRow>> {
    let mut jobs = Vec::new();
    for &seed in &exp.seeds {
        let problem = make_manipulator(&exp.spec, seed)?;
        for &backend in &exp.backends {
            jobs.push((problem.clone(), seed, backend));
        }
    }
    let budget = ContinuousBudget {
        max_iters: usize::MAX,
        wall: Some(exp.budget),
        rel_tol: None,
    };
    let horizon = exp.spec.horizon;
    let runs = fan_out(jobs, exp.jobs, |(p, seed, backend)| {
        match continuous_em_solve(&p.model, &p.policy, &p.reward, horizon, backend, &budget) {
            Ok(rep) => {
                log::info!("manipulator seed {seed} {backend}: {} iterations", rep.iterations.len());
                let last = rep.iterations.len();
                let mut rows = vec![ManipulatorRow {
                    seed,
                    backend,
                    wall_s: 0.0,
                    iter: 0,
                    norm_utility: f64::NAN,
                    utility: rep.initial_utility,
                }];
                let mut wall = 0.0;
                for r in &rep.iterations {
                    wall += r.wall_ms / 1e3;
                    if keep_row(r.iter, last) {
                        rows.push(ManipulatorRow {
                            seed,
                            backend,
                            wall_s: wall,
                            iter: r.iter,
                            norm_utility: f64::NAN,
                            utility: r.utility,
                        });
                    }
                }
                rows
            }
            Err(e) => {
                log::warn!("manipulator seed {seed} {backend}: {e}");
                Vec::new()
            }
        }
    });
    let mut rows: Vec<ManipulatorRow> = runs.into_iter().flatten().collect();
    for &seed in &exp.seeds {
        let best = rows
            .iter()
            .filter(|r| r.seed == seed)
            .map(|r| r.utility)
            .fold(f64::NEG_INFINITY, f64::max);
        for r in rows.iter_mut().filter(|r| r.seed == seed) {
            r.norm_utility = r.utility / best;
        }
    }
    rows.sort_by_key(|r| (r.seed, r.backend.to_string(), r.iter));
    Ok(rows)
}

/// Writes `seed,backend,wall_s,iter,norm_utility`.
pub fn write_manipulator_csv<W: Write>(rows: &[ManipulatorRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(crate::solvers::csv_err)?;
    }
    w.flush()?;
    Ok(())
}
