//! The double reward chain: `N` states in a row, actions left/stay/right,
//! and a reward for staying at either end. The far (right) end pays more in
//! total but is reached later, so EM started from a random policy tends to
//! settle on the near end unless the inference sees far enough ahead.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::fan_out;
use crate::error::{Error, Result};
use crate::mdp::{random, DiscreteMDP, Horizon, TabularPolicy};
use crate::solvers::{em_solve, restart_seed, Backend, EmStop, InferenceConfig, Termination};
use crate::stats;

pub const CHAIN_LEFT: usize = 0;
pub const CHAIN_STAY: usize = 1;
pub const CHAIN_RIGHT: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainSpec {
    pub n: usize,
    pub gamma: f64,
}

impl ChainSpec {
    pub fn new(n: usize) -> Self {
        Self { n, gamma: 0.95 }
    }
}

/// Deterministic chain. The agent starts next to the left end; moving off
/// either end leaves it in place. Staying at the left end pays `1/γ`, at the
/// right end `20 γ^{2-N}`, which makes the pure left policy worth `1/(1-γ)`
/// and the pure right policy `20/(1-γ)` whatever `N` is.
pub fn make_chain(spec: &ChainSpec) -> Result<DiscreteMDP> {
    let ChainSpec { n, gamma } = *spec;
    if n < 3 {
        return Err(Error::invalid("N", format!("chain needs at least 3 states, got {n}")));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::invalid("gamma", format!("must lie in (0, 1), got {gamma}")));
    }
    let mut initial = vec![0.0; n];
    initial[1] = 1.0;
    let transition = (0..n)
        .map(|s| {
            let targets = [s.saturating_sub(1), s, (s + 1).min(n - 1)];
            targets
                .iter()
                .map(|&next| {
                    let mut row = vec![0.0; n];
                    row[next] = 1.0;
                    row
                })
                .collect()
        })
        .collect();
    let mut reward = vec![vec![0.0; 3]; n];
    reward[0][CHAIN_STAY] = 1.0 / gamma;
    reward[n - 1][CHAIN_STAY] = 20.0 * gamma.powi(2 - n as i32);
    DiscreteMDP::new(initial, transition, reward, gamma)
}

/// Deterministic policy heading for one end and staying there:
/// `toward_right = false` gives the left policy.
pub fn chain_pure_policy(n: usize, toward_right: bool) -> TabularPolicy {
    let actions: Vec<usize> = (0..n)
        .map(|s| match (toward_right, s) {
            (false, 0) => CHAIN_STAY,
            (false, _) => CHAIN_LEFT,
            (true, s) if s == n - 1 => CHAIN_STAY,
            (true, _) => CHAIN_RIGHT,
        })
        .collect();
    TabularPolicy::deterministic(3, &actions).expect("valid action indices")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainExperiment {
    pub ns: Vec<usize>,
    pub gamma: f64,
    pub restarts: usize,
    pub seed: u64,
    /// Time-marginal thresholds; one fb method per entry.
    pub etas: Vec<f64>,
    /// Stationarity threshold of the q-infinite method.
    pub stationary_tol: f64,
    pub stop: EmStop,
    pub jobs: usize,
}

impl Default for ChainExperiment {
    fn default() -> Self {
        Self {
            ns: (3..=30).collect(),
            gamma: 0.95,
            restarts: 20,
            seed: 0,
            etas: vec![0.01],
            stationary_tol: 0.01,
            stop: EmStop {
                tol: 1e-8,
                max_iters: 2000,
            },
            jobs: 1,
        }
    }
}

impl ChainExperiment {
    fn configs(&self) -> Vec<InferenceConfig> {
        let mut q = InferenceConfig::new(Backend::Q, Horizon::Infinite);
        q.stationary.tol = self.stationary_tol;
        let mut out = vec![q];
        for &eta in &self.etas {
            let mut fb = InferenceConfig::new(Backend::Fb, Horizon::Infinite);
            fb.eta = eta;
            out.push(fb);
        }
        out
    }
}

/// One EM run of the chain experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainRow {
    pub n: usize,
    pub method: String,
    pub eta: Option<f64>,
    pub seed: u64,
    /// `NaN` when the run failed.
    pub final_utility: f64,
    pub initial_utility: f64,
    pub iterations: usize,
    pub termination: Option<Termination>,
    /// Largest utility decrease between consecutive EM iterates.
    pub max_decrease: f64,
}

/// Runs EM with every method from the same Dirichlet(1) initial policies.
/// Failed runs are logged and recorded with a `NaN` utility.
pub fn run_chain_experiment(exp: &ChainExperiment) -> Result<Vec<ChainRow>> {
    let mut jobs = Vec::new();
    for &n in &exp.ns {
        let mdp = make_chain(&ChainSpec { n, gamma: exp.gamma })?;
        for r in 0..exp.restarts as u64 {
            for cfg in exp.configs() {
                jobs.push((mdp.clone(), n, restart_seed(exp.seed, r), cfg));
            }
        }
    }
    let mut rows = fan_out(jobs, exp.jobs, |(mdp, n, seed, cfg)| {
        let init = random::random_policy(&mut ChaCha8Rng::seed_from_u64(seed), n, 3);
        let eta = (cfg.backend == Backend::Fb).then_some(cfg.eta);
        let mut row = ChainRow {
            n,
            method: cfg.method_label(),
            eta,
            seed,
            final_utility: f64::NAN,
            initial_utility: f64::NAN,
            iterations: 0,
            termination: None,
            max_decrease: 0.0,
        };
        match em_solve(&mdp, &init, &cfg, &exp.stop) {
            Ok(rep) => {
                row.final_utility = rep.final_utility();
                row.initial_utility = rep.initial_utility;
                row.iterations = rep.iterations.len();
                row.termination = Some(rep.termination);
                row.max_decrease = rep.max_decrease();
            }
            Err(e) => log::warn!("chain N={n} {} seed {seed}: {e}", row.method),
        }
        row
    });
    rows.sort_by(|a, b| {
        (a.n, &a.method, a.seed)
            .partial_cmp(&(b.n, &b.method, b.seed))
            .expect("labels are comparable")
    });
    Ok(rows)
}

#[derive(Serialize)]
struct ChainCsvRow<'a> {
    #[serde(rename = "N")]
    n: usize,
    method: &'a str,
    eta: Option<f64>,
    seed: u64,
    final_utility: f64,
}

/// Writes `N,method,eta,seed,final_utility`.
pub fn write_chain_csv<W: Write>(rows: &[ChainRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(ChainCsvRow {
            n: r.n,
            method: &r.method,
            eta: r.eta,
            seed: r.seed,
            final_utility: r.final_utility,
        })
        .map_err(crate::solvers::csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Mean and standard deviation of the final utility per `(N, method)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainSummary {
    #[serde(rename = "N")]
    pub n: usize,
    pub method: String,
    pub runs: usize,
    pub mean_utility: f64,
    pub std_utility: f64,
}

pub fn summarize_chain(rows: &[ChainRow]) -> Vec<ChainSummary> {
    let mut out: Vec<ChainSummary> = Vec::new();
    let mut i = 0;
    while i < rows.len() {
        let j = i + rows[i..]
            .iter()
            .take_while(|r| r.n == rows[i].n && r.method == rows[i].method)
            .count();
        let values: Vec<f64> = rows[i..j]
            .iter()
            .map(|r| r.final_utility)
            .filter(|u| u.is_finite())
            .collect();
        out.push(ChainSummary {
            n: rows[i].n,
            method: rows[i].method.clone(),
            runs: values.len(),
            mean_utility: stats::mean(&values),
            std_utility: stats::std_dev(&values),
        });
        i = j;
    }
    out
}
