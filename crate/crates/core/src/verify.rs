//! Built-in oracle suite: every inference route against an independent
//! reference on small fixtures.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bench::{chain_pure_policy, make_chain, ChainSpec};
use crate::continuous::{self, oracle};
use crate::error::{Error, Result};
use crate::fb::fb_policy_statistic;
use crate::mdp::{self, random, DiscreteMDP, Horizon, TabularPolicy};
use crate::mdp::{brute_force_marginals, enumerate_values};
use crate::qinf::{self, q_functions_finite, q_policy_statistic, StationaryOptions};
use crate::solvers::{log_utility_logits, policy_gradient, Backend, InferenceConfig, SoftmaxPolicy};
use crate::tol;

pub const FIXTURES: [&str; 4] = ["chain3", "random", "gradient", "continuous"];

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub fixture: &'static str,
    pub check: String,
    pub residual: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.residual <= self.tolerance
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<10} {:<44} residual {:.3e}  tolerance {:.1e}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.fixture,
            self.check,
            self.residual,
            self.tolerance
        )
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct VerifyOptions<'a> {
    /// Replaces every check's own tolerance.
    pub tolerance: Option<f64>,
    /// Runs one fixture only.
    pub fixture: Option<&'a str>,
}

struct Recorder {
    fixture: &'static str,
    tolerance: Option<f64>,
    out: Vec<CheckResult>,
}

impl Recorder {
    fn check(&mut self, name: impl Into<String>, residual: f64, tolerance: f64) {
        // A NaN residual must fail whatever the tolerance.
        let residual = if residual.is_nan() { f64::INFINITY } else { residual };
        self.out.push(CheckResult {
            fixture: self.fixture,
            check: name.into(),
            residual,
            tolerance: self.tolerance.unwrap_or(tolerance),
        });
    }
}

/// Inference routes against brute force and each other.
fn inference_checks(
    rec: &mut Recorder,
    label: &str,
    mdp: &DiscreteMDP,
    policy: &TabularPolicy,
    h: usize,
) -> Result<()> {
    let brute = brute_force_marginals(mdp, policy, h, tol::ENUMERATION_CAP)?;
    let fb = fb_policy_statistic(mdp, policy, h)?;
    let q = q_policy_statistic(&q_functions_finite(mdp, policy, h)?);
    let reference = brute.double_sum();
    rec.check(
        format!("{label} fb vs brute force (H={h})"),
        fb.statistic.max_abs_diff(&reference),
        tol::ORACLE,
    );
    rec.check(
        format!("{label} q vs brute force (H={h})"),
        q.max_abs_diff(&reference),
        tol::ORACLE,
    );
    rec.check(format!("{label} q vs fb (H={h})"), q.max_abs_diff(&fb.statistic), 1e-10);

    // Pair conditionals are the same reversal matrix for every component.
    let joint = mdp::joint_transition(mdp, policy)?;
    let alphas = mdp::forward_messages(mdp, policy, h)?;
    let mut worst: f64 = 0.0;
    for tau in 1..h {
        let rev = mdp::reversal_dynamics(&alphas[tau - 1], &joint, &alphas[tau]);
        for t in tau + 1..=h {
            let pair = brute.pair(tau, t);
            let next = brute.joint(tau + 1, t);
            for zn in 0..pair.ncols() {
                if next.0[zn] > 1e-12 {
                    for z in 0..pair.nrows() {
                        worst = worst.max((pair[(z, zn)] / next.0[zn] - rev[(z, zn)]).abs());
                    }
                }
            }
        }
    }
    rec.check(format!("{label} reversal is t-independent"), worst, tol::ORACLE);
    Ok(())
}

fn infinite_checks(rec: &mut Recorder, label: &str, mdp: &DiscreteMDP, policy: &TabularPolicy) -> Result<()> {
    let opts = StationaryOptions::with_tol(1e-14);
    let inf = qinf::q_statistic_infinite(mdp, policy, &opts)?;
    let gamma = mdp.discount();
    let h = (1e-12f64.ln() / gamma.ln()).ceil() as usize + 1;
    let finite = q_policy_statistic(&q_functions_finite(mdp, policy, h)?);
    rec.check(
        format!("{label} infinite vs truncated (H={h})"),
        inf.statistic.max_abs_diff(&finite),
        1e-8,
    );

    let forced = qinf::q_statistic_infinite(
        mdp,
        policy,
        &StationaryOptions {
            force_fixed_point: true,
            ..opts
        },
    )?;
    rec.check(
        format!("{label} stationary direct vs fixed point"),
        inf.stationary.q.max_abs_diff(&forced.stationary.q),
        1e-8,
    );
    Ok(())
}

fn chain3(rec: &mut Recorder) -> Result<()> {
    let mdp = make_chain(&ChainSpec::new(3))?;
    for (right, expect) in [(false, 20.0), (true, 400.0)] {
        let u = mdp::utility(&mdp, &chain_pure_policy(3, right), Horizon::Infinite)?;
        rec.check(
            format!("chain3 utility of pure policy = {expect}"),
            (u - expect).abs(),
            1e-8,
        );
    }
    let policy = random::random_policy(&mut ChaCha8Rng::seed_from_u64(0), 3, 3);
    inference_checks(rec, "chain3", &mdp, &policy, 5)?;
    infinite_checks(rec, "chain3", &mdp, &policy)
}

fn random_suite(rec: &mut Recorder) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for i in 0..3 {
        let mdp = random::random_mdp(&mut rng, 3, 2, 0.9);
        let policy = random::random_policy(&mut rng, 3, 2);
        inference_checks(rec, &format!("mdp{i}"), &mdp, &policy, 5)?;
        infinite_checks(rec, &format!("mdp{i}"), &mdp, &policy)?;
        let classical = mdp::classical_policy_evaluation(&mdp, &policy, Horizon::Finite(5))?;
        let brute = enumerate_values(&mdp, &policy, 5)?;
        rec.check(
            format!("mdp{i} Bellman vs enumerated values"),
            classical.max_abs_diff(&brute),
            tol::ORACLE,
        );
    }
    Ok(())
}

fn gradient(rec: &mut Recorder) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mdp = random::random_mdp(&mut rng, 3, 2, 0.9);
    let policy = SoftmaxPolicy::from_tabular(&random::random_policy(&mut rng, 3, 2));
    for (backend, horizon) in [
        (Backend::Fb, Horizon::Finite(6)),
        (Backend::Q, Horizon::Finite(6)),
        (Backend::Q, Horizon::Infinite),
    ] {
        let mut cfg = InferenceConfig::new(backend, horizon);
        cfg.stationary.tol = 1e-14;
        let (g, _, _) = policy_gradient(&mdp, &policy, &cfg)?;
        let step = 1e-6;
        let mut worst: f64 = 0.0;
        for i in 0..g.len() {
            let shifted = |d: f64| {
                let mut l = policy.logits().to_vec();
                l[i] += d;
                SoftmaxPolicy::new(policy.num_states(), policy.num_actions(), l)
                    .and_then(|p| log_utility_logits(&mdp, &p, &cfg))
            };
            let fd = (shifted(step)? - shifted(-step)?) / (2.0 * step);
            worst = worst.max((g[i] - fd).abs() / g[i].abs().max(1e-3));
        }
        rec.check(
            format!("gradient vs finite differences ({backend}, {})", horizon.mode()),
            worst,
            1e-5,
        );
    }
    Ok(())
}

fn continuous_checks(rec: &mut Recorder) -> Result<()> {
    let p = scalar_fixture()?;
    let h = 3;
    let q = continuous::q_moment_recursion(&p.model, &p.policy, &p.reward, h)?;
    let (per_tau, u) = oracle::quadrature_q_moments(&p.model, &p.policy, &p.reward, h, 12)?;
    let mut worst = (u - q.utility).abs() / u;
    for t in 0..h {
        worst = worst
            .max((per_tau[t].mass - q.tail[t]).abs())
            .max((&per_tau[t].first - &q.first[t]).amax())
            .max((&per_tau[t].second - &q.second[t]).amax());
    }
    rec.check(format!("1-D Q-moments vs quadrature (H={h})"), worst, 1e-6);
    let (agg, _, _) = continuous::fb_moment_baseline(&p.model, &p.policy, &p.reward, 6)?;
    let lin = continuous::q_moment_recursion(&p.model, &p.policy, &p.reward, 6)?.aggregate();
    rec.check(
        "1-D baseline vs linear-time recursion (H=6)",
        agg.max_abs_diff(&lin),
        1e-8,
    );
    Ok(())
}

fn scalar_fixture() -> Result<continuous::ContinuousProblem> {
    let raw = serde_json::json!({
        "n_s": 1, "n_a": 1, "mu0": [0.3], "Sigma0": [[0.5]], "A": [[0.9]], "B": [[0.5]],
        "Sigma": [[0.2]], "gamma": 0.9,
        "policy": {"K": [[-0.3]], "m": [0.2], "pi_sigma": 0.3},
        "reward": {"components": [{"w": 1.0, "y": [1.0], "L": [[0.8]]}, {"w": 0.5, "y": [-0.5], "L": [[1.5]]}],
                   "M": [[1.0, 0.2]]}
    });
    continuous::ContinuousProblem::from_json_value(serde_json::from_value(raw)?)
}

/// Runs the selected fixtures and returns one result per check.
pub fn run_verify(opts: &VerifyOptions) -> Result<Vec<CheckResult>> {
    if let Some(name) = opts.fixture {
        if !FIXTURES.contains(&name) {
            return Err(Error::InvalidArgument(format!(
                "unknown fixture `{name}` (expected one of {})",
                FIXTURES.join(", ")
            )));
        }
    }
    let mut out = Vec::new();
    for name in FIXTURES {
        if opts.fixture.is_some_and(|f| f != name) {
            continue;
        }
        let mut rec = Recorder {
            fixture: name,
            tolerance: opts.tolerance,
            out: Vec::new(),
        };
        match name {
            "chain3" => chain3(&mut rec)?,
            "random" => random_suite(&mut rec)?,
            "gradient" => gradient(&mut rec)?,
            _ => continuous_checks(&mut rec)?,
        }
        out.extend(rec.out);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_suite_passes() {
        let results = run_verify(&VerifyOptions::default()).unwrap();
        assert!(results.len() > 20);
        for r in &results {
            assert!(r.passed(), "{r}");
        }
    }

    #[test]
    fn over_tight_tolerance_fails_somewhere() {
        let opts = VerifyOptions {
            tolerance: Some(1e-15),
            fixture: Some("gradient"),
        };
        let results = run_verify(&opts).unwrap();
        assert!(results.iter().any(|r| !r.passed()));
    }

    #[test]
    fn fixture_selection() {
        let opts = VerifyOptions {
            fixture: Some("chain3"),
            ..VerifyOptions::default()
        };
        let results = run_verify(&opts).unwrap();
        assert!(results.iter().all(|r| r.fixture == "chain3" && r.passed()));
        let bad = VerifyOptions {
            fixture: Some("nope"),
            ..VerifyOptions::default()
        };
        assert!(run_verify(&bad).is_err());
    }
}
