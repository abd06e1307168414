use std::path::Path;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use mcpq_core::bench::{
    make_chain, make_manipulator, run_chain_experiment, run_manipulator_experiment, run_scaling_study, scaling_slopes,
    summarize_chain, ten_state_mdp, write_chain_csv, write_manipulator_csv, write_scaling_csv, ChainExperiment,
    ChainSpec, ManipulatorExperiment,
};
use mcpq_core::continuous::{continuous_em_solve, ContinuousBudget, ContinuousModelJson, ContinuousProblem};
use mcpq_core::mdp::{random, DiscreteMdpJson};
use mcpq_core::solvers::{
    em_solve, pg_solve, Backend, EmStop, InferenceConfig, PgStop, SoftmaxPolicy, SolveReport, Termination,
};
use mcpq_core::verify::{run_verify, VerifyOptions};
use mcpq_core::{DiscreteMDP, Horizon, TabularPolicy};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::options::{parse_list, parse_range, write_file, Opts, Solver};
use crate::Exit;

enum Problem {
    Discrete(DiscreteMDP),
    Continuous(ContinuousProblem),
}

/// Continuous problems are recognised by their `n_s` key.
fn load_problem(path: &Path, reward_shift: Option<f64>) -> Result<Problem> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("{} is not valid JSON", path.display()))?;
    if value.get("n_s").is_some() {
        if reward_shift.is_some() {
            bail!("--reward-shift applies to discrete models only");
        }
        let raw: ContinuousModelJson =
            serde_json::from_str(&text).with_context(|| format!("reading continuous model {}", path.display()))?;
        Ok(Problem::Continuous(ContinuousProblem::from_json_value(raw)?))
    } else {
        let raw: DiscreteMdpJson =
            serde_json::from_str(&text).with_context(|| format!("reading discrete model {}", path.display()))?;
        let mut mdp = DiscreteMDP::from_json_value(raw)?;
        if let Some(shift) = reward_shift {
            mdp = mdp.with_reward_shift(shift)?;
        }
        Ok(Problem::Discrete(mdp))
    }
}

fn tabular_json(p: &TabularPolicy) -> serde_json::Value {
    json!({
        "kind": "tabular",
        "num_states": p.num_states(),
        "num_actions": p.num_actions(),
        "probabilities": p.rows(),
    })
}

fn termination_exit(t: Termination) -> Exit {
    match t {
        Termination::MaxIterations | Termination::Budget => Exit::Budget,
        Termination::Converged | Termination::LineSearchFailed => Exit::Ok,
    }
}

pub fn solve(opts: &Opts) -> Result<Exit> {
    let input = opts.input.as_deref().context("solve needs --input")?;
    let problem = load_problem(input, opts.reward_shift)?;
    let out = opts.out_dir()?;
    let backend = opts.backend.unwrap_or(Backend::Q);
    let max_iters = opts.max_iters.unwrap_or(2000);
    let mut report_csv = Vec::new();

    let (policy, summary, termination) = match problem {
        Problem::Discrete(mdp) => {
            let mut cfg = InferenceConfig::new(backend, opts.horizon()?);
            cfg.eta = opts.eta.unwrap_or(cfg.eta);
            cfg.stationary.tol = opts.stationary_tol.unwrap_or(cfg.stationary.tol);
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.unwrap_or(0));
            let init = random::random_policy(&mut rng, mdp.num_states(), mdp.num_actions());
            match opts.solver.unwrap_or(Solver::Em) {
                Solver::Em => {
                    let stop = EmStop {
                        tol: opts.tol.unwrap_or(1e-8),
                        max_iters,
                    };
                    let rep = em_solve(&mdp, &init, &cfg, &stop)?;
                    rep.write_csv(&mut report_csv)?;
                    let line = summary_line("em", &rep);
                    (tabular_json(&rep.final_policy), line, rep.termination)
                }
                Solver::Pg => {
                    let stop = PgStop {
                        tol: opts.tol.unwrap_or(1e-8),
                        max_iters,
                        ..PgStop::default()
                    };
                    let rep = pg_solve(&mdp, &SoftmaxPolicy::from_tabular(&init), &cfg, &stop)?;
                    rep.write_csv(&mut report_csv)?;
                    let line = summary_line("pg", &rep);
                    let mut policy = tabular_json(&rep.final_policy.to_tabular());
                    policy["kind"] = json!("softmax");
                    policy["logits"] = json!(rep.final_policy.logits().chunks(mdp.num_actions()).collect::<Vec<_>>());
                    (policy, line, rep.termination)
                }
            }
        }
        Problem::Continuous(p) => {
            if opts.solver == Some(Solver::Pg) {
                bail!("continuous models are solved with em only");
            }
            let h = match opts.horizon()? {
                Horizon::Finite(h) => h,
                Horizon::Infinite => bail!("continuous models need a finite --horizon"),
            };
            let budget = ContinuousBudget {
                max_iters,
                wall: opts.budget()?,
                rel_tol: Some(opts.tol.unwrap_or(1e-9)),
            };
            let rep = continuous_em_solve(&p.model, &p.policy, &p.reward, h, backend, &budget)?;
            rep.write_csv(&mut report_csv)?;
            let line = summary_line("em", &rep);
            let mut policy = serde_json::to_value(&rep.final_policy)?;
            policy["kind"] = json!("gaussian");
            (policy, line, rep.termination)
        }
    };

    write_file(&out, "report.csv", &report_csv)?;
    let mut policy_text = serde_json::to_string_pretty(&policy)?;
    policy_text.push('\n');
    write_file(&out, "policy.json", policy_text.as_bytes())?;
    say!("{summary}");
    say!(
        "wrote {} and {}",
        out.join("report.csv").display(),
        out.join("policy.json").display()
    );
    Ok(termination_exit(termination))
}

fn summary_line<P>(solver: &str, rep: &SolveReport<P>) -> String {
    format!(
        "{solver} ({}, {} horizon): {} iterations, U {:.10} -> {:.10}, {:?}",
        rep.backend,
        rep.horizon_mode,
        rep.iterations.len(),
        rep.initial_utility,
        rep.final_utility(),
        rep.termination
    )
}

pub fn bench_chain(opts: &Opts) -> Result<Exit> {
    let defaults = ChainExperiment::default();
    let ns: Vec<usize> = match &opts.n {
        Some(s) => parse_range(s)?.collect(),
        None => defaults.ns.clone(),
    };
    let exp = ChainExperiment {
        ns,
        restarts: opts.restarts.unwrap_or(defaults.restarts),
        seed: opts.seed.unwrap_or(defaults.seed),
        etas: vec![opts.eta.unwrap_or(0.01)],
        stationary_tol: opts.stationary_tol.unwrap_or(defaults.stationary_tol),
        stop: EmStop {
            tol: opts.tol.unwrap_or(defaults.stop.tol),
            max_iters: opts.max_iters.unwrap_or(defaults.stop.max_iters),
        },
        jobs: opts.jobs.unwrap_or(1),
        ..defaults
    };
    let rows = run_chain_experiment(&exp)?;
    let mut buf = Vec::new();
    write_chain_csv(&rows, &mut buf)?;
    let path = write_file(&opts.out_dir()?, "chain_results.csv", &buf)?;
    for s in summarize_chain(&rows) {
        say!(
            "N={:<3} {:<20} mean U {:8.3} (sd {:.3}, {} runs)",
            s.n,
            s.method,
            s.mean_utility,
            s.std_utility,
            s.runs
        );
    }
    say!("wrote {} ({} rows)", path.display(), rows.len());
    Ok(Exit::Ok)
}

pub fn bench_manipulator(opts: &Opts) -> Result<Exit> {
    let mut exp = ManipulatorExperiment::default();
    if let Some(s) = &opts.seeds {
        exp.seeds = parse_list(s, "seed")?;
    } else if let Some(seed) = opts.seed {
        exp.seeds = vec![seed];
    }
    exp.budget = opts.budget()?.unwrap_or(Duration::from_secs(30));
    exp.jobs = opts.jobs.unwrap_or(1);
    if let Some(b) = opts.backend {
        exp.backends = vec![b];
    }
    if opts.horizon.is_some() {
        match opts.horizon()? {
            Horizon::Finite(h) => exp.spec.horizon = h,
            Horizon::Infinite => bail!("the manipulator needs a finite --horizon"),
        }
    }
    let rows = run_manipulator_experiment(&exp)?;
    let mut buf = Vec::new();
    write_manipulator_csv(&rows, &mut buf)?;
    let path = write_file(&opts.out_dir()?, "manipulator.csv", &buf)?;
    for seed in &exp.seeds {
        for b in &exp.backends {
            if let Some(last) = rows.iter().rfind(|r| r.seed == *seed && r.backend == *b) {
                say!(
                    "seed {seed} {b}: {} iterations, normalized U {:.6}",
                    last.iter,
                    last.norm_utility
                );
            }
        }
    }
    say!("wrote {}", path.display());
    Ok(Exit::Ok)
}

pub fn bench_scaling(opts: &Opts) -> Result<Exit> {
    let horizons: Vec<usize> = match &opts.horizons {
        Some(s) => parse_list(s, "horizon")?,
        None => (6..=11).map(|k| 1 << k).collect(),
    };
    if horizons.contains(&0) {
        bail!("horizons must be positive");
    }
    let (mdp, policy) = ten_state_mdp(opts.seed.unwrap_or(0));
    let rows = run_scaling_study(&mdp, &policy, &horizons, opts.repeats.unwrap_or(5).max(1))?;
    let mut buf = Vec::new();
    write_scaling_csv(&rows, &mut buf)?;
    let path = write_file(&opts.out_dir()?, "scaling.csv", &buf)?;
    if horizons.len() > 1 {
        let s = scaling_slopes(&rows);
        say!(
            "log-log slopes: counted fb {:.4} q {:.4}; wall fb {:.3} q {:.3}",
            s.fb_counted,
            s.q_counted,
            s.fb_wall,
            s.q_wall
        );
    }
    say!("wrote {} ({} rows)", path.display(), rows.len());
    Ok(Exit::Ok)
}

/// Prints to stdout unless `--out` is given.
fn emit(opts: &Opts, name: &str, value: &impl serde::Serialize) -> Result<Exit> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    if opts.out.is_some() {
        let path = write_file(&opts.out_dir()?, name, text.as_bytes())?;
        eprintln!("wrote {}", path.display());
    } else {
        let _ = std::io::Write::write_all(&mut std::io::stdout(), text.as_bytes());
    }
    Ok(Exit::Ok)
}

pub fn emit_chain(opts: &Opts) -> Result<Exit> {
    let range = parse_range(opts.n.as_deref().unwrap_or("5"))?;
    if range.start() != range.end() {
        bail!("emit-chain takes a single --n");
    }
    let n = *range.start();
    let mdp = make_chain(&ChainSpec::new(n))?;
    emit(opts, &format!("chain_n{n}.json"), &mdp.to_json_value())
}

pub fn emit_manipulator(opts: &Opts) -> Result<Exit> {
    let seed = opts.seed.unwrap_or(0);
    let problem = make_manipulator(&Default::default(), seed)?;
    emit(opts, &format!("manipulator_seed{seed}.json"), &problem.to_json_value())
}

pub fn verify(opts: &Opts) -> Result<Exit> {
    let results = run_verify(&VerifyOptions {
        tolerance: opts.tolerance,
        fixture: opts.fixture.as_deref(),
    })?;
    for r in &results {
        say!("{r}");
    }
    let failed = results.iter().filter(|r| !r.passed()).count();
    match results.iter().find(|r| !r.passed()) {
        Some(first) => {
            say!(
                "{failed} of {} checks failed; first: {} / {}",
                results.len(),
                first.fixture,
                first.check
            );
            Ok(Exit::Verification)
        }
        None => {
            say!("all {} checks passed", results.len());
            Ok(Exit::Ok)
        }
    }
}
