//! Flags shared by every command. A `--config` JSON file fills whatever the
//! command line leaves unset; built-in defaults fill the rest.

use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use mcpq_core::solvers::Backend;
use mcpq_core::Horizon;
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    Em,
    Pg,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct Opts {
    /// JSON file with defaults for any of these flags (kebab-case keys).
    #[arg(long, global = true)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Problem JSON for `solve`.
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    /// Output directory [default: .].
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Inference backend, fb or q [default: q].
    #[arg(long, global = true)]
    pub backend: Option<Backend>,
    /// Horizon length or `inf` [default: inf].
    #[arg(long, global = true)]
    pub horizon: Option<String>,
    /// Solver for discrete problems [default: em].
    #[arg(long, global = true, value_enum)]
    pub solver: Option<Solver>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Time-marginal cut-off threshold [default: 0.01].
    #[arg(long, global = true)]
    pub eta: Option<f64>,
    /// Convergence tolerance on the utility change [default: 1e-8; relative 1e-9 for continuous models].
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Stationarity threshold of the infinite-horizon q route [default: 0.01].
    #[arg(long, global = true)]
    pub stationary_tol: Option<f64>,
    /// Iteration cap [default: 2000].
    #[arg(long, global = true)]
    pub max_iters: Option<usize>,
    /// Wall-clock budget in seconds (continuous solve; manipulator bench, default 30).
    #[arg(long, global = true)]
    pub budget: Option<f64>,
    /// Worker threads for benchmark fan-out [default: 1].
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Constant added to every discrete reward on load.
    #[arg(long, global = true)]
    pub reward_shift: Option<f64>,
    /// Chain length, `N` or `LO..HI` [default: 3..30 for bench chain, 5 for emit-chain].
    #[arg(long, global = true)]
    pub n: Option<String>,
    /// EM restarts per chain length [default: 20].
    #[arg(long, global = true)]
    pub restarts: Option<usize>,
    /// Comma-separated horizons for bench scaling [default: 64,128,...,2048].
    #[arg(long, global = true)]
    pub horizons: Option<String>,
    /// Timing repeats per horizon (best is kept) [default: 5].
    #[arg(long, global = true)]
    pub repeats: Option<usize>,
    /// Comma-separated manipulator seeds [default: 0].
    #[arg(long, global = true)]
    pub seeds: Option<String>,
    /// Overrides every verification tolerance.
    #[arg(long, global = true)]
    pub tolerance: Option<f64>,
    /// Runs one verification fixture only.
    #[arg(long, global = true)]
    pub fixture: Option<String>,
}

impl Opts {
    /// Fills unset flags from the config file, if one was given.
    pub fn resolve(self) -> Result<Opts> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading config {}", path.display()))?;
        let file: Opts = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        Ok(self.or(file))
    }

    fn or(self, o: Opts) -> Opts {
        Opts {
            config: self.config,
            input: self.input.or(o.input),
            out: self.out.or(o.out),
            backend: self.backend.or(o.backend),
            horizon: self.horizon.or(o.horizon),
            solver: self.solver.or(o.solver),
            seed: self.seed.or(o.seed),
            eta: self.eta.or(o.eta),
            tol: self.tol.or(o.tol),
            stationary_tol: self.stationary_tol.or(o.stationary_tol),
            max_iters: self.max_iters.or(o.max_iters),
            budget: self.budget.or(o.budget),
            jobs: self.jobs.or(o.jobs),
            reward_shift: self.reward_shift.or(o.reward_shift),
            n: self.n.or(o.n),
            restarts: self.restarts.or(o.restarts),
            horizons: self.horizons.or(o.horizons),
            repeats: self.repeats.or(o.repeats),
            seeds: self.seeds.or(o.seeds),
            tolerance: self.tolerance.or(o.tolerance),
            fixture: self.fixture.or(o.fixture),
        }
    }

    pub fn out_dir(&self) -> Result<PathBuf> {
        let dir = self.out.clone().unwrap_or_else(|| PathBuf::from("."));
        std::fs::create_dir_all(&dir).with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(dir)
    }

    pub fn horizon(&self) -> Result<Horizon> {
        parse_horizon(self.horizon.as_deref().unwrap_or("inf"))
    }

    pub fn budget(&self) -> Result<Option<std::time::Duration>> {
        match self.budget {
            None => Ok(None),
            Some(s) if s.is_finite() && s > 0.0 => Ok(Some(std::time::Duration::from_secs_f64(s))),
            Some(s) => bail!("--budget must be a positive number of seconds, got {s}"),
        }
    }
}

pub fn parse_horizon(s: &str) -> Result<Horizon> {
    if s == "inf" {
        return Ok(Horizon::Infinite);
    }
    let h: usize = s
        .parse()
        .with_context(|| format!("--horizon expects a positive integer or `inf`, got `{s}`"))?;
    Ok(Horizon::finite(h)?)
}

/// `N` or an inclusive `LO..HI`.
pub fn parse_range(s: &str) -> Result<RangeInclusive<usize>> {
    let num = |t: &str| {
        t.trim()
            .parse::<usize>()
            .with_context(|| format!("bad chain length `{t}` in `{s}`"))
    };
    let r = match s.split_once("..") {
        Some((lo, hi)) => num(lo)?..=num(hi.trim_start_matches('='))?,
        None => num(s)?..=num(s)?,
    };
    if r.is_empty() {
        bail!("empty range `{s}`");
    }
    Ok(r)
}

pub fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>>
where
    T::Err: std::error::Error + Send + Sync + 'static,
{
    s.split(',')
        .map(|t| t.trim().parse::<T>().with_context(|| format!("bad {what} `{t}`")))
        .collect()
}

pub fn write_file(dir: &Path, name: &str, contents: &[u8]) -> Result<PathBuf> {
    let path = dir.join(name);
    std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}
