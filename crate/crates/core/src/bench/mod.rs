//! Problem generators and experiment harnesses: the double reward chain, the
//! feedback-linearized two-link manipulator and the horizon scaling study.

mod chain;
mod manipulator;
mod scaling;

pub use chain::{
    chain_pure_policy, make_chain, run_chain_experiment, summarize_chain, write_chain_csv, ChainExperiment, ChainRow,
    ChainSpec, ChainSummary, CHAIN_LEFT, CHAIN_RIGHT, CHAIN_STAY,
};
pub use manipulator::{
    make_manipulator, run_manipulator_experiment, write_manipulator_csv, ManipulatorExperiment, ManipulatorRow,
    ManipulatorSpec,
};
pub use scaling::{run_scaling_study, scaling_slopes, ten_state_mdp, write_scaling_csv, ScalingRow, ScalingSlopes};

/// Runs `f` over `items` on at most `jobs` worker threads and returns the
/// results in input order.
pub(crate) fn fan_out<T, R, F>(items: Vec<T>, jobs: usize, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync,
{
    use rayon::prelude::*;
    match rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build() {
        Ok(pool) => pool.install(|| items.into_par_iter().map(&f).collect()),
        Err(e) => {
            log::warn!("could not start a worker pool ({e}); running serially");
            items.into_iter().map(f).collect()
        }
    }
}
