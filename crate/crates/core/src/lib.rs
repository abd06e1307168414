//! Exact inference of reward-weighted trajectory distributions for Markov
//! decision problems, and the EM / policy-gradient planners built on it.
//!
//! Two inference routes compute the same sufficient statistic
//! `Σ_t Σ_{τ≤t} q(z_τ, t)`:
//!
//! * [`fb`]: the classical forward-backward (α-β) recursions, Θ(H²) in the
//!   horizon because every mixture component `t` is smoothed separately.
//! * [`qinf`]: Q-function recursions that run the system reversal dynamics
//!   backwards once, Θ(H), plus a stationary-distribution extension that
//!   handles an infinite horizon exactly after the state-action chain mixes.
//!
//! [`continuous`] carries the same construction over to linear-Gaussian
//! models with Gaussian-mixture rewards, where it propagates the first two
//! moments of the Q-functions. [`solvers`] and [`bench`] use all of this to
//! plan and to reproduce the chain and manipulator experiments.

pub mod bench;
pub mod continuous;
pub mod error;
pub mod fb;
pub mod mdp;
pub mod qinf;
pub mod solvers;
pub mod stats;
pub mod tol;
pub mod verify;

pub use error::{Error, Result};
pub use mdp::{DiscreteMDP, Horizon, JointTransition, StateActionDist, TabularPolicy};

/// Counts of the vector-level operations an inference routine performed.
///
/// A `message` is one length-|Z| message produced (a forward message, a
/// backward message or a Q-function); a `product` is one elementwise
/// product of a forward with a backward message. The counts are exact and
/// deterministic, so they are used instead of timings to check complexity.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct OpCounts {
    pub messages: u64,
    pub products: u64,
}

impl OpCounts {
    pub fn total(&self) -> u64 {
        self.messages + self.products
    }
}

impl std::ops::AddAssign for OpCounts {
    fn add_assign(&mut self, rhs: Self) {
        self.messages += rhs.messages;
        self.products += rhs.products;
    }
}
