//! Seeded generators for test instances and restart initializations.

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use super::{DiscreteMDP, TabularPolicy};

/// Sample from a symmetric Dirichlet(1) distribution of dimension `n`.
pub fn dirichlet_row<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let mut row: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = row.iter().sum();
    for v in &mut row {
        *v /= total;
    }
    row
}

/// Policy with independent Dirichlet(1) rows.
pub fn random_policy<R: Rng + ?Sized>(rng: &mut R, num_states: usize, num_actions: usize) -> TabularPolicy {
    let table = (0..num_states).flat_map(|_| dirichlet_row(rng, num_actions)).collect();
    TabularPolicy::from_flat_unchecked(num_states, num_actions, table)
}

/// Dense random MDP: Dirichlet(1) initial and transition rows, rewards
/// uniform on `[0, 1)`. Every transition entry is positive almost surely,
/// so the state-action chain is ergodic and aperiodic under any policy
/// with full support.
pub fn random_mdp<R: Rng + ?Sized>(rng: &mut R, num_states: usize, num_actions: usize, gamma: f64) -> DiscreteMDP {
    let initial = dirichlet_row(rng, num_states);
    let transition = (0..num_states)
        .map(|_| (0..num_actions).map(|_| dirichlet_row(rng, num_states)).collect())
        .collect();
    let reward = (0..num_states)
        .map(|_| (0..num_actions).map(|_| rng.random::<f64>()).collect())
        .collect();
    DiscreteMDP::new(initial, transition, reward, gamma).expect("generated model is valid")
}
