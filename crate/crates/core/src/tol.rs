//! Numerical tolerances shared by validation and the oracle checks.

/// Row/column sums of stochastic matrices and model inputs.
pub const STRUCTURAL: f64 = 1e-12;
/// Normalization of derived distributions (messages, marginals).
pub const NORMALIZATION: f64 = 1e-10;
/// Agreement between an inference route and an independent oracle.
pub const ORACLE: f64 = 1e-9;
/// Default cap on the number of weighted trajectories brute force visits.
pub const ENUMERATION_CAP: f64 = 2e6;

/// Runtime-overridable copy of the constants above.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub structural: f64,
    pub normalization: f64,
    pub oracle: f64,
    pub enumeration_cap: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            structural: STRUCTURAL,
            normalization: NORMALIZATION,
            oracle: ORACLE,
            enumeration_cap: ENUMERATION_CAP,
        }
    }
}
