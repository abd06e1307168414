use std::io::Write;

use serde::{Deserialize, Serialize};

use super::Backend;
use crate::error::Result;

/// Why a solver loop stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// The utility change fell below the tolerance (or the gradient vanished).
    Converged,
    MaxIterations,
    /// Wall-clock budget used up.
    Budget,
    /// No step satisfied the sufficient-increase condition.
    LineSearchFailed,
}

impl Termination {
    pub fn is_converged(&self) -> bool {
        matches!(self, Termination::Converged)
    }
}

/// One solver iteration. `utility` belongs to the policy produced by it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub utility: f64,
    pub wall_ms: f64,
    /// Messages produced by the inference calls of this iteration.
    pub matvec_count: u64,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    iter: usize,
    utility: f64,
    wall_ms: f64,
    matvec_count: u64,
    backend: Backend,
    horizon_mode: &'a str,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport<P> {
    pub backend: Backend,
    /// `finite` or `infinite`.
    pub horizon_mode: String,
    pub initial_utility: f64,
    pub iterations: Vec<IterationRecord>,
    pub final_policy: P,
    pub termination: Termination,
}

impl<P> SolveReport<P> {
    /// Utility of the final policy.
    pub fn final_utility(&self) -> f64 {
        self.iterations.last().map_or(self.initial_utility, |r| r.utility)
    }

    /// Initial utility followed by the utility after every iteration.
    pub fn utilities(&self) -> Vec<f64> {
        std::iter::once(self.initial_utility)
            .chain(self.iterations.iter().map(|r| r.utility))
            .collect()
    }

    /// Largest decrease between consecutive utilities, or 0 when the
    /// sequence never decreases.
    pub fn max_decrease(&self) -> f64 {
        self.utilities().windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max)
    }

    /// Writes `iter,utility,wall_ms,matvec_count,backend,horizon_mode`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.iterations {
            w.serialize(CsvRow {
                iter: r.iter,
                utility: r.utility,
                wall_ms: r.wall_ms,
                matvec_count: r.matvec_count,
                backend: self.backend,
                horizon_mode: &self.horizon_mode,
            })
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> crate::Error {
    crate::Error::Io(std::io::Error::other(e))
}
