//! Horizon scaling of the two inference routes, counted and timed.

use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::fb::fb_policy_statistic;
use crate::mdp::{random, DiscreteMDP, TabularPolicy};
use crate::qinf::{q_functions_finite, q_policy_statistic};
use crate::stats::log_log_slope;

/// Minimum wall time of one timed batch.
const MIN_BATCH_SECS: f64 = 0.005;

/// The fixed 10-state, 2-action instance of the scaling study.
pub fn ten_state_mdp(seed: u64) -> (DiscreteMDP, TabularPolicy) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mdp = random::random_mdp(&mut rng, 10, 2, 0.95);
    let policy = random::random_policy(&mut rng, 10, 2);
    (mdp, policy)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingRow {
    #[serde(rename = "H")]
    pub h: usize,
    pub method: &'static str,
    /// Counted message and product operations.
    pub matvecs: u64,
    /// Fastest per-call time over the repeats.
    pub wall_ms: f64,
    /// Max-norm gap between the two methods' statistics at this `H`.
    #[serde(skip)]
    pub max_diff: f64,
}

/// Fastest per-call time of `f` over `repeats` batches.
fn time_min<F: FnMut()>(repeats: usize, mut f: F) -> f64 {
    let start = Instant::now();
    f();
    let once = start.elapsed().as_secs_f64().max(1e-9);
    let per_batch = ((MIN_BATCH_SECS / once).ceil() as usize).max(1);
    let mut best = f64::INFINITY;
    for _ in 0..repeats.max(1) {
        let start = Instant::now();
        for _ in 0..per_batch {
            f();
        }
        best = best.min(start.elapsed().as_secs_f64() / per_batch as f64);
    }
    best * 1e3
}

/// Times `fb_policy_statistic` against `q_policy_statistic` on the same
/// problem for every horizon. Rows come out ordered by `H`, fb first.
pub fn run_scaling_study(
    mdp: &DiscreteMDP,
    policy: &TabularPolicy,
    horizons: &[usize],
    repeats: usize,
) -> Result<Vec<ScalingRow>> {
    let mut rows = Vec::with_capacity(2 * horizons.len());
    for &h in horizons {
        let fb = fb_policy_statistic(mdp, policy, h)?;
        let qf = q_functions_finite(mdp, policy, h)?;
        let max_diff = fb.statistic.max_abs_diff(&q_policy_statistic(&qf));

        let fb_ms = time_min(repeats, || {
            std::hint::black_box(fb_policy_statistic(mdp, policy, h).ok());
        });
        let q_ms = time_min(repeats, || {
            std::hint::black_box(
                q_functions_finite(mdp, policy, h)
                    .map(|qf| q_policy_statistic(&qf))
                    .ok(),
            );
        });
        log::info!("H={h}: fb {fb_ms:.3} ms, q {q_ms:.3} ms");
        rows.push(ScalingRow {
            h,
            method: "fb",
            matvecs: fb.counts.total(),
            wall_ms: fb_ms,
            max_diff,
        });
        rows.push(ScalingRow {
            h,
            method: "q",
            matvecs: qf.counts.total(),
            wall_ms: q_ms,
            max_diff,
        });
    }
    Ok(rows)
}

/// Fitted log-log slopes of cost against `H`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingSlopes {
    pub fb_counted: f64,
    pub q_counted: f64,
    pub fb_wall: f64,
    pub q_wall: f64,
}

pub fn scaling_slopes(rows: &[ScalingRow]) -> ScalingSlopes {
    let fit = |method: &str, counted: bool| {
        let (xs, ys): (Vec<f64>, Vec<f64>) = rows
            .iter()
            .filter(|r| r.method == method)
            .map(|r| (r.h as f64, if counted { r.matvecs as f64 } else { r.wall_ms }))
            .unzip();
        log_log_slope(&xs, &ys)
    };
    ScalingSlopes {
        fb_counted: fit("fb", true),
        q_counted: fit("q", true),
        fb_wall: fit("fb", false),
        q_wall: fit("q", false),
    }
}

/// Writes `H,method,matvecs,wall_ms`.
pub fn write_scaling_csv<W: Write>(rows: &[ScalingRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(crate::solvers::csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_follow_the_loop_structure() {
        let (mdp, pol) = ten_state_mdp(1);
        let rows = run_scaling_study(&mdp, &pol, &[8, 16], 1).unwrap();
        assert_eq!(rows.len(), 4);
        for r in &rows {
            let h = r.h as u64;
            let expect = if r.method == "fb" {
                2 * h + h * (h + 1) / 2
            } else {
                2 * h
            };
            assert_eq!(r.matvecs, expect);
            assert!(r.max_diff < 1e-10);
        }
        let s = scaling_slopes(&rows);
        assert!((s.q_counted - 1.0).abs() < 1e-12);
        assert!(s.fb_counted > 1.5);
    }

    #[test]
    fn csv_header() {
        let (mdp, pol) = ten_state_mdp(1);
        let rows = run_scaling_study(&mdp, &pol, &[4], 1).unwrap();
        let mut buf = Vec::new();
        write_scaling_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("H,method,matvecs,wall_ms\n4,fb,18,"));
        assert_eq!(text.lines().count(), 3);
    }
}
