//! Subsequence pipeline: analytic bubble model, multiplexed sequence
//! partitioning (MSP) phases, the discrete-event simulator and schedule
//! checks.

mod msp;
mod sim;
mod trace;
mod validate;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use msp::{msp_phase_plan, MspPhasePlan, StagePhases};
pub use sim::{simulate, simulate_report, simulate_with, SimOptions, SimulationReport};
pub use trace::{chrome_trace, micros, write_chrome_trace, ChromeTrace, TraceEvent};
pub use validate::{validate_schedule, Violation, ViolationKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stream {
    Compute,
    D2h,
    H2d,
    P2p,
}

impl Stream {
    pub fn as_str(self) -> &'static str {
        match self {
            Stream::Compute => "compute",
            Stream::D2h => "d2h",
            Stream::H2d => "h2d",
            Stream::P2p => "p2p",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Forward,
    Backward,
    Offload,
    Reload,
    Send,
    Recv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    LeftSp,
    Steady,
    RightSp,
    None,
}

/// One busy interval on a `(stage, stream)` pair.
///
/// `owner` is the stage whose layers the work belongs to; it differs from
/// `stage` only for MSP work hosted on a helper GPU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEvent {
    pub stage: usize,
    pub owner: usize,
    pub stream: Stream,
    pub kind: EventKind,
    pub subseq: usize,
    pub phase: Phase,
    pub t_start: f64,
    pub t_end: f64,
    /// Bytes moved by transfer events; 0 for compute.
    pub bytes: f64,
}

impl ScheduleEvent {
    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }
}

/// Closed-form bubble of a single-micro-batch pipeline of `n` chunks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BubbleStats {
    /// `(p - 1) * F / N`
    pub bubble_time: f64,
    /// `(p - 1) / N`
    pub bubble_ratio: f64,
    /// `(p - 1 + N) / N * F`
    pub total_time: f64,
}

/// `F` is the forward + backward time of all `n` chunks on one stage.
pub fn analytic_bubble(stages: usize, chunks: usize, work: f64) -> Result<BubbleStats> {
    if stages == 0 || chunks == 0 {
        return Err(Error::domain("pipeline shape", "p and N must be >= 1"));
    }
    if work.is_nan() || work <= 0.0 {
        return Err(Error::domain("work", format!("F must be > 0, got {work}")));
    }
    let p = stages as f64;
    let n = chunks as f64;
    Ok(BubbleStats {
        bubble_time: (p - 1.0) * work / n,
        bubble_ratio: (p - 1.0) / n,
        total_time: (p - 1.0 + n) / n * work,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_examples() {
        let b = analytic_bubble(4, 16, 1.0).unwrap();
        assert_eq!(b.bubble_ratio, 3.0 / 16.0);
        assert_eq!(b.bubble_ratio, 0.1875);

        let b = analytic_bubble(1, 8, 2.0).unwrap();
        assert_eq!(b.bubble_time, 0.0);
        assert_eq!(b.total_time, 2.0);

        let b = analytic_bubble(4, 4, 4.0).unwrap();
        assert_eq!(b.bubble_time, 3.0);
        assert_eq!(b.total_time, 7.0);

        assert!(analytic_bubble(0, 4, 1.0).is_err());
        assert!(analytic_bubble(2, 4, 0.0).is_err());
    }
}
