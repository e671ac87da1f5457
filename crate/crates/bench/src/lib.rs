//! Shared fixtures for the benchmarks.

use seqpipe_core::{HardwareSpec, ModelSpec, OffloadMode, ParallelismConfig};

/// GPT-7B on four 8-GPU nodes, the reference planning problem.
pub fn gpt7b_cluster() -> (ModelSpec, HardwareSpec) {
    (ModelSpec::gpt_7b(), HardwareSpec::new(4, 8))
}

/// The layout the planner picks for GPT-7B at 512K tokens.
pub fn gpt7b_layout(n: usize) -> ParallelismConfig {
    ParallelismConfig {
        sp: 8,
        pp: 4,
        n,
        offload_mode: OffloadMode::Adaptive,
        msp_enabled: true,
        recompute: false,
    }
}

pub const SEQ_512K: usize = 512 * 1024;
