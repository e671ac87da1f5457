//! Search over `(SP, PP, N)` and offload / MSP settings.
//!
//! The space is pruned with three rules and then evaluated exhaustively:
//!
//! 1. SP groups never span nodes (`SP` divides `gpus_per_node`).
//! 2. Pipelines only cross node boundaries when the pipeline has to occupy
//!    the whole cluster. Stages are packed contiguously, so inter-node hops
//!    are priced at the inter-node bandwidth either way.
//! 3. The per-device chunk workload `S / (N * SP)` stays within
//!    `[min_workload, max_workload]` tokens (2K..16K by default).

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation::{activation_breakdown_with, ActivationBreakdown};
use crate::cost_model::{HardwareSpec, ModelSpec, StageView};
use crate::error::{Error, Result};
use crate::offload::{balanced_compute_time_for, plan_for_mode, OffloadMode, OffloadPlan};
use crate::partition::{partition_flops_balanced_quantized, SequencePartition};
use crate::pipeline::{
    simulate_report, simulate_with, ScheduleEvent, SimOptions, SimulationReport,
};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParallelismConfig {
    pub sp: usize,
    pub pp: usize,
    pub n: usize,
    #[serde(rename = "offload", default = "default_offload")]
    pub offload_mode: OffloadMode,
    #[serde(rename = "msp", default)]
    pub msp_enabled: bool,
    #[serde(default)]
    pub recompute: bool,
}

fn default_offload() -> OffloadMode {
    OffloadMode::Adaptive
}

impl ParallelismConfig {
    pub fn validate(&self, model: &ModelSpec, hw: &HardwareSpec) -> Result<()> {
        if self.sp == 0 || self.pp == 0 {
            return Err(Error::domain(
                "parallelism",
                "parallelism.sp and parallelism.pp must be >= 1",
            ));
        }
        if self.sp * self.pp > hw.total_gpus() {
            return Err(Error::domain(
                "parallelism",
                format!(
                    "SP*PP = {} exceeds the {} available GPUs",
                    self.sp * self.pp,
                    hw.total_gpus()
                ),
            ));
        }
        if self.n < self.pp {
            return Err(Error::domain(
                "parallelism",
                format!(
                    "parallelism.n ({}) must be >= parallelism.pp ({})",
                    self.n, self.pp
                ),
            ));
        }
        if self.pp > model.layers {
            return Err(Error::domain(
                "parallelism",
                format!(
                    "PP ({}) exceeds the model's {} layers",
                    self.pp, model.layers
                ),
            ));
        }
        Ok(())
    }

    fn tie_key(&self) -> (usize, usize, usize, OffloadMode, bool, bool) {
        (
            self.pp,
            self.sp,
            self.n,
            self.offload_mode,
            self.msp_enabled,
            self.recompute,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CrossNodePolicy {
    /// Drop candidates whose pipeline crosses nodes without filling the cluster.
    Drop,
    /// Keep them; inter-node hops simply cost more.
    Penalize,
}

fn default_policy() -> CrossNodePolicy {
    CrossNodePolicy::Drop
}
fn default_min_workload() -> usize {
    2048
}
fn default_max_workload() -> usize {
    16384
}
fn default_n_multiple() -> usize {
    8
}
fn default_offload_modes() -> Vec<OffloadMode> {
    OffloadMode::ALL.to_vec()
}
fn default_msp_choices() -> Vec<bool> {
    vec![false, true]
}
fn default_quantum() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverOptions {
    #[serde(default = "default_policy")]
    pub cross_node_pipeline: CrossNodePolicy,
    #[serde(default = "default_min_workload")]
    pub min_workload: usize,
    #[serde(default = "default_max_workload")]
    pub max_workload: usize,
    /// Only N that are multiples of this are tried (all N in the band when
    /// none is).
    #[serde(default = "default_n_multiple")]
    pub n_multiple: usize,
    #[serde(default = "default_offload_modes")]
    pub offload_modes: Vec<OffloadMode>,
    #[serde(default = "default_msp_choices")]
    pub msp: Vec<bool>,
    /// Chunk lengths are multiples of this many tokens.
    #[serde(default = "default_quantum")]
    pub quantum: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            cross_node_pipeline: default_policy(),
            min_workload: default_min_workload(),
            max_workload: default_max_workload(),
            n_multiple: default_n_multiple(),
            offload_modes: default_offload_modes(),
            msp: default_msp_choices(),
            quantum: default_quantum(),
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if self.min_workload == 0 || self.min_workload > self.max_workload {
            return Err(Error::domain(
                "solver",
                "solver.min_workload must be >= 1 and <= solver.max_workload",
            ));
        }
        if self.n_multiple == 0 || self.quantum == 0 {
            return Err(Error::domain(
                "solver",
                "solver.n_multiple and solver.quantum must be >= 1",
            ));
        }
        if self.offload_modes.is_empty() || self.msp.is_empty() {
            return Err(Error::domain(
                "solver",
                "solver.offload_modes and solver.msp must not be empty",
            ));
        }
        Ok(())
    }
}

/// Rule 1: the SP group fits inside one node.
pub fn sp_is_node_local(sp: usize, hw: &HardwareSpec) -> bool {
    sp >= 1 && hw.gpus_per_node % sp == 0
}

/// Rule 2 under `policy`. Stage `k` sits on GPUs `[k*SP, (k+1)*SP)`.
pub fn pipeline_placement_ok(
    sp: usize,
    pp: usize,
    hw: &HardwareSpec,
    policy: CrossNodePolicy,
) -> bool {
    let stages_per_node = hw.gpus_per_node / sp;
    if stages_per_node == 0 || pp > stages_per_node * hw.num_nodes {
        return false;
    }
    let crosses = pp > stages_per_node;
    match policy {
        CrossNodePolicy::Penalize => true,
        CrossNodePolicy::Drop => !crosses || sp * pp == hw.total_gpus(),
    }
}

/// Rule 3: per-device chunk workload `S / (N * SP)` inside the band.
pub fn workload_in_band(seq_len: usize, sp: usize, n: usize, opts: &SolverOptions) -> bool {
    let denom = n * sp;
    denom * opts.min_workload <= seq_len && seq_len <= denom * opts.max_workload
}

/// Inclusive N range allowed by the workload band for a given SP.
pub fn band_n_range(seq_len: usize, sp: usize, opts: &SolverOptions) -> (usize, usize) {
    let lo = seq_len.div_ceil(sp * opts.max_workload).max(1);
    let hi = seq_len / (sp * opts.min_workload);
    (lo, hi)
}

pub fn enumerate_candidates(
    model: &ModelSpec,
    hw: &HardwareSpec,
    seq_len: usize,
) -> Result<Vec<ParallelismConfig>> {
    enumerate_candidates_with(model, hw, seq_len, &SolverOptions::default())
}

pub fn enumerate_candidates_with(
    model: &ModelSpec,
    hw: &HardwareSpec,
    seq_len: usize,
    opts: &SolverOptions,
) -> Result<Vec<ParallelismConfig>> {
    model.validate()?;
    hw.validate()?;
    opts.validate()?;
    if seq_len == 0 {
        return Err(Error::domain("sequence length", "S must be >= 1"));
    }

    let mut out = Vec::new();
    let mut placements = 0usize;
    let mut banded = 0usize;
    for sp in (1..=hw.gpus_per_node).filter(|&sp| sp_is_node_local(sp, hw)) {
        for pp in 1..=hw.total_gpus() / sp {
            if pp > model.layers || !pipeline_placement_ok(sp, pp, hw, opts.cross_node_pipeline) {
                continue;
            }
            placements += 1;
            let (lo, hi) = band_n_range(seq_len, sp, opts);
            let lo = lo.max(pp);
            let hi = hi.min(seq_len / opts.quantum);
            if lo > hi {
                continue;
            }
            banded += 1;
            let mut ns: Vec<usize> = (lo..=hi).filter(|n| n % opts.n_multiple == 0).collect();
            if ns.is_empty() {
                ns = (lo..=hi).collect();
            }
            for n in ns {
                if seq_len % opts.quantum != 0 {
                    continue;
                }
                for &offload_mode in &opts.offload_modes {
                    for &msp_enabled in &opts.msp {
                        out.push(ParallelismConfig {
                            sp,
                            pp,
                            n,
                            offload_mode,
                            msp_enabled,
                            recompute: false,
                        });
                    }
                }
            }
        }
    }
    if out.is_empty() {
        let reason = if placements == 0 {
            "no (SP, PP) pair satisfies node-local SP and the cross-node pipeline rule".to_string()
        } else if banded == 0 {
            format!(
                "workload band [{}, {}] tokens per device per chunk admits no N >= PP for S={seq_len}",
                opts.min_workload, opts.max_workload
            )
        } else {
            format!(
                "sequence length {seq_len} is not a multiple of quantum {}",
                opts.quantum
            )
        };
        return Err(Error::NoCandidates(reason));
    }
    out.sort_by_key(|c| c.tie_key());
    out.dedup();
    Ok(out)
}

/// Everything produced by planning and simulating one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub config: ParallelismConfig,
    pub partition: SequencePartition,
    /// Per-GPU breakdowns of stage 0, the plan's basis.
    pub breakdowns: Vec<ActivationBreakdown>,
    pub plan: OffloadPlan,
    pub events: Vec<ScheduleEvent>,
    pub report: SimulationReport,
}

/// Partition and offload plan of one configuration, before simulation.
struct Planned {
    partition: SequencePartition,
    breakdowns: Vec<ActivationBreakdown>,
    plan: OffloadPlan,
}

/// FLOPs-balanced partition and the offload plan of stage 0 (per GPU).
fn plan_config(
    model: &ModelSpec,
    hw: &HardwareSpec,
    config: &ParallelismConfig,
    partition: SequencePartition,
) -> Result<Planned> {
    config.validate(model, hw)?;
    let view = StageView::new(model, config.pp, config.sp, 0);
    let breakdowns: Vec<ActivationBreakdown> = (0..partition.len())
        .map(|j| {
            activation_breakdown_with(&view.model, &partition, j, config.recompute)
                .map(|b| b.scaled(1.0 / config.sp as f64))
        })
        .collect::<Result<_>>()?;
    let t_comp = balanced_compute_time_for(&view, hw, &partition)?;
    let plan = plan_for_mode(config.offload_mode, &breakdowns, hw, t_comp)?;
    Ok(Planned {
        partition,
        breakdowns,
        plan,
    })
}

/// Partition, plan offloading for stage 0, and simulate.
pub fn run_config(
    model: &ModelSpec,
    hw: &HardwareSpec,
    seq_len: usize,
    config: &ParallelismConfig,
    quantum: usize,
    sim: &SimOptions,
) -> Result<RunArtifacts> {
    let partition = partition_flops_balanced_quantized(model, seq_len, config.n, quantum)?;
    let p = plan_config(model, hw, config, partition)?;
    let (events, report) = simulate_with(model, hw, config, &p.partition, &p.plan, sim)?;
    Ok(RunArtifacts {
        config: config.clone(),
        partition: p.partition,
        breakdowns: p.breakdowns,
        plan: p.plan,
        events,
        report,
    })
}

/// As [`run_config`] but keeps only the report.
pub fn evaluate_config(
    model: &ModelSpec,
    hw: &HardwareSpec,
    seq_len: usize,
    config: &ParallelismConfig,
    quantum: usize,
    sim: &SimOptions,
) -> Result<Evaluated> {
    let partition = partition_flops_balanced_quantized(model, seq_len, config.n, quantum)?;
    evaluate_partitioned(model, hw, config, partition, sim)
}

fn evaluate_partitioned(
    model: &ModelSpec,
    hw: &HardwareSpec,
    config: &ParallelismConfig,
    partition: SequencePartition,
    sim: &SimOptions,
) -> Result<Evaluated> {
    let p = plan_config(model, hw, config, partition)?;
    let report = simulate_report(model, hw, config, &p.partition, &p.plan, sim)?;
    Ok(Evaluated {
        config: config.clone(),
        report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluated {
    pub config: ParallelismConfig,
    pub report: SimulationReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub best: Evaluated,
    /// Every enumerated candidate in enumeration order.
    pub candidates: Vec<Evaluated>,
}

/// Simulate every candidate (in parallel) and keep reports only.
pub fn evaluate_candidates(
    model: &ModelSpec,
    hw: &HardwareSpec,
    seq_len: usize,
    candidates: &[ParallelismConfig],
    opts: &SolverOptions,
    sim: &SimOptions,
) -> Result<Vec<Evaluated>> {
    // The partition depends only on N; build each one once.
    let mut ns: Vec<usize> = candidates.iter().map(|c| c.n).collect();
    ns.sort_unstable();
    ns.dedup();
    let partitions: BTreeMap<usize, SequencePartition> = ns
        .par_iter()
        .map(|&n| {
            partition_flops_balanced_quantized(model, seq_len, n, opts.quantum).map(|p| (n, p))
        })
        .collect::<Result<_>>()?;
    candidates
        .par_iter()
        .map(|c| evaluate_partitioned(model, hw, c, partitions[&c.n].clone(), sim))
        .collect()
}

/// Feasible candidate with the smallest iteration time; ties go to smaller
/// PP, then SP, then N.
pub fn select_best(evaluated: &[Evaluated]) -> Option<&Evaluated> {
    evaluated
        .iter()
        .filter(|e| e.report.feasible)
        .min_by(|a, b| {
            a.report
                .iteration_time
                .total_cmp(&b.report.iteration_time)
                .then_with(|| a.config.tie_key().cmp(&b.config.tie_key()))
        })
}

pub fn solve(
    model: &ModelSpec,
    hw: &HardwareSpec,
    seq_len: usize,
) -> Result<(ParallelismConfig, SimulationReport)> {
    let s = solve_with(
        model,
        hw,
        seq_len,
        &SolverOptions::default(),
        &SimOptions::default(),
    )?;
    Ok((s.best.config, s.best.report))
}

pub fn solve_with(
    model: &ModelSpec,
    hw: &HardwareSpec,
    seq_len: usize,
    opts: &SolverOptions,
    sim: &SimOptions,
) -> Result<Solution> {
    let candidates = enumerate_candidates_with(model, hw, seq_len, opts)?;
    log::info!("evaluating {} candidates", candidates.len());
    let evaluated = evaluate_candidates(model, hw, seq_len, &candidates, opts, sim)?;
    match select_best(&evaluated) {
        Some(best) => Ok(Solution {
            best: best.clone(),
            candidates: evaluated,
        }),
        None => {
            let lines: Vec<String> = evaluated
                .iter()
                .map(|e| {
                    let c = &e.config;
                    let peak = e
                        .report
                        .per_stage_peak_mem
                        .iter()
                        .copied()
                        .fold(0.0, f64::max);
                    format!(
                        "  SP={} PP={} N={} offload={} msp={}: peak {:.3e} B > capacity {:.3e} B",
                        c.sp,
                        c.pp,
                        c.n,
                        c.offload_mode.as_str(),
                        c.msp_enabled,
                        peak,
                        hw.gpu_mem
                    )
                })
                .collect();
            Err(Error::AllInfeasible(lines.join("\n")))
        }
    }
}
