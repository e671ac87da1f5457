//! Sequence-aware offload ratios and the per-stage memory recurrence.
//!
//! The D2H transfer of chunk `i` overlaps the computation of chunk `i + 1`.
//! To keep each transfer inside that window the planner moves a constant
//! volume `m_threshold = bw_d2h * t_comp` per chunk, i.e. `alpha_i * A_i`
//! is held equal to the threshold wherever `A_i` is large enough, and
//! `alpha_i = 1` otherwise. The last chunk is always fully offloaded.

use serde::{Deserialize, Serialize};

use crate::activation::ActivationBreakdown;
use crate::cost_model::{compute_time, transfer_time, HardwareSpec, ModelSpec, StageView};
use crate::error::{Error, Result};
use crate::partition::SequencePartition;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OffloadMode {
    None,
    Adaptive,
    Full,
}

impl OffloadMode {
    pub const ALL: [OffloadMode; 3] = [OffloadMode::None, OffloadMode::Adaptive, OffloadMode::Full];

    pub fn as_str(self) -> &'static str {
        match self {
            OffloadMode::None => "none",
            OffloadMode::Adaptive => "adaptive",
            OffloadMode::Full => "full",
        }
    }
}

impl std::str::FromStr for OffloadMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(OffloadMode::None),
            "adaptive" => Ok(OffloadMode::Adaptive),
            "full" => Ok(OffloadMode::Full),
            other => Err(Error::domain(
                "offload mode",
                format!("expected none|full|adaptive, got {other:?}"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffloadPlan {
    pub mode: OffloadMode,
    pub alphas: Vec<f64>,
    pub offload_bytes: Vec<f64>,
    pub d2h_times: Vec<f64>,
    pub m_threshold: f64,
    pub balanced_compute_time: f64,
    pub memory_timeline: Vec<f64>,
    pub peak_memory: f64,
}

impl OffloadPlan {
    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }

    /// Whether chunk `i` is pinned at the threshold (`alpha_i < 1`).
    pub fn is_threshold_bound(&self, i: usize) -> bool {
        self.alphas[i] < 1.0
    }

    /// Recompute the memory timeline and peak from `breakdowns`.
    pub fn refresh_timeline(&mut self, breakdowns: &[ActivationBreakdown]) -> Result<()> {
        self.memory_timeline = memory_timeline(self, breakdowns)?;
        self.peak_memory = self.memory_timeline.iter().copied().fold(0.0, f64::max);
        Ok(())
    }
}

/// Forward time of the most expensive chunk (whole model, one GPU).
pub fn balanced_compute_time(
    model: &ModelSpec,
    hw: &HardwareSpec,
    partition: &SequencePartition,
) -> Result<f64> {
    balanced_compute_time_for(&StageView::whole(model), hw, partition)
}

/// Forward time of the most expensive chunk on one GPU of a stage.
pub fn balanced_compute_time_for(
    view: &StageView,
    hw: &HardwareSpec,
    partition: &SequencePartition,
) -> Result<f64> {
    if partition.is_empty() {
        return Err(Error::domain("partition", "partition has no chunks"));
    }
    let mut times = Vec::with_capacity(partition.len());
    for (len, prefix) in partition.chunks() {
        times.push(compute_time(view.forward_flops(len, prefix)?, hw));
    }
    let max = times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = times.iter().copied().fold(f64::INFINITY, f64::min);
    if partition.len() > 1 && min < 0.5 * max {
        log::warn!(
            "chunk forward times range from {min:.3e}s to {max:.3e}s; partition is far from FLOPs-balanced"
        );
    }
    Ok(max)
}

fn check_inputs(breakdowns: &[ActivationBreakdown], t_comp: f64) -> Result<()> {
    if breakdowns.is_empty() {
        return Err(Error::domain(
            "breakdowns",
            "at least one chunk is required",
        ));
    }
    if t_comp.is_nan() || t_comp <= 0.0 {
        return Err(Error::domain(
            "balanced compute time",
            format!("must be > 0, got {t_comp}"),
        ));
    }
    Ok(())
}

fn build_plan(
    mode: OffloadMode,
    alphas: Vec<f64>,
    breakdowns: &[ActivationBreakdown],
    hw: &HardwareSpec,
    t_comp: f64,
) -> Result<OffloadPlan> {
    let offload_bytes: Vec<f64> = alphas
        .iter()
        .zip(breakdowns)
        .map(|(a, b)| a * b.offloadable_bytes)
        .collect();
    let d2h_times = offload_bytes
        .iter()
        .map(|&bytes| transfer_time(bytes, hw.bw_d2h))
        .collect::<Result<Vec<_>>>()?;
    let mut plan = OffloadPlan {
        mode,
        alphas,
        offload_bytes,
        d2h_times,
        m_threshold: hw.bw_d2h * t_comp,
        balanced_compute_time: t_comp,
        memory_timeline: Vec::new(),
        peak_memory: 0.0,
    };
    plan.refresh_timeline(breakdowns)?;
    Ok(plan)
}

/// Adaptive ratios: `alpha_i = min(1, m_threshold / A_i)`, last chunk 1.
pub fn compute_offload_ratios(
    breakdowns: &[ActivationBreakdown],
    hw: &HardwareSpec,
    t_comp: f64,
) -> Result<OffloadPlan> {
    check_inputs(breakdowns, t_comp)?;
    let m_threshold = hw.bw_d2h * t_comp;
    let last = breakdowns.len() - 1;
    let alphas = breakdowns
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let a = b.offloadable_bytes;
            if i == last || a <= 0.0 {
                1.0
            } else {
                (m_threshold / a).min(1.0)
            }
        })
        .collect();
    build_plan(OffloadMode::Adaptive, alphas, breakdowns, hw, t_comp)
}

/// Plan for any offload mode; `Full` moves everything, `None` nothing.
pub fn plan_for_mode(
    mode: OffloadMode,
    breakdowns: &[ActivationBreakdown],
    hw: &HardwareSpec,
    t_comp: f64,
) -> Result<OffloadPlan> {
    match mode {
        OffloadMode::Adaptive => compute_offload_ratios(breakdowns, hw, t_comp),
        OffloadMode::Full | OffloadMode::None => {
            check_inputs(breakdowns, t_comp)?;
            let alpha = if mode == OffloadMode::Full { 1.0 } else { 0.0 };
            build_plan(mode, vec![alpha; breakdowns.len()], breakdowns, hw, t_comp)
        }
    }
}

/// `M_i = M_{i-1} + A_i - alpha_{i-1} * A_{i-1}`, `M_{-1} = 0`.
pub fn memory_timeline(plan: &OffloadPlan, breakdowns: &[ActivationBreakdown]) -> Result<Vec<f64>> {
    if plan.alphas.len() != breakdowns.len() {
        return Err(Error::domain(
            "offload plan",
            format!(
                "plan has {} chunks but {} breakdowns were given",
                plan.alphas.len(),
                breakdowns.len()
            ),
        ));
    }
    let mut out = Vec::with_capacity(breakdowns.len());
    let mut mem = 0.0;
    let mut shed = 0.0;
    for (alpha, b) in plan.alphas.iter().zip(breakdowns) {
        mem = mem + b.offloadable_bytes - shed;
        out.push(mem);
        shed = alpha * b.offloadable_bytes;
    }
    Ok(out)
}

/// The closed-form peak next to the recurrence peak.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakCrossCheck {
    /// `(1 - alpha_{k-1}) * A_{k-1}`, or `A_0` for a single chunk.
    pub closed_form: f64,
    /// `max_i M_i`; this is the value to use.
    pub recurrence: f64,
    pub mismatch: bool,
    /// Fewer than two chunks, so the closed form degenerates to `A_0`.
    pub degenerate: bool,
}

pub fn peak_memory_closed_form(
    plan: &OffloadPlan,
    breakdowns: &[ActivationBreakdown],
) -> Result<PeakCrossCheck> {
    let timeline = memory_timeline(plan, breakdowns)?;
    let recurrence = timeline.iter().copied().fold(0.0, f64::max);
    let k = breakdowns.len();
    let (closed_form, degenerate) = if k < 2 {
        (breakdowns[0].offloadable_bytes, true)
    } else {
        (
            (1.0 - plan.alphas[k - 2]) * breakdowns[k - 2].offloadable_bytes,
            false,
        )
    };
    Ok(PeakCrossCheck {
        closed_form,
        recurrence,
        mismatch: closed_form != recurrence,
        degenerate,
    })
}

/// One row of the exported memory timeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryRow {
    pub chunk_index: usize,
    pub resident_bytes: f64,
    pub offloadable_in_flight_bytes: f64,
    pub total_bytes: f64,
}

/// Resident K/V accumulates across chunks; the offloadable column is `M_i`.
pub fn memory_rows(
    plan: &OffloadPlan,
    breakdowns: &[ActivationBreakdown],
) -> Result<Vec<MemoryRow>> {
    let timeline = memory_timeline(plan, breakdowns)?;
    let mut resident = 0.0;
    Ok(timeline
        .into_iter()
        .zip(breakdowns)
        .enumerate()
        .map(|(i, (m, b))| {
            resident += b.resident_kv_bytes;
            MemoryRow {
                chunk_index: i,
                resident_bytes: resident,
                offloadable_in_flight_bytes: m,
                total_bytes: resident + m,
            }
        })
        .collect())
}

pub fn write_memory_csv<W: std::io::Write>(rows: &[MemoryRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
