//! Deterministic discrete-event simulation of one training iteration.
//!
//! Every unit of work (a chunk's forward or backward on a stage, a D2H
//! offload, an H2D reload, a P2P hand-off) is a task that occupies one or more
//! `(stage, stream)` resources. Tasks carry a static priority key and are
//! placed in one pass in key order; every dependency points to a task with a
//! smaller key. Transfer streams serve their tasks in key order. Compute
//! streams place each task in the earliest idle gap that fits, so a chunk
//! borrowed by a neighbour's split never holds a GPU it is not yet using.
//!
//! Keys place forward work of chunk `j` on stage `k` on diagonal `k + j` and
//! backward work on diagonal `(PP-1-k) + (N-1-j)`, which is the order the
//! work becomes ready in a uniform pipeline.

use serde::{Deserialize, Serialize};

use super::msp::{msp_phase_plan, MspPhasePlan};
use super::{EventKind, Phase, ScheduleEvent, Stream};
use crate::activation::activation_breakdown_with;
use crate::cost_model::{backward_flops, compute_time, HardwareSpec, ModelSpec, StageView};
use crate::error::{Error, Result};
use crate::offload::OffloadPlan;
use crate::partition::SequencePartition;
use crate::solver::ParallelismConfig;

fn default_msp_comm_factor() -> f64 {
    2.0
}
fn default_prefetch_depth() -> usize {
    2
}
fn default_weight_multiplier() -> f64 {
    1.0
}

/// Knobs of the simulator that are not part of a parallelism configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimOptions {
    /// MSP chunks pay `factor * layers * hidden_bytes / bw` of collective
    /// traffic (2 models one all-gather plus one reduce-scatter).
    #[serde(default = "default_msp_comm_factor")]
    pub msp_comm_factor: f64,
    /// A reload may start once the backward of the chunk this many positions
    /// later has started.
    #[serde(default = "default_prefetch_depth")]
    pub prefetch_depth: usize,
    /// Per-GPU model state is `param_bytes * weight_multiplier / PP`.
    #[serde(default = "default_weight_multiplier")]
    pub weight_multiplier: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            msp_comm_factor: default_msp_comm_factor(),
            prefetch_depth: default_prefetch_depth(),
            weight_multiplier: default_weight_multiplier(),
        }
    }
}

impl SimOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.msp_comm_factor >= 0.0 && self.msp_comm_factor.is_finite()) {
            return Err(Error::domain(
                "simulation",
                "simulation.msp_comm_factor must be finite and >= 0",
            ));
        }
        if self.prefetch_depth == 0 {
            return Err(Error::domain(
                "simulation",
                "simulation.prefetch_depth must be >= 1",
            ));
        }
        if !(self.weight_multiplier >= 0.0 && self.weight_multiplier.is_finite()) {
            return Err(Error::domain(
                "simulation",
                "simulation.weight_multiplier must be finite and >= 0",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub iteration_time: f64,
    /// Idle compute time of each stage over the iteration.
    pub per_stage_bubble: Vec<f64>,
    /// Total idle time over total busy time (the `(p-1)/N` quantity).
    pub bubble_ratio: f64,
    pub per_stage_peak_mem: Vec<f64>,
    /// Peak of the offloadable activation component while the stage is
    /// still running forward chunks.
    pub per_stage_forward_offload_peak: Vec<f64>,
    pub feasible: bool,
    pub tgs_estimate: f64,
    pub d2h_bytes: f64,
    pub h2d_bytes: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum TaskKind {
    Forward,
    Backward,
    Offload,
    Reload,
    ActSend,
    GradSend,
}

#[derive(Debug, Clone, Copy)]
enum At {
    Start,
    End,
}

type Key = (u8, i64, u8, usize, usize);

#[derive(Debug)]
struct Task {
    key: Key,
    kind: TaskKind,
    owner: usize,
    chunk: usize,
    phase: Phase,
    resources: Vec<(usize, Stream)>,
    duration: f64,
    bytes: f64,
    deps: Vec<(usize, At)>,
    /// Set on chunks that may borrow helper GPUs; `resources` then lists
    /// the owner first and every eligible helper after it.
    split: Option<Split>,
}

#[derive(Debug, Clone, Copy)]
struct Split {
    flops: f64,
    surcharge: f64,
}

const TASK_KINDS: usize = 6;

struct Graph {
    tasks: Vec<Task>,
    chunks: usize,
    /// Dense `(kind, owner, chunk) -> task id` table.
    index: Vec<Option<usize>>,
}

impl Graph {
    fn new(stages: usize, chunks: usize) -> Self {
        Graph {
            tasks: Vec::with_capacity(TASK_KINDS * stages * chunks),
            chunks,
            index: vec![None; TASK_KINDS * stages * chunks],
        }
    }

    fn slot(&self, kind: TaskKind, owner: usize, chunk: usize) -> usize {
        (owner * self.chunks + chunk) * TASK_KINDS + kind as usize
    }

    fn add(&mut self, task: Task) -> usize {
        let id = self.tasks.len();
        let slot = self.slot(task.kind, task.owner, task.chunk);
        self.index[slot] = Some(id);
        self.tasks.push(task);
        id
    }

    fn get(&self, kind: TaskKind, owner: usize, chunk: usize) -> Option<usize> {
        if chunk >= self.chunks {
            return None;
        }
        self.index
            .get(self.slot(kind, owner, chunk))
            .copied()
            .flatten()
    }
}

/// Per-stage, per-chunk quantities the task graph needs.
struct StageCosts {
    layers: usize,
    fwd_flops: Vec<f64>,
    kv: Vec<f64>,
    offloadable: Vec<f64>,
    boundary: Vec<f64>,
}

fn node_of(stage: usize, sp: usize, gpus_per_node: usize) -> usize {
    stage * sp / gpus_per_node
}

pub fn simulate(
    model: &ModelSpec,
    hw: &HardwareSpec,
    config: &ParallelismConfig,
    partition: &SequencePartition,
    plan: &OffloadPlan,
) -> Result<(Vec<ScheduleEvent>, SimulationReport)> {
    simulate_with(model, hw, config, partition, plan, &SimOptions::default())
}

pub fn simulate_with(
    model: &ModelSpec,
    hw: &HardwareSpec,
    config: &ParallelismConfig,
    partition: &SequencePartition,
    plan: &OffloadPlan,
    opts: &SimOptions,
) -> Result<(Vec<ScheduleEvent>, SimulationReport)> {
    let (events, report) = simulate_inner(model, hw, config, partition, plan, opts, true)?;
    Ok((events.unwrap_or_default(), report))
}

/// As [`simulate_with`] without materializing the event list; the solver's
/// fast path.
pub fn simulate_report(
    model: &ModelSpec,
    hw: &HardwareSpec,
    config: &ParallelismConfig,
    partition: &SequencePartition,
    plan: &OffloadPlan,
    opts: &SimOptions,
) -> Result<SimulationReport> {
    simulate_inner(model, hw, config, partition, plan, opts, false).map(|(_, r)| r)
}

fn simulate_inner(
    model: &ModelSpec,
    hw: &HardwareSpec,
    config: &ParallelismConfig,
    partition: &SequencePartition,
    plan: &OffloadPlan,
    opts: &SimOptions,
    want_events: bool,
) -> Result<(Option<Vec<ScheduleEvent>>, SimulationReport)> {
    model.validate()?;
    hw.validate()?;
    opts.validate()?;
    config.validate(model, hw)?;
    let pp = config.pp;
    let n = partition.len();
    if config.n != n {
        return Err(Error::domain(
            "parallelism",
            format!("config has N={} but the partition has {n} chunks", config.n),
        ));
    }
    if plan.len() != n {
        return Err(Error::domain(
            "offload plan",
            format!("plan has {} chunks but the partition has {n}", plan.len()),
        ));
    }

    let costs: Vec<StageCosts> = (0..pp)
        .map(|k| {
            let view = StageView::new(model, pp, config.sp, k);
            let sp = config.sp as f64;
            let mut c = StageCosts {
                layers: view.model.layers,
                fwd_flops: Vec::with_capacity(n),
                kv: Vec::with_capacity(n),
                offloadable: Vec::with_capacity(n),
                boundary: Vec::with_capacity(n),
            };
            for (j, (len, prefix)) in partition.chunks().enumerate() {
                c.fwd_flops.push(view.forward_flops(len, prefix)?);
                let b = activation_breakdown_with(&view.model, partition, j, config.recompute)?;
                c.kv.push(b.resident_kv_bytes / sp);
                c.offloadable.push(b.offloadable_bytes / sp);
                c.boundary.push(view.boundary_bytes(len));
            }
            Ok(c)
        })
        .collect::<Result<_>>()?;

    let msp: Option<MspPhasePlan> = if config.msp_enabled {
        Some(msp_phase_plan(pp, n)?)
    } else {
        None
    };
    let node = |stage: usize| node_of(stage, config.sp, hw.gpus_per_node);
    let p2p_bw = |a: usize, b: usize| {
        if node(a) == node(b) {
            hw.bw_p2p_intra
        } else {
            hw.bw_p2p_inter
        }
    };
    // Eligible hosts (owner first), the chunk's phase, and split costs.
    let compute_split = |k: usize, j: usize, flops: f64| -> (Vec<usize>, Phase, Option<Split>) {
        match &msp {
            None => (vec![k], Phase::None, None),
            Some(plan) => {
                let phases = &plan.stages[k];
                let phase = phases.phase_of(j);
                let range = phases.sp_range(j);
                if range.len() <= 1 {
                    return (vec![k], phase, None);
                }
                let bw = p2p_bw(range.start, range.end - 1);
                let surcharge =
                    opts.msp_comm_factor * costs[k].layers as f64 * costs[k].boundary[j] / bw;
                let mut hosts = vec![k];
                hosts.extend(range.filter(|&h| h != k));
                (hosts, phase, Some(Split { flops, surcharge }))
            }
        }
    };

    let mut g = Graph::new(pp, n);
    let depth = opts.prefetch_depth;

    for j in 0..n {
        for k in 0..pp {
            let mut deps = Vec::new();
            if j > 0 {
                deps.push((g.get(TaskKind::Forward, k, j - 1).unwrap(), At::End));
            }
            if k > 0 {
                deps.push((g.get(TaskKind::ActSend, k - 1, j).unwrap(), At::End));
            }
            // At most one offload may still be in flight when a chunk starts.
            if j >= 2 {
                if let Some(off) = g.get(TaskKind::Offload, k, j - 2) {
                    deps.push((off, At::End));
                }
            }
            let flops = costs[k].fwd_flops[j];
            let (hosts, phase, split) = compute_split(k, j, flops);
            let diag = (k + j) as i64;
            g.add(Task {
                key: (0, diag, 0, k, j),
                kind: TaskKind::Forward,
                owner: k,
                chunk: j,
                phase,
                resources: hosts.into_iter().map(|h| (h, Stream::Compute)).collect(),
                duration: compute_time(flops, hw),
                bytes: 0.0,
                deps,
                split,
            });
            let fwd = g.get(TaskKind::Forward, k, j).unwrap();

            let bytes = plan.alphas[j] * costs[k].offloadable[j];
            if bytes > 0.0 {
                g.add(Task {
                    key: (0, diag, 1, k, j),
                    kind: TaskKind::Offload,
                    owner: k,
                    chunk: j,
                    phase: Phase::None,
                    resources: vec![(k, Stream::D2h)],
                    duration: bytes / hw.bw_d2h,
                    bytes,
                    deps: vec![(fwd, At::End)],
                    split: None,
                });
            }
            if k + 1 < pp {
                let bytes = costs[k].boundary[j];
                g.add(Task {
                    key: (0, diag, 3, k, j),
                    kind: TaskKind::ActSend,
                    owner: k,
                    chunk: j,
                    phase: Phase::None,
                    resources: vec![(k, Stream::P2p), (k + 1, Stream::P2p)],
                    duration: bytes / p2p_bw(k, k + 1),
                    bytes,
                    deps: vec![(fwd, At::End)],
                    split: None,
                });
            }
        }
    }

    for j in (0..n).rev() {
        for k in (0..pp).rev() {
            let diag = ((pp - 1 - k) + (n - 1 - j)) as i64;
            let fwd = g.get(TaskKind::Forward, k, j).unwrap();
            let mut deps = vec![(fwd, At::End)];

            if let Some(off) = g.get(TaskKind::Offload, k, j) {
                let trigger = if j + depth < n {
                    (g.get(TaskKind::Backward, k, j + depth).unwrap(), At::Start)
                } else {
                    (g.get(TaskKind::Forward, k, n - 1).unwrap(), At::End)
                };
                let bytes = g.tasks[off].bytes;
                let reload = g.add(Task {
                    key: (1, diag - depth as i64, 2, k, j),
                    kind: TaskKind::Reload,
                    owner: k,
                    chunk: j,
                    phase: Phase::None,
                    resources: vec![(k, Stream::H2d)],
                    duration: bytes / hw.bw_h2d,
                    bytes,
                    deps: vec![(off, At::End), trigger],
                    split: None,
                });
                deps.push((reload, At::End));
            }
            if j + 1 < n {
                deps.push((g.get(TaskKind::Backward, k, j + 1).unwrap(), At::End));
            }
            if k + 1 < pp {
                deps.push((g.get(TaskKind::GradSend, k + 1, j).unwrap(), At::End));
            }
            let flops = backward_flops(model, costs[k].fwd_flops[j], config.recompute);
            let (hosts, phase, split) = compute_split(k, j, flops);
            let bwd = g.add(Task {
                key: (1, diag, 0, k, j),
                kind: TaskKind::Backward,
                owner: k,
                chunk: j,
                phase,
                resources: hosts.into_iter().map(|h| (h, Stream::Compute)).collect(),
                duration: compute_time(flops, hw),
                bytes: 0.0,
                deps,
                split,
            });
            if k > 0 {
                let bytes = costs[k].boundary[j];
                g.add(Task {
                    key: (1, diag, 3, k, j),
                    kind: TaskKind::GradSend,
                    owner: k,
                    chunk: j,
                    phase: Phase::None,
                    resources: vec![(k, Stream::P2p), (k - 1, Stream::P2p)],
                    duration: bytes / p2p_bw(k, k - 1),
                    bytes,
                    deps: vec![(bwd, At::End)],
                    split: None,
                });
            }
        }
    }

    let times = run(&mut g, pp, hw)?;
    let events = want_events.then(|| emit_events(&g, &times));
    let report = build_report(model, hw, config, partition, opts, &g, &times, &costs);
    Ok((events, report))
}

/// Busy intervals of one compute stream, sorted and disjoint.
#[derive(Default)]
struct Timeline(Vec<(f64, f64)>);

impl Timeline {
    /// End of the idle window that starts at `t`, or `None` if busy at `t`.
    fn idle_until(&self, t: f64) -> Option<f64> {
        let i = self.0.partition_point(|iv| iv.1 <= t);
        match self.0.get(i) {
            Some(&(a, _)) if a <= t => None,
            Some(&(a, _)) => Some(a),
            None => Some(f64::INFINITY),
        }
    }

    fn insert(&mut self, start: f64, end: f64) {
        if end > start {
            let i = self.0.partition_point(|iv| iv.0 < start);
            self.0.insert(i, (start, end));
        }
    }

    fn ends_after(&self, t: f64) -> impl Iterator<Item = f64> + '_ {
        let i = self.0.partition_point(|iv| iv.1 <= t);
        self.0[i..].iter().map(|iv| iv.1)
    }

    /// Earliest start at or after `t` with `len` idle time in front of it.
    fn first_fit(&self, t: f64, len: f64) -> f64 {
        let mut s = t;
        let i = self.0.partition_point(|iv| iv.1 <= t);
        for &(a, b) in &self.0[i..] {
            if s + len <= a {
                break;
            }
            s = s.max(b);
        }
        s
    }
}

/// Earliest-finishing placement of a split task that is ready at `ready`:
/// `(start, end, helpers used)`. Helpers are only added when they make the
/// chunk finish strictly sooner.
#[allow(clippy::too_many_arguments)]
fn place_split(
    lines: &[Timeline],
    owner: usize,
    helpers: &[usize],
    ready: f64,
    solo: f64,
    split: Split,
    hw: &HardwareSpec,
    starts: &mut Vec<f64>,
    open: &mut Vec<(f64, usize)>,
) -> (f64, f64, Vec<usize>) {
    starts.clear();
    starts.push(ready);
    starts.extend(lines[owner].ends_after(ready));
    for &h in helpers {
        starts.extend(lines[h].ends_after(ready));
    }
    starts.sort_by(f64::total_cmp);
    starts.dedup();
    let solo_start = lines[owner].first_fit(ready, solo);
    let mut best: (f64, f64, Vec<usize>) = (solo_start, solo_start + solo, Vec::new());
    for &s in starts.iter() {
        if s >= best.1 {
            break;
        }
        let Some(own_until) = lines[owner].idle_until(s) else {
            continue;
        };
        open.clear();
        open.extend(
            helpers
                .iter()
                .filter_map(|&h| lines[h].idle_until(s).map(|u| (u, h))),
        );
        // Longest idle windows first, lower stage index on ties.
        open.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for used in 1..=open.len() {
            let end = s + compute_time(split.flops / (used + 1) as f64, hw) + split.surcharge;
            if end <= own_until && end <= open[used - 1].0 && end < best.1 {
                best = (s, end, open[..used].iter().map(|o| o.1).collect());
            }
        }
    }
    best
}

/// Start/end of every task, computed in key order. Transfer streams run
/// their tasks in key order. Compute streams take each task at the earliest
/// idle gap that fits it; a stage's own compute tasks are already chained
/// by dependencies, so gaps only matter for chunks borrowing helper GPUs.
/// Split tasks have `resources` narrowed to the hosts they actually used.
fn run(g: &mut Graph, stages: usize, hw: &HardwareSpec) -> Result<Vec<(f64, f64)>> {
    let mut order: Vec<usize> = (0..g.tasks.len()).collect();
    order.sort_by_key(|&i| g.tasks[i].key);
    let mut times: Vec<Option<(f64, f64)>> = vec![None; g.tasks.len()];
    let slot = |(stage, stream): (usize, Stream)| stage * 4 + stream as usize;
    let mut free = vec![0.0f64; stages * 4];
    let mut lines: Vec<Timeline> = (0..stages).map(|_| Timeline::default()).collect();
    let (mut starts, mut open, mut helpers) = (Vec::new(), Vec::new(), Vec::new());
    for &i in &order {
        let t = &g.tasks[i];
        let mut ready: f64 = 0.0;
        for &(dep, at) in &t.deps {
            let (s, e) = times[dep].ok_or_else(|| {
                Error::Internal(format!(
                    "dependency deadlock: {:?} of chunk {} on stage {} waits on an unscheduled task",
                    t.kind, t.chunk, t.owner
                ))
            })?;
            ready = ready.max(match at {
                At::Start => s,
                At::End => e,
            });
        }
        let (start, end) = if let Some(split) = t.split {
            let owner = t.resources[0].0;
            helpers.clear();
            helpers.extend(t.resources[1..].iter().map(|r| r.0));
            let (start, end, used) = place_split(
                &lines,
                owner,
                &helpers,
                ready,
                t.duration,
                split,
                hw,
                &mut starts,
                &mut open,
            );
            let t = &mut g.tasks[i];
            t.resources.truncate(1);
            t.resources
                .extend(used.into_iter().map(|h| (h, Stream::Compute)));
            for &(h, _) in &t.resources {
                lines[h].insert(start, end);
            }
            (start, end)
        } else if matches!(t.kind, TaskKind::Forward | TaskKind::Backward) {
            let owner = t.resources[0].0;
            let start = lines[owner].first_fit(ready, t.duration);
            lines[owner].insert(start, start + t.duration);
            (start, start + t.duration)
        } else {
            let start = t.resources.iter().fold(ready, |a, r| a.max(free[slot(*r)]));
            let end = start + t.duration;
            for r in &t.resources {
                free[slot(*r)] = end;
            }
            (start, end)
        };
        times[i] = Some((start, end));
    }
    Ok(times
        .into_iter()
        .map(|t| t.expect("all tasks scheduled"))
        .collect())
}

fn emit_events(g: &Graph, times: &[(f64, f64)]) -> Vec<ScheduleEvent> {
    let mut events = Vec::new();
    for (t, &(start, end)) in g.tasks.iter().zip(times) {
        for (idx, &(stage, stream)) in t.resources.iter().enumerate() {
            let kind = match t.kind {
                TaskKind::Forward => EventKind::Forward,
                TaskKind::Backward => EventKind::Backward,
                TaskKind::Offload => EventKind::Offload,
                TaskKind::Reload => EventKind::Reload,
                TaskKind::ActSend | TaskKind::GradSend => {
                    if idx == 0 {
                        EventKind::Send
                    } else {
                        EventKind::Recv
                    }
                }
            };
            events.push(ScheduleEvent {
                stage,
                owner: t.owner,
                stream,
                kind,
                subseq: t.chunk,
                phase: t.phase,
                t_start: start,
                t_end: end,
                bytes: t.bytes,
            });
        }
    }
    events.sort_by(|a, b| {
        a.t_start
            .total_cmp(&b.t_start)
            .then(a.stage.cmp(&b.stage))
            .then(a.subseq.cmp(&b.subseq))
            .then(a.stream.cmp(&b.stream))
            .then(a.owner.cmp(&b.owner))
            .then(a.kind.cmp(&b.kind))
    });
    events
}

/// (time, frees-before-allocs, kv, offloadable, transient)
type MemDelta = (f64, u8, f64, f64, f64);

#[allow(clippy::too_many_arguments)]
fn build_report(
    model: &ModelSpec,
    hw: &HardwareSpec,
    config: &ParallelismConfig,
    partition: &SequencePartition,
    opts: &SimOptions,
    g: &Graph,
    times: &[(f64, f64)],
    costs: &[StageCosts],
) -> SimulationReport {
    let pp = config.pp;
    let n = partition.len();
    let iteration_time = times.iter().map(|t| t.1).fold(0.0, f64::max);

    let mut busy = vec![0.0; pp];
    for (t, &(start, end)) in g.tasks.iter().zip(times) {
        for &(stage, stream) in &t.resources {
            if stream == Stream::Compute {
                busy[stage] += end - start;
            }
        }
    }
    let per_stage_bubble: Vec<f64> = busy.iter().map(|b| iteration_time - b).collect();
    let total_busy: f64 = busy.iter().sum();
    let bubble_ratio = if total_busy > 0.0 {
        per_stage_bubble.iter().sum::<f64>() / total_busy
    } else {
        0.0
    };

    let mut deltas: Vec<Vec<MemDelta>> = vec![Vec::new(); pp];
    let headroom = model.transient_headroom;
    for (t, &(start, end)) in g.tasks.iter().zip(times) {
        let k = t.owner;
        let j = t.chunk;
        match t.kind {
            TaskKind::Forward => {
                deltas[k].push((start, 1, costs[k].kv[j], 0.0, 0.0));
                deltas[k].push((end, 1, 0.0, costs[k].offloadable[j], 0.0));
            }
            TaskKind::Backward => {
                deltas[k].push((end, 0, -costs[k].kv[j], -costs[k].offloadable[j], 0.0));
            }
            TaskKind::Offload => deltas[k].push((end, 0, 0.0, -t.bytes, 0.0)),
            TaskKind::Reload => deltas[k].push((start, 1, 0.0, t.bytes, 0.0)),
            TaskKind::ActSend | TaskKind::GradSend => {}
        }
        if matches!(t.kind, TaskKind::Forward | TaskKind::Backward) && headroom > 0.0 {
            for &(host, _) in &t.resources {
                deltas[host].push((start, 1, 0.0, 0.0, headroom));
                deltas[host].push((end, 0, 0.0, 0.0, -headroom));
            }
        }
    }
    let weights = model.param_bytes * opts.weight_multiplier / pp as f64;
    let mut per_stage_peak_mem = Vec::with_capacity(pp);
    let mut per_stage_forward_offload_peak = Vec::with_capacity(pp);
    for (k, stage_deltas) in deltas.iter_mut().enumerate() {
        stage_deltas.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let fwd_done = times[g.get(TaskKind::Forward, k, n - 1).unwrap()].1;
        let (mut kv, mut off, mut tr) = (0.0, 0.0, 0.0);
        let (mut peak, mut fwd_peak) = (weights, 0.0f64);
        for &(t, _, dkv, doff, dtr) in stage_deltas.iter() {
            kv += dkv;
            off += doff;
            tr += dtr;
            peak = f64::max(peak, weights + kv + off + tr);
            if t <= fwd_done {
                fwd_peak = fwd_peak.max(off);
            }
        }
        per_stage_peak_mem.push(peak);
        per_stage_forward_offload_peak.push(fwd_peak);
    }
    let feasible = per_stage_peak_mem.iter().all(|&m| m <= hw.gpu_mem);

    let gpus = (config.sp * config.pp) as f64;
    let tokens = (model.batch * partition.total()) as f64;
    let tgs_estimate = if iteration_time > 0.0 {
        tokens / (gpus * iteration_time)
    } else {
        0.0
    };
    let sum_bytes = |kind: TaskKind| -> f64 {
        g.tasks
            .iter()
            .filter(|t| t.kind == kind)
            .map(|t| t.bytes)
            .sum()
    };

    SimulationReport {
        iteration_time,
        per_stage_bubble,
        bubble_ratio,
        per_stage_peak_mem,
        per_stage_forward_offload_peak,
        feasible,
        tgs_estimate,
        d2h_bytes: sum_bytes(TaskKind::Offload),
        h2d_bytes: sum_bytes(TaskKind::Reload),
    }
}
