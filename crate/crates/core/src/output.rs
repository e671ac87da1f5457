//! Artifact emission: JSON report, Chrome trace, memory and candidate CSVs,
//! partition tables and sweep results.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::activation::activation_breakdown_with;
use crate::config::{Artifact, RunConfig, SweepAxis};
use crate::cost_model::ModelSpec;
use crate::error::{Error, Result};
use crate::offload::{memory_rows, write_memory_csv};
use crate::partition::SequencePartition;
use crate::pipeline::write_chrome_trace;
use crate::solver::{evaluate_config, solve_with, Evaluated, ParallelismConfig, RunArtifacts};

/// Body of `report.json`.
#[derive(Debug, Serialize)]
pub struct RunReport<'a> {
    pub config: &'a RunConfig,
    pub parallelism: &'a ParallelismConfig,
    pub iteration_time: f64,
    pub bubble_ratio: f64,
    pub per_stage_bubble: &'a [f64],
    pub per_stage_peak_mem: &'a [f64],
    pub gpu_mem_capacity: f64,
    pub feasible: bool,
    pub tgs_estimate: f64,
    pub d2h_bytes: f64,
    pub h2d_bytes: f64,
    pub alphas: &'a [f64],
    pub offload_bytes: &'a [f64],
    pub m_threshold: f64,
    pub balanced_compute_time: f64,
    pub partition_lengths: &'a [usize],
}

impl<'a> RunReport<'a> {
    pub fn new(run: &'a RunConfig, a: &'a RunArtifacts) -> Self {
        RunReport {
            config: run,
            parallelism: &a.config,
            iteration_time: a.report.iteration_time,
            bubble_ratio: a.report.bubble_ratio,
            per_stage_bubble: &a.report.per_stage_bubble,
            per_stage_peak_mem: &a.report.per_stage_peak_mem,
            gpu_mem_capacity: run.hardware.gpu_mem,
            feasible: a.report.feasible,
            tgs_estimate: a.report.tgs_estimate,
            d2h_bytes: a.report.d2h_bytes,
            h2d_bytes: a.report.h2d_bytes,
            alphas: &a.plan.alphas,
            offload_bytes: &a.plan.offload_bytes,
            m_threshold: a.plan.m_threshold,
            balanced_compute_time: a.plan.balanced_compute_time,
            partition_lengths: a.partition.lengths(),
        }
    }
}

/// One row of `candidates.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateRow {
    pub sp: usize,
    pub pp: usize,
    pub n: usize,
    pub offload: &'static str,
    pub msp: bool,
    pub iteration_time: f64,
    pub bubble_ratio: f64,
    pub max_peak_mem: f64,
    pub tgs_estimate: f64,
    pub feasible: bool,
    pub selected: bool,
}

pub fn candidate_rows(candidates: &[Evaluated], selected: &ParallelismConfig) -> Vec<CandidateRow> {
    candidates
        .iter()
        .map(|e| CandidateRow {
            sp: e.config.sp,
            pp: e.config.pp,
            n: e.config.n,
            offload: e.config.offload_mode.as_str(),
            msp: e.config.msp_enabled,
            iteration_time: e.report.iteration_time,
            bubble_ratio: e.report.bubble_ratio,
            max_peak_mem: max_of(&e.report.per_stage_peak_mem),
            tgs_estimate: e.report.tgs_estimate,
            feasible: e.report.feasible,
            selected: &e.config == selected,
        })
        .collect()
}

fn max_of(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(0.0, f64::max)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for row in rows {
        w.serialize(row).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Write the artifacts requested in `run.emit`; returns the paths written.
///
/// `candidates.csv` is only produced when a candidate list is supplied.
pub fn emit_outputs(
    run: &RunConfig,
    artifacts: &RunArtifacts,
    candidates: Option<&[Evaluated]>,
) -> Result<Vec<PathBuf>> {
    let dir = &run.output_dir;
    ensure_dir(dir)?;
    let mut written = Vec::new();
    for &artifact in &run.emit {
        let path = dir.join(artifact.file_name());
        match artifact {
            Artifact::ReportJson => {
                let mut w = create(&path)?;
                serde_json::to_writer_pretty(&mut w, &RunReport::new(run, artifacts))
                    .map_err(|e| Error::io(&path, e))?;
                w.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
                w.flush().map_err(|e| Error::io(&path, e))?;
            }
            Artifact::TraceJson => {
                let mut w = create(&path)?;
                write_chrome_trace(&artifacts.events, &mut w).map_err(|e| Error::io(&path, e))?;
                w.flush().map_err(|e| Error::io(&path, e))?;
            }
            Artifact::MemoryCsv => {
                let rows = memory_rows(&artifacts.plan, &artifacts.breakdowns)?;
                write_memory_csv(&rows, create(&path)?).map_err(|e| Error::io(&path, e))?;
            }
            Artifact::CandidatesTable => {
                let Some(c) = candidates else {
                    log::debug!(
                        "no candidate list in {} mode; skipping {}",
                        run.mode.as_str(),
                        path.display()
                    );
                    continue;
                };
                write_csv(&path, &candidate_rows(c, &artifacts.config))?;
            }
        }
        log::info!("wrote {}", path.display());
        written.push(path);
    }
    Ok(written)
}

/// One chunk of a partition, with its cost and activation footprint over
/// the whole model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartitionRow {
    pub index: usize,
    pub length: usize,
    pub prefix: usize,
    pub forward_flops: f64,
    pub kv_bytes: f64,
    pub offloadable_bytes: f64,
}

pub fn partition_rows(
    model: &ModelSpec,
    partition: &SequencePartition,
) -> Result<Vec<PartitionRow>> {
    let flops = partition.chunk_flops(model)?;
    (0..partition.len())
        .map(|j| {
            let b = activation_breakdown_with(model, partition, j, false)?;
            Ok(PartitionRow {
                index: j,
                length: partition.lengths()[j],
                prefix: partition.prefixes()[j],
                forward_flops: flops[j],
                kv_bytes: b.resident_kv_bytes,
                offloadable_bytes: b.offloadable_bytes,
            })
        })
        .collect()
}

/// Human-readable fixed-width table of [`partition_rows`].
pub fn format_partition_table(rows: &[PartitionRow]) -> String {
    let mut s = format!(
        "{:>5} {:>10} {:>10} {:>14} {:>14} {:>14}\n",
        "chunk", "length", "prefix", "fwd_flops", "kv_bytes", "offload_bytes"
    );
    for r in rows {
        s.push_str(&format!(
            "{:>5} {:>10} {:>10} {:>14.6e} {:>14.6e} {:>14.6e}\n",
            r.index, r.length, r.prefix, r.forward_flops, r.kv_bytes, r.offloadable_bytes
        ));
    }
    s
}

/// Writes `partition.csv` and `partition.json` into `dir`.
pub fn emit_partition(dir: &Path, rows: &[PartitionRow]) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let csv_path = dir.join("partition.csv");
    write_csv(&csv_path, rows)?;
    let json_path = dir.join("partition.json");
    let mut w = create(&json_path)?;
    serde_json::to_writer_pretty(&mut w, rows).map_err(|e| Error::io(&json_path, e))?;
    w.flush().map_err(|e| Error::io(&json_path, e))?;
    Ok(vec![csv_path, json_path])
}

/// One point of a sweep. Infeasible points carry NaN metrics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub axis: &'static str,
    pub value: f64,
    pub sp: Option<usize>,
    pub pp: Option<usize>,
    pub n: Option<usize>,
    pub offload: Option<&'static str>,
    pub msp: Option<bool>,
    pub iteration_time: f64,
    pub bubble_ratio: f64,
    pub max_peak_mem: f64,
    pub tgs_estimate: f64,
    pub feasible: bool,
}

/// Evaluate every sweep point. With `[parallelism]` the fixed configuration
/// is simulated; otherwise the solver picks a configuration per point.
pub fn run_sweep(run: &RunConfig) -> Result<Vec<SweepRow>> {
    let sweep = run
        .sweep
        .as_ref()
        .ok_or_else(|| Error::Config("missing key `sweep` (required in sweep mode)".into()))?;
    let mut rows = Vec::with_capacity(sweep.values.len());
    for &value in &sweep.values {
        let mut point = run.clone();
        match sweep.axis {
            SweepAxis::SequenceLength => point.sequence_length = value as usize,
            SweepAxis::N => {
                if let Some(p) = point.parallelism.as_mut() {
                    p.n = value as usize;
                }
            }
            SweepAxis::BwD2h => point.hardware.bw_d2h = value,
        }
        point.validate()?;
        let result = match &point.parallelism {
            Some(p) => evaluate_config(
                &point.model,
                &point.hardware,
                point.sequence_length,
                p,
                point.solver.quantum,
                &point.simulation,
            ),
            None => solve_with(
                &point.model,
                &point.hardware,
                point.sequence_length,
                &point.solver,
                &point.simulation,
            )
            .map(|s| s.best),
        };
        let row = match result {
            Ok(e) => SweepRow {
                axis: sweep.axis.as_str(),
                value,
                sp: Some(e.config.sp),
                pp: Some(e.config.pp),
                n: Some(e.config.n),
                offload: Some(e.config.offload_mode.as_str()),
                msp: Some(e.config.msp_enabled),
                iteration_time: e.report.iteration_time,
                bubble_ratio: e.report.bubble_ratio,
                max_peak_mem: max_of(&e.report.per_stage_peak_mem),
                tgs_estimate: e.report.tgs_estimate,
                feasible: e.report.feasible,
            },
            Err(err) if err.is_infeasibility() => {
                log::warn!("sweep point {}={value}: {err}", sweep.axis.as_str());
                SweepRow {
                    axis: sweep.axis.as_str(),
                    value,
                    sp: None,
                    pp: None,
                    n: None,
                    offload: None,
                    msp: None,
                    iteration_time: f64::NAN,
                    bubble_ratio: f64::NAN,
                    max_peak_mem: f64::NAN,
                    tgs_estimate: f64::NAN,
                    feasible: false,
                }
            }
            Err(err) => return Err(err),
        };
        rows.push(row);
    }
    Ok(rows)
}

pub fn emit_sweep(dir: &Path, rows: &[SweepRow]) -> Result<PathBuf> {
    ensure_dir(dir)?;
    let path = dir.join("sweep.csv");
    write_csv(&path, rows)?;
    Ok(path)
}
