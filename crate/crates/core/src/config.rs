//! TOML run configuration.
//!
//! ```toml
//! mode = "plan"              # plan | simulate | partition | sweep
//! sequence_length = 524288
//! output_dir = "out"
//! emit = ["report_json", "trace_json", "memory_csv", "candidates_table"]
//!
//! [model]
//! layers = 32
//! hidden = 4096
//! heads = 32
//!
//! [hardware]
//! num_nodes = 4
//! gpus_per_node = 8
//!
//! [parallelism]              # required for simulate
//! sp = 8
//! pp = 4
//! n = 16
//! offload = "adaptive"
//! msp = true
//! ```

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cost_model::{HardwareSpec, ModelSpec};
use crate::error::{Error, Result};
use crate::pipeline::SimOptions;
use crate::solver::{ParallelismConfig, SolverOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Plan,
    Simulate,
    Partition,
    Sweep,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Plan => "plan",
            Mode::Simulate => "simulate",
            Mode::Partition => "partition",
            Mode::Sweep => "sweep",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Artifact {
    ReportJson,
    TraceJson,
    MemoryCsv,
    CandidatesTable,
}

impl Artifact {
    pub const ALL: [Artifact; 4] = [
        Artifact::ReportJson,
        Artifact::TraceJson,
        Artifact::MemoryCsv,
        Artifact::CandidatesTable,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            Artifact::ReportJson => "report.json",
            Artifact::TraceJson => "trace.json",
            Artifact::MemoryCsv => "memory.csv",
            Artifact::CandidatesTable => "candidates.csv",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    SequenceLength,
    N,
    BwD2h,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::SequenceLength => "sequence_length",
            SweepAxis::N => "n",
            SweepAxis::BwD2h => "bw_d2h",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSpec {
    pub n: usize,
    #[serde(default = "one")]
    pub quantum: usize,
}

fn default_mode() -> Mode {
    Mode::Plan
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_emit() -> BTreeSet<Artifact> {
    Artifact::ALL.into_iter().collect()
}

/// A fully defaulted, validated run description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_mode")]
    pub mode: Mode,
    pub sequence_length: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_emit")]
    pub emit: BTreeSet<Artifact>,
    pub model: ModelSpec,
    pub hardware: HardwareSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parallelism: Option<ParallelismConfig>,
    #[serde(default)]
    pub simulation: SimOptions,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<PartitionSpec>,
}

impl RunConfig {
    /// Parse TOML text, fill derived defaults and validate.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg = Self::parse_unvalidated(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parse and fill defaults but skip [`RunConfig::validate`], so callers
    /// can apply overrides (mode, output dir) first.
    pub fn parse_unvalidated(text: &str) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.fill_defaults();
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Defaults that depend on other fields.
    pub fn fill_defaults(&mut self) {
        if self.model.param_bytes == 0.0 {
            self.model.param_bytes = self.model.estimated_param_bytes();
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sequence_length == 0 {
            return Err(Error::domain("config", "sequence_length must be >= 1"));
        }
        self.model.validate()?;
        self.hardware.validate()?;
        self.simulation.validate()?;
        self.solver.validate()?;
        if let Some(p) = &self.parallelism {
            p.validate(&self.model, &self.hardware)?;
            if p.n > self.sequence_length {
                return Err(Error::domain(
                    "parallelism",
                    format!(
                        "parallelism.n ({}) exceeds sequence_length ({})",
                        p.n, self.sequence_length
                    ),
                ));
            }
        }
        if let Some(part) = &self.partition {
            if part.n == 0 || part.quantum == 0 {
                return Err(Error::domain(
                    "partition",
                    "partition.n and partition.quantum must be >= 1",
                ));
            }
        }
        match self.mode {
            Mode::Simulate if self.parallelism.is_none() => Err(Error::Config(
                "missing key `parallelism` (required in simulate mode)".into(),
            )),
            Mode::Partition if self.partition_chunks().is_none() => Err(Error::Config(
                "missing key `partition.n` (required in partition mode)".into(),
            )),
            Mode::Sweep => {
                let sweep = self.sweep.as_ref().ok_or_else(|| {
                    Error::Config("missing key `sweep` (required in sweep mode)".into())
                })?;
                if sweep.values.is_empty() {
                    return Err(Error::domain("sweep", "sweep.values must not be empty"));
                }
                if sweep.axis == SweepAxis::N && self.parallelism.is_none() {
                    return Err(Error::Config(
                        "missing key `parallelism` (required when sweeping n)".into(),
                    ));
                }
                for &v in &sweep.values {
                    let ok = match sweep.axis {
                        SweepAxis::SequenceLength | SweepAxis::N => {
                            v >= 1.0 && v.fract() == 0.0 && v.is_finite()
                        }
                        SweepAxis::BwD2h => v > 0.0,
                    };
                    if !ok {
                        return Err(Error::domain(
                            "sweep",
                            format!(
                                "sweep.values entry {v} is out of range for axis {}",
                                sweep.axis.as_str()
                            ),
                        ));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Chunk count for partition mode: `[partition].n`, else `parallelism.n`.
    pub fn partition_chunks(&self) -> Option<usize> {
        self.partition
            .as_ref()
            .map(|p| p.n)
            .or(self.parallelism.as_ref().map(|p| p.n))
    }

    pub fn partition_quantum(&self) -> usize {
        self.partition
            .as_ref()
            .map_or(self.solver.quantum, |p| p.quantum)
    }
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let cfg = read_config(path)?;
    cfg.validate()?;
    Ok(cfg)
}

/// [`parse_config`] without the final validation.
pub fn read_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    RunConfig::parse_unvalidated(&text)
}

pub fn write_config(cfg: &RunConfig, path: &Path) -> Result<()> {
    std::fs::write(path, cfg.to_toml_string()?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::offload::OffloadMode;

    const MINIMAL: &str = r#"
sequence_length = 65536

[model]
layers = 32
hidden = 4096
heads = 32

[hardware]
num_nodes = 1
gpus_per_node = 8
"#;

    #[test]
    fn minimal_file_gets_defaults() {
        let cfg = RunConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(cfg.mode, Mode::Plan);
        assert_eq!(cfg.model.bytes_per_element, 2.0);
        assert_eq!(cfg.model.c_lin, 24.0);
        assert_eq!(cfg.model.attn_coeff, 4.0);
        assert_eq!(cfg.hardware.bw_d2h, 32e9);
        assert_eq!(cfg.hardware.bw_h2d, 32e9);
        assert_eq!(cfg.hardware.kernel_overhead, 3e-5);
        assert_eq!(cfg.model.param_bytes, cfg.model.estimated_param_bytes());
        assert_eq!(cfg.emit.len(), 4);
        assert_eq!(
            (cfg.model.layers, cfg.model.hidden, cfg.model.heads),
            (32, 4096, 32)
        );
    }

    #[test]
    fn simulate_without_parallelism_fails() {
        let text = format!("mode = \"simulate\"\n{MINIMAL}");
        let err = RunConfig::from_toml_str(&text).unwrap_err();
        assert!(err.to_string().contains("parallelism"), "{err}");
    }

    #[test]
    fn missing_key_is_named() {
        let text = MINIMAL.replace("hidden = 4096\n", "");
        let err = RunConfig::from_toml_str(&text).unwrap_err();
        assert!(err.to_string().contains("hidden"), "{err}");
    }

    #[test]
    fn unknown_key_is_named() {
        let text = MINIMAL.replace("heads = 32", "heads = 32\nhiden = 1");
        let err = RunConfig::from_toml_str(&text).unwrap_err();
        assert!(err.to_string().contains("hiden"), "{err}");
    }

    #[test]
    fn out_of_range_names_invariant() {
        let text = MINIMAL.replace("sequence_length = 65536", "sequence_length = 0");
        let err = RunConfig::from_toml_str(&text).unwrap_err();
        assert!(err.to_string().contains("sequence_length"), "{err}");
    }

    #[test]
    fn round_trip_is_identical() {
        let text = format!(
            "mode = \"simulate\"\n{MINIMAL}\n[parallelism]\nsp = 2\npp = 4\nn = 8\noffload = \"full\"\nmsp = true\n"
        );
        let a = RunConfig::from_toml_str(&text).unwrap();
        assert_eq!(
            a.parallelism.as_ref().unwrap().offload_mode,
            OffloadMode::Full
        );
        let b = RunConfig::from_toml_str(&a.to_toml_string().unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn infinite_bandwidth_round_trips() {
        let text = MINIMAL.replace("gpus_per_node = 8", "gpus_per_node = 8\nbw_d2h = inf");
        let a = RunConfig::from_toml_str(&text).unwrap();
        assert!(a.hardware.bw_d2h.is_infinite());
        let b = RunConfig::from_toml_str(&a.to_toml_string().unwrap()).unwrap();
        assert_eq!(a, b);
    }
}
