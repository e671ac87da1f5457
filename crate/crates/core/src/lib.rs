//! Planning and simulation for long-sequence pipeline-parallel training.
//!
//! The sequence is cut into subsequences that flow through a pipeline of
//! stages. This crate balances the cut by FLOPs, decides how much of each
//! subsequence's activations to stream to host memory, simulates the
//! resulting schedule and searches for the fastest parallel layout.

pub mod activation;
pub mod config;
pub mod cost_model;
pub mod error;
pub mod offload;
pub mod output;
pub mod partition;
pub mod pipeline;
pub mod solver;

pub use activation::{ActivationBreakdown, TensorClass};
pub use config::{parse_config, read_config, write_config, Artifact, Mode, RunConfig};
pub use cost_model::{HardwareSpec, ModelSpec, StageView};
pub use error::{Error, Result};
pub use offload::{OffloadMode, OffloadPlan};
pub use partition::SequencePartition;
pub use pipeline::{ScheduleEvent, SimOptions, SimulationReport};
pub use solver::{solve, solve_with, ParallelismConfig, RunArtifacts, SolverOptions};
