//! FLOPs, byte and wall-clock estimates.
//!
//! Every duration the planner and simulator use is derived here. Forward cost
//! of a chunk is the linear-layer term plus the exact causal-attention term:
//! token `t` of a chunk that starts after `prefix` tokens attends to
//! `prefix + t` positions, so the attention work of a chunk grows with its
//! position in the sequence even when chunk lengths are equal.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partition::SequencePartition;

fn default_bytes_per_element() -> f64 {
    2.0
}
fn default_c_lin() -> f64 {
    24.0
}
fn default_attn_coeff() -> f64 {
    4.0
}
fn default_bwd_multiplier() -> f64 {
    2.0
}
fn default_recompute_multiplier() -> f64 {
    1.0
}
fn default_kv_coeff() -> f64 {
    2.0
}
fn default_offload_coeff() -> f64 {
    36.0
}
fn default_checkpoint_coeff() -> f64 {
    1.0
}

/// Transformer shape and cost coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    #[serde(default = "one")]
    pub batch: usize,
    #[serde(default = "default_bytes_per_element")]
    pub bytes_per_element: f64,
    /// Weight, gradient and optimizer bytes of the whole model.
    /// Defaults to `16 * 12 * L * H^2` when omitted from a config file.
    #[serde(default)]
    pub param_bytes: f64,
    /// Linear-layer FLOPs per token per layer, in units of `H^2`.
    #[serde(default = "default_c_lin")]
    pub c_lin: f64,
    /// Attention FLOPs per token per layer per attended position, in units of `H`.
    #[serde(default = "default_attn_coeff")]
    pub attn_coeff: f64,
    #[serde(default = "default_bwd_multiplier")]
    pub bwd_multiplier: f64,
    #[serde(default = "default_recompute_multiplier")]
    pub recompute_multiplier: f64,
    /// Resident K/V bytes per token per layer, in units of `B*H*bytes_per_element`.
    #[serde(default = "default_kv_coeff")]
    pub kv_coeff: f64,
    /// Offloadable activation bytes per token per layer, same units as `kv_coeff`.
    #[serde(default = "default_offload_coeff")]
    pub offload_coeff: f64,
    /// Stored layer-input bytes per token per layer when recomputation is on.
    #[serde(default = "default_checkpoint_coeff")]
    pub checkpoint_coeff: f64,
    /// Short-lived working memory added while a chunk computes.
    #[serde(default)]
    pub transient_headroom: f64,
}

fn one() -> usize {
    1
}

impl ModelSpec {
    /// A model with default coefficients and a parameter-byte estimate.
    pub fn new(layers: usize, hidden: usize, heads: usize) -> Self {
        let mut spec = ModelSpec {
            layers,
            hidden,
            heads,
            batch: 1,
            bytes_per_element: default_bytes_per_element(),
            param_bytes: 0.0,
            c_lin: default_c_lin(),
            attn_coeff: default_attn_coeff(),
            bwd_multiplier: default_bwd_multiplier(),
            recompute_multiplier: default_recompute_multiplier(),
            kv_coeff: default_kv_coeff(),
            offload_coeff: default_offload_coeff(),
            checkpoint_coeff: default_checkpoint_coeff(),
            transient_headroom: 0.0,
        };
        spec.param_bytes = spec.estimated_param_bytes();
        spec
    }

    /// GPT-7B row: L=32, H=4096, a=32, 120 GB of model state.
    pub fn gpt_7b() -> Self {
        ModelSpec {
            param_bytes: 120e9,
            ..ModelSpec::new(32, 4096, 32)
        }
    }

    pub fn gpt_13b() -> Self {
        ModelSpec {
            param_bytes: 234e9,
            ..ModelSpec::new(40, 5120, 40)
        }
    }

    pub fn gpt_65b() -> Self {
        ModelSpec {
            param_bytes: 1200e9,
            ..ModelSpec::new(80, 8192, 64)
        }
    }

    /// `12 L H^2` parameters at 16 bytes each (mixed-precision Adam state).
    pub fn estimated_param_bytes(&self) -> f64 {
        16.0 * 12.0 * self.layers as f64 * (self.hidden as f64).powi(2)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("model.layers", self.layers),
            ("model.hidden", self.hidden),
            ("model.heads", self.heads),
            ("model.batch", self.batch),
        ] {
            if v == 0 {
                return Err(Error::domain(
                    "model",
                    format!("{name} must be >= 1, got 0"),
                ));
            }
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::domain(
                "model",
                format!(
                    "model.hidden ({}) must be divisible by model.heads ({})",
                    self.hidden, self.heads
                ),
            ));
        }
        if !(self.bytes_per_element > 0.0 && self.bytes_per_element.is_finite()) {
            return Err(Error::domain(
                "model",
                "model.bytes_per_element must be a positive finite number",
            ));
        }
        for (name, v) in [
            ("model.param_bytes", self.param_bytes),
            ("model.c_lin", self.c_lin),
            ("model.attn_coeff", self.attn_coeff),
            ("model.bwd_multiplier", self.bwd_multiplier),
            ("model.recompute_multiplier", self.recompute_multiplier),
            ("model.kv_coeff", self.kv_coeff),
            ("model.offload_coeff", self.offload_coeff),
            ("model.checkpoint_coeff", self.checkpoint_coeff),
            ("model.transient_headroom", self.transient_headroom),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::domain(
                    "model",
                    format!("{name} must be finite and >= 0, got {v}"),
                ));
            }
        }
        if self.c_lin + self.attn_coeff <= 0.0 {
            return Err(Error::domain(
                "model",
                "c_lin and attn_coeff cannot both be zero (tokens would cost nothing)",
            ));
        }
        Ok(())
    }

    /// Bytes of one token's hidden state (`B * H * bytes_per_element`).
    pub fn hidden_bytes_per_token(&self) -> f64 {
        self.batch as f64 * self.hidden as f64 * self.bytes_per_element
    }
}

fn default_gpu_mem() -> f64 {
    80.0 * (1u64 << 30) as f64
}
fn default_cpu_mem() -> f64 {
    2.0 * (1u64 << 40) as f64
}
fn default_flops_rate() -> f64 {
    150e12
}
fn default_host_bw() -> f64 {
    32e9
}
fn default_p2p_intra() -> f64 {
    300e9
}
fn default_p2p_inter() -> f64 {
    25e9
}
fn default_kernel_overhead() -> f64 {
    3e-5
}

/// Cluster topology, memory capacities and transfer rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareSpec {
    pub num_nodes: usize,
    pub gpus_per_node: usize,
    #[serde(default = "default_gpu_mem")]
    pub gpu_mem: f64,
    #[serde(default = "default_cpu_mem")]
    pub cpu_mem: f64,
    /// Effective (calibrated) FLOPs per second of one GPU.
    #[serde(default = "default_flops_rate")]
    pub flops_rate: f64,
    #[serde(default = "default_host_bw")]
    pub bw_d2h: f64,
    #[serde(default = "default_host_bw")]
    pub bw_h2d: f64,
    #[serde(default = "default_p2p_intra")]
    pub bw_p2p_intra: f64,
    #[serde(default = "default_p2p_inter")]
    pub bw_p2p_inter: f64,
    /// Launch overhead paid once per chunk computation.
    #[serde(default = "default_kernel_overhead")]
    pub kernel_overhead: f64,
}

impl HardwareSpec {
    pub fn new(num_nodes: usize, gpus_per_node: usize) -> Self {
        HardwareSpec {
            num_nodes,
            gpus_per_node,
            gpu_mem: default_gpu_mem(),
            cpu_mem: default_cpu_mem(),
            flops_rate: default_flops_rate(),
            bw_d2h: default_host_bw(),
            bw_h2d: default_host_bw(),
            bw_p2p_intra: default_p2p_intra(),
            bw_p2p_inter: default_p2p_inter(),
            kernel_overhead: default_kernel_overhead(),
        }
    }

    pub fn total_gpus(&self) -> usize {
        self.num_nodes * self.gpus_per_node
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_nodes == 0 || self.gpus_per_node == 0 {
            return Err(Error::domain(
                "hardware",
                "hardware.num_nodes and hardware.gpus_per_node must be >= 1",
            ));
        }
        for (name, v) in [
            ("hardware.gpu_mem", self.gpu_mem),
            ("hardware.cpu_mem", self.cpu_mem),
            ("hardware.flops_rate", self.flops_rate),
            ("hardware.bw_d2h", self.bw_d2h),
            ("hardware.bw_h2d", self.bw_h2d),
            ("hardware.bw_p2p_intra", self.bw_p2p_intra),
            ("hardware.bw_p2p_inter", self.bw_p2p_inter),
        ] {
            // Infinite rates are allowed: they model free transfers.
            if v.is_nan() || v <= 0.0 {
                return Err(Error::domain(
                    "hardware",
                    format!("{name} must be > 0, got {v}"),
                ));
            }
        }
        if !(self.kernel_overhead >= 0.0 && self.kernel_overhead.is_finite()) {
            return Err(Error::domain(
                "hardware",
                format!(
                    "hardware.kernel_overhead must be finite and >= 0, got {}",
                    self.kernel_overhead
                ),
            ));
        }
        Ok(())
    }
}

/// Sum of `prefix + t` for `t = 1..=s_len`: the number of (query, key)
/// pairs a causal chunk computes.
pub fn causal_context(s_len: usize, prefix_len: usize) -> f64 {
    let s = s_len as u128;
    let c = prefix_len as u128;
    (s * c + s * (s + 1) / 2) as f64
}

/// Forward FLOPs of a chunk of `s_len` tokens preceded by `prefix_len` tokens.
pub fn forward_flops(model: &ModelSpec, s_len: usize, prefix_len: usize) -> Result<f64> {
    if s_len == 0 {
        return Err(Error::domain("chunk length", "s_len must be >= 1"));
    }
    let h = model.hidden as f64;
    let per_layer = model.c_lin * h * h * s_len as f64
        + model.attn_coeff * h * causal_context(s_len, prefix_len);
    Ok(model.batch as f64 * model.layers as f64 * per_layer)
}

pub fn compute_time(flops: f64, hw: &HardwareSpec) -> f64 {
    flops / hw.flops_rate + hw.kernel_overhead
}

pub fn transfer_time(bytes: f64, bandwidth: f64) -> Result<f64> {
    if bandwidth.is_nan() || bandwidth <= 0.0 {
        return Err(Error::domain(
            "bandwidth",
            format!("bandwidth must be > 0, got {bandwidth}"),
        ));
    }
    if bytes < 0.0 {
        return Err(Error::domain(
            "bytes",
            format!("bytes must be >= 0, got {bytes}"),
        ));
    }
    Ok(bytes / bandwidth)
}

/// Multiplier applied to forward FLOPs to get forward + backward (+ recompute).
pub fn pass_multiplier(model: &ModelSpec, recompute: bool) -> f64 {
    1.0 + model.bwd_multiplier
        + if recompute {
            model.recompute_multiplier
        } else {
            0.0
        }
}

/// Backward FLOPs of one chunk given its forward FLOPs.
pub fn backward_flops(model: &ModelSpec, fwd: f64, recompute: bool) -> f64 {
    fwd * (pass_multiplier(model, recompute) - 1.0)
}

/// Forward + backward (+ recompute) FLOPs over a whole partition.
pub fn iteration_compute_flops(
    model: &ModelSpec,
    partition: &SequencePartition,
    recompute: bool,
) -> Result<f64> {
    if partition.is_empty() {
        return Err(Error::domain("partition", "partition has no chunks"));
    }
    let mut forward = 0.0;
    for (len, prefix) in partition.chunks() {
        forward += forward_flops(model, len, prefix)?;
    }
    Ok(forward * pass_multiplier(model, recompute))
}

/// Split `layers` into `pp` contiguous stages; earlier stages take the remainder.
pub fn stage_layers(layers: usize, pp: usize, stage: usize) -> usize {
    layers / pp + usize::from(stage < layers % pp)
}

/// Per-GPU view of one pipeline stage: the stage's layers, sharded `sp` ways
/// along the sequence dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct StageView {
    pub model: ModelSpec,
    pub sp: usize,
}

impl StageView {
    pub fn new(model: &ModelSpec, pp: usize, sp: usize, stage: usize) -> Self {
        StageView {
            model: ModelSpec {
                layers: stage_layers(model.layers, pp, stage),
                ..model.clone()
            },
            sp,
        }
    }

    /// Whole model on a single GPU.
    pub fn whole(model: &ModelSpec) -> Self {
        StageView {
            model: model.clone(),
            sp: 1,
        }
    }

    pub fn forward_flops(&self, s_len: usize, prefix_len: usize) -> Result<f64> {
        Ok(forward_flops(&self.model, s_len, prefix_len)? / self.sp as f64)
    }

    /// Hidden-state bytes one GPU of this stage sends downstream for a chunk.
    pub fn boundary_bytes(&self, s_len: usize) -> f64 {
        self.model.hidden_bytes_per_token() * s_len as f64 / self.sp as f64
    }
}
