//! Two-level activation management.
//!
//! Inside a chunk, tensors are classified by how they are accessed over an
//! iteration. K/V of a chunk are read by the attention of every later chunk,
//! so they stay on the device. Tensors touched once in forward and once in
//! backward are the offload candidates. Everything else lives only inside a
//! chunk's computation window.

use serde::{Deserialize, Serialize};

use crate::cost_model::ModelSpec;
use crate::error::{Error, Result};
use crate::partition::SequencePartition;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TensorClass {
    /// Type-0: read across several chunk steps; kept resident.
    Persistent,
    /// Type-1: written in forward, read once in backward; offloadable.
    ForwardBackwardOnce,
    /// Type-2: short-lived; never offloaded.
    Transient,
}

impl TensorClass {
    pub fn type_index(self) -> u8 {
        match self {
            TensorClass::Persistent => 0,
            TensorClass::ForwardBackwardOnce => 1,
            TensorClass::Transient => 2,
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            TensorClass::Persistent => "accessed by every later chunk; cached on device",
            TensorClass::ForwardBackwardOnce => {
                "accessed once in forward and once in backward; eligible for host offload"
            }
            TensorClass::Transient => "lives only inside one chunk's computation",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pass {
    Forward,
    Backward,
}

/// One access to a tensor: when, in which pass, during which chunk step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TensorAccess {
    pub time: f64,
    pub pass: Pass,
    pub step: usize,
}

pub fn classify_tensor(accesses: &[TensorAccess]) -> Result<TensorClass> {
    if accesses.is_empty() {
        return Err(Error::domain("access pattern", "no accesses recorded"));
    }
    if let Some(w) = accesses.windows(2).find(|w| !(w[1].time > w[0].time)) {
        return Err(Error::domain(
            "access pattern",
            format!(
                "timestamps must be strictly increasing ({} then {})",
                w[0].time, w[1].time
            ),
        ));
    }
    let mut fwd_steps: Vec<usize> = accesses
        .iter()
        .filter(|a| a.pass == Pass::Forward)
        .map(|a| a.step)
        .collect();
    let fwd = fwd_steps.len();
    fwd_steps.sort_unstable();
    fwd_steps.dedup();
    let bwd = accesses.len() - fwd;

    Ok(if fwd_steps.len() >= 2 {
        TensorClass::Persistent
    } else if fwd == 1 && bwd == 1 {
        TensorClass::ForwardBackwardOnce
    } else {
        TensorClass::Transient
    })
}

/// How a skeletal layer tensor of chunk `i` is touched across an iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Lifespan {
    /// Forward at steps `i..N`, backward at steps `N-1..=i`.
    CausalContext,
    /// Forward at `i`, backward at `i`.
    SavedForBackward,
    /// Forward at `i` only (recomputed or consumed immediately).
    Scratch,
}

/// A tensor produced inside one transformer layer's forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SkeletalTensor {
    pub name: &'static str,
    lifespan: Lifespan,
}

/// Tensors materialized by a layer's forward pass of one chunk.
pub const SKELETAL_TENSORS: &[SkeletalTensor] = &[
    SkeletalTensor {
        name: "layernorm1_in",
        lifespan: Lifespan::SavedForBackward,
    },
    SkeletalTensor {
        name: "layernorm1_out",
        lifespan: Lifespan::SavedForBackward,
    },
    SkeletalTensor {
        name: "q",
        lifespan: Lifespan::SavedForBackward,
    },
    SkeletalTensor {
        name: "k",
        lifespan: Lifespan::CausalContext,
    },
    SkeletalTensor {
        name: "v",
        lifespan: Lifespan::CausalContext,
    },
    SkeletalTensor {
        name: "attn_scores",
        lifespan: Lifespan::Scratch,
    },
    SkeletalTensor {
        name: "softmax_stats",
        lifespan: Lifespan::Scratch,
    },
    SkeletalTensor {
        name: "attn_context",
        lifespan: Lifespan::SavedForBackward,
    },
    SkeletalTensor {
        name: "attn_proj_out",
        lifespan: Lifespan::Scratch,
    },
    SkeletalTensor {
        name: "attn_dropout_mask",
        lifespan: Lifespan::SavedForBackward,
    },
    SkeletalTensor {
        name: "layernorm2_in",
        lifespan: Lifespan::SavedForBackward,
    },
    SkeletalTensor {
        name: "layernorm2_out",
        lifespan: Lifespan::SavedForBackward,
    },
    SkeletalTensor {
        name: "mlp_fc1_out",
        lifespan: Lifespan::SavedForBackward,
    },
    SkeletalTensor {
        name: "mlp_act_out",
        lifespan: Lifespan::SavedForBackward,
    },
    SkeletalTensor {
        name: "mlp_fc2_out",
        lifespan: Lifespan::Scratch,
    },
    SkeletalTensor {
        name: "mlp_dropout_mask",
        lifespan: Lifespan::SavedForBackward,
    },
];

impl SkeletalTensor {
    /// Access trace of this tensor for chunk `chunk` out of `chunks`, one
    /// time unit per chunk step (forward steps first, then backward in
    /// reverse chunk order).
    pub fn access_pattern(&self, chunk: usize, chunks: usize) -> Vec<TensorAccess> {
        assert!(chunk < chunks);
        let fwd = |step: usize| TensorAccess {
            time: step as f64,
            pass: Pass::Forward,
            step,
        };
        let bwd = |step: usize| TensorAccess {
            time: (2 * chunks - 1 - step) as f64,
            pass: Pass::Backward,
            step,
        };
        match self.lifespan {
            Lifespan::CausalContext => (chunk..chunks)
                .map(fwd)
                .chain((chunk..chunks).rev().map(bwd))
                .collect(),
            Lifespan::SavedForBackward => vec![fwd(chunk), bwd(chunk)],
            Lifespan::Scratch => vec![fwd(chunk)],
        }
    }
}

/// Resident / offloadable / transient bytes of one chunk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationBreakdown {
    pub subseq_id: usize,
    pub resident_kv_bytes: f64,
    pub offloadable_bytes: f64,
    pub transient_bytes: f64,
    pub per_layer: bool,
}

impl ActivationBreakdown {
    /// The same breakdown divided over the model's layers.
    pub fn per_layer(&self, layers: usize) -> Self {
        if self.per_layer {
            return self.clone();
        }
        let l = layers as f64;
        ActivationBreakdown {
            subseq_id: self.subseq_id,
            resident_kv_bytes: self.resident_kv_bytes / l,
            offloadable_bytes: self.offloadable_bytes / l,
            transient_bytes: self.transient_bytes / l,
            per_layer: true,
        }
    }

    pub(crate) fn scaled(&self, factor: f64) -> Self {
        ActivationBreakdown {
            subseq_id: self.subseq_id,
            resident_kv_bytes: self.resident_kv_bytes * factor,
            offloadable_bytes: self.offloadable_bytes * factor,
            transient_bytes: self.transient_bytes * factor,
            per_layer: self.per_layer,
        }
    }
}

/// Breakdown of chunk `subseq_id`, totaled over all layers.
pub fn activation_breakdown(
    model: &ModelSpec,
    partition: &SequencePartition,
    subseq_id: usize,
) -> Result<ActivationBreakdown> {
    activation_breakdown_with(model, partition, subseq_id, false)
}

/// As [`activation_breakdown`]; with `recompute` only the layer inputs are
/// kept for backward, so the offloadable volume uses `checkpoint_coeff`.
pub fn activation_breakdown_with(
    model: &ModelSpec,
    partition: &SequencePartition,
    subseq_id: usize,
    recompute: bool,
) -> Result<ActivationBreakdown> {
    let len = *partition.lengths().get(subseq_id).ok_or_else(|| {
        Error::domain(
            "subsequence id",
            format!("{subseq_id} is out of range for {} chunks", partition.len()),
        )
    })?;
    let unit = model.hidden_bytes_per_token() * len as f64 * model.layers as f64;
    let offload_coeff = if recompute {
        model.checkpoint_coeff
    } else {
        model.offload_coeff
    };
    Ok(ActivationBreakdown {
        subseq_id,
        resident_kv_bytes: model.kv_coeff * unit,
        offloadable_bytes: offload_coeff * unit,
        transient_bytes: 0.0,
        per_layer: false,
    })
}

/// Breakdowns of every chunk.
pub fn breakdowns(
    model: &ModelSpec,
    partition: &SequencePartition,
    recompute: bool,
) -> Vec<ActivationBreakdown> {
    (0..partition.len())
        .map(|i| activation_breakdown_with(model, partition, i, recompute).expect("id in range"))
        .collect()
}
