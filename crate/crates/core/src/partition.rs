//! Sequence partitioning.
//!
//! Under causal attention a token's cost grows with its position, so equal
//! chunk lengths give unequal chunk FLOPs. [`partition_flops_balanced`]
//! minimizes the most expensive chunk instead. Because every token has a
//! positive cost, a chunk's cost is a sum of positive per-token weights and
//! the problem is classic min-max linear partitioning:
//!
//! * for a threshold `T`, filling chunks greedily from the front (each as long
//!   as possible without exceeding `T`) decides feasibility exactly;
//! * the optimum `T*` is the smallest feasible threshold, found by bisecting
//!   over the bit patterns of positive `f64`s, so it is exact.
//!
//! The greedy fill at `T*` produces the lexicographically greatest optimal
//! length vector, which is also non-increasing when attention cost is present.
//! [`oracle_min_max_flops`] solves the same problem by dynamic programming and
//! is used to cross-check.

use serde::{Deserialize, Serialize};

use crate::cost_model::{forward_flops, ModelSpec};
use crate::error::{Error, Result};

/// Ordered chunk lengths with their prefix offsets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequencePartition {
    lengths: Vec<usize>,
    prefixes: Vec<usize>,
    total: usize,
}

impl SequencePartition {
    pub fn from_lengths(lengths: Vec<usize>) -> Result<Self> {
        if lengths.is_empty() {
            return Err(Error::domain("partition", "at least one chunk is required"));
        }
        if let Some(i) = lengths.iter().position(|&l| l == 0) {
            return Err(Error::domain(
                "partition",
                format!("chunk {i} has length 0"),
            ));
        }
        let mut prefixes = Vec::with_capacity(lengths.len());
        let mut acc = 0usize;
        for &l in &lengths {
            prefixes.push(acc);
            acc += l;
        }
        Ok(SequencePartition {
            lengths,
            prefixes,
            total: acc,
        })
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    pub fn prefixes(&self) -> &[usize] {
        &self.prefixes
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    /// `(length, prefix)` pairs in chunk order.
    pub fn chunks(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.lengths
            .iter()
            .copied()
            .zip(self.prefixes.iter().copied())
    }

    /// Forward FLOPs of every chunk.
    pub fn chunk_flops(&self, model: &ModelSpec) -> Result<Vec<f64>> {
        self.chunks()
            .map(|(len, prefix)| forward_flops(model, len, prefix))
            .collect()
    }

    /// The min-max objective: forward FLOPs of the most expensive chunk.
    pub fn max_chunk_flops(&self, model: &ModelSpec) -> Result<f64> {
        Ok(self
            .chunk_flops(model)?
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max))
    }
}

fn check_counts(seq_len: usize, chunks: usize) -> Result<()> {
    if chunks == 0 {
        return Err(Error::domain("chunk count", "N must be >= 1"));
    }
    if chunks > seq_len {
        return Err(Error::Infeasible(format!(
            "cannot split {seq_len} tokens into {chunks} non-empty chunks"
        )));
    }
    Ok(())
}

/// Length-based baseline: lengths differ by at most one, remainder first.
pub fn partition_equal(seq_len: usize, chunks: usize) -> Result<SequencePartition> {
    check_counts(seq_len, chunks)?;
    let base = seq_len / chunks;
    let extra = seq_len % chunks;
    SequencePartition::from_lengths((0..chunks).map(|i| base + usize::from(i < extra)).collect())
}

/// Cost of blocks `[start, end)` where a block is `quantum` tokens.
struct BlockCost<'a> {
    model: &'a ModelSpec,
    quantum: usize,
}

impl BlockCost<'_> {
    fn cost(&self, start: usize, end: usize) -> f64 {
        debug_assert!(end > start);
        forward_flops(
            self.model,
            (end - start) * self.quantum,
            start * self.quantum,
        )
        .expect("non-empty range")
    }

    /// Greedy front-to-back fill under `threshold`, leaving at least one block
    /// for every later chunk. `None` when the threshold is infeasible.
    fn greedy(&self, blocks: usize, chunks: usize, threshold: f64) -> Option<Vec<usize>> {
        let mut lengths = Vec::with_capacity(chunks);
        let mut start = 0usize;
        for k in 0..chunks {
            let rest = chunks - k - 1;
            if rest == 0 {
                if self.cost(start, blocks) > threshold {
                    return None;
                }
                lengths.push(blocks - start);
                break;
            }
            let cap = blocks - start - rest;
            if self.cost(start, start + 1) > threshold {
                return None;
            }
            // largest len in [1, cap] with cost <= threshold
            let (mut lo, mut hi) = (1usize, cap);
            while lo < hi {
                let mid = lo + (hi - lo).div_ceil(2);
                if self.cost(start, start + mid) <= threshold {
                    lo = mid;
                } else {
                    hi = mid - 1;
                }
            }
            lengths.push(lo);
            start += lo;
        }
        Some(lengths)
    }
}

/// FLOPs-balanced partition with one-token granularity.
pub fn partition_flops_balanced(
    model: &ModelSpec,
    seq_len: usize,
    chunks: usize,
) -> Result<SequencePartition> {
    partition_flops_balanced_quantized(model, seq_len, chunks, 1)
}

/// FLOPs-balanced partition whose lengths are multiples of `quantum`.
pub fn partition_flops_balanced_quantized(
    model: &ModelSpec,
    seq_len: usize,
    chunks: usize,
    quantum: usize,
) -> Result<SequencePartition> {
    model.validate()?;
    if quantum == 0 {
        return Err(Error::domain("quantum", "quantum must be >= 1"));
    }
    if seq_len % quantum != 0 {
        return Err(Error::domain(
            "quantum",
            format!("sequence length {seq_len} is not a multiple of quantum {quantum}"),
        ));
    }
    let blocks = seq_len / quantum;
    check_counts(blocks, chunks)?;

    let costs = BlockCost { model, quantum };
    let total = costs.cost(0, blocks);
    // Positive finite f64s order like their bit patterns; 0.0 is never
    // feasible because every block costs something.
    let mut lo = 0.0f64.to_bits();
    let mut hi = total.to_bits();
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if costs.greedy(blocks, chunks, f64::from_bits(mid)).is_some() {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let lengths = costs
        .greedy(blocks, chunks, f64::from_bits(hi))
        .ok_or_else(|| Error::Internal("balanced threshold lost feasibility".into()))?;
    SequencePartition::from_lengths(lengths.into_iter().map(|l| l * quantum).collect())
}

pub const ORACLE_MAX_SEQ_LEN: usize = 4096;
pub const ORACLE_MAX_CHUNKS: usize = 8;

/// Exact min-max partition by dynamic programming over split points.
///
/// Among optimal partitions the lexicographically greatest length vector is
/// returned. Refuses instances above `S = 4096` or `N = 8`.
pub fn oracle_min_max_flops(
    model: &ModelSpec,
    seq_len: usize,
    chunks: usize,
) -> Result<SequencePartition> {
    if seq_len > ORACLE_MAX_SEQ_LEN || chunks > ORACLE_MAX_CHUNKS {
        return Err(Error::OracleBound {
            seq_len,
            max_seq_len: ORACLE_MAX_SEQ_LEN,
            chunks,
            max_chunks: ORACLE_MAX_CHUNKS,
        });
    }
    model.validate()?;
    check_counts(seq_len, chunks)?;
    let cost = |a: usize, b: usize| forward_flops(model, b - a, a).expect("non-empty range");

    // best[k][start]: optimal max cost of splitting [start, S) into k chunks.
    let n = seq_len;
    let mut best = vec![vec![f64::INFINITY; n + 1]; chunks + 1];
    for start in 0..n {
        best[1][start] = cost(start, n);
    }
    for k in 2..=chunks {
        for start in 0..=(n - k) {
            let mut v = f64::INFINITY;
            for end in (start + 1)..=(n - k + 1) {
                v = v.min(cost(start, end).max(best[k - 1][end]));
            }
            best[k][start] = v;
        }
    }
    let optimum = best[chunks][0];

    let mut lengths = Vec::with_capacity(chunks);
    let mut start = 0;
    for k in (1..=chunks).rev() {
        if k == 1 {
            lengths.push(n - start);
            break;
        }
        let end = ((start + 1)..=(n - k + 1))
            .rev()
            .find(|&e| cost(start, e) <= optimum && best[k - 1][e] <= optimum)
            .ok_or_else(|| Error::Internal("oracle reconstruction failed".into()))?;
        lengths.push(end - start);
        start = end;
    }
    SequencePartition::from_lengths(lengths)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn attention_only() -> ModelSpec {
        ModelSpec {
            c_lin: 0.0,
            attn_coeff: 1.0,
            ..ModelSpec::new(1, 1, 1)
        }
    }

    fn linear_only() -> ModelSpec {
        ModelSpec {
            c_lin: 24.0,
            attn_coeff: 0.0,
            ..ModelSpec::new(1, 8, 1)
        }
    }

    #[test]
    fn partition_invariants() {
        let p = SequencePartition::from_lengths(vec![3, 1, 4]).unwrap();
        assert_eq!(p.prefixes(), &[0, 3, 4]);
        assert_eq!(p.total(), 8);
        assert!(SequencePartition::from_lengths(vec![]).is_err());
        assert!(SequencePartition::from_lengths(vec![2, 0]).is_err());
    }

    #[test]
    fn equal_partition_examples() {
        assert_eq!(partition_equal(131072, 8).unwrap().lengths(), &[16384; 8]);
        assert_eq!(partition_equal(10, 3).unwrap().lengths(), &[4, 3, 3]);
        assert_eq!(partition_equal(5, 5).unwrap().lengths(), &[1; 5]);
        assert!(matches!(partition_equal(3, 4), Err(Error::Infeasible(_))));
    }

    #[test]
    fn balanced_examples() {
        let att = attention_only();
        let p = partition_flops_balanced(&att, 8, 2).unwrap();
        assert_eq!(p.lengths(), &[6, 2]);
        assert_eq!(p.max_chunk_flops(&att).unwrap(), 21.0);

        let lin = linear_only();
        assert_eq!(
            partition_flops_balanced(&lin, 128, 4).unwrap().lengths(),
            &[32; 4]
        );
        assert_eq!(
            partition_flops_balanced(&att, 77, 1).unwrap().lengths(),
            &[77]
        );
        assert!(matches!(
            partition_flops_balanced(&att, 3, 4),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn oracle_examples() {
        let att = attention_only();
        let p = oracle_min_max_flops(&att, 8, 2).unwrap();
        assert_eq!(p.max_chunk_flops(&att).unwrap(), 21.0);
        assert_eq!(p.lengths(), &[6, 2]);

        let p = oracle_min_max_flops(&att, 4, 2).unwrap();
        assert_eq!(p.lengths(), &[3, 1]);
        assert_eq!(p.max_chunk_flops(&att).unwrap(), 6.0);

        let m = ModelSpec::new(2, 16, 2);
        let p = oracle_min_max_flops(&m, 6, 6).unwrap();
        assert_eq!(p.lengths(), &[1; 6]);
        assert_eq!(
            p.max_chunk_flops(&m).unwrap(),
            forward_flops(&m, 1, 5).unwrap()
        );
    }

    #[test]
    fn oracle_refuses_large_instances() {
        let att = attention_only();
        assert!(matches!(
            oracle_min_max_flops(&att, 5000, 2),
            Err(Error::OracleBound { .. })
        ));
        assert!(matches!(
            oracle_min_max_flops(&att, 100, 9),
            Err(Error::OracleBound { .. })
        ));
    }

    #[test]
    fn quantized_lengths_are_multiples() {
        let m = ModelSpec::new(4, 256, 4);
        let p = partition_flops_balanced_quantized(&m, 4096, 5, 64).unwrap();
        assert!(p.lengths().iter().all(|l| l % 64 == 0));
        assert_eq!(p.total(), 4096);
        assert!(partition_flops_balanced_quantized(&m, 4000, 5, 64).is_err());
    }

    #[test]
    fn balanced_lengths_non_increasing() {
        let m = ModelSpec::new(2, 64, 2);
        for n in 1..12 {
            let p = partition_flops_balanced(&m, 1000, n).unwrap();
            assert!(p.lengths().windows(2).all(|w| w[0] >= w[1]), "{p:?}");
        }
    }

    #[test]
    fn large_partition_is_fast_and_valid() {
        let m = ModelSpec::gpt_7b();
        let p = partition_flops_balanced(&m, 4 << 20, 160).unwrap();
        assert_eq!(p.total(), 4 << 20);
        assert_eq!(p.len(), 160);
    }
}
