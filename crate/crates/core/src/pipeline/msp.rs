use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::Phase;
use crate::error::{Error, Result};

/// Phase membership of one stage. All sets are half-open index ranges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StagePhases {
    pub stage: usize,
    pub left_ids: Range<usize>,
    pub steady_ids: Range<usize>,
    pub right_ids: Range<usize>,
    /// Stages that share the left-phase chunks (downstream, idle at start).
    pub left_sp_range: Range<usize>,
    /// Stages that share the right-phase chunks (upstream, idle at the end).
    pub right_sp_range: Range<usize>,
}

impl StagePhases {
    pub fn phase_of(&self, chunk: usize) -> Phase {
        if self.left_ids.contains(&chunk) {
            Phase::LeftSp
        } else if self.right_ids.contains(&chunk) {
            Phase::RightSp
        } else {
            Phase::Steady
        }
    }

    /// Stages that compute `chunk` of this stage together.
    pub fn sp_range(&self, chunk: usize) -> Range<usize> {
        match self.phase_of(chunk) {
            Phase::LeftSp => self.left_sp_range.clone(),
            Phase::RightSp => self.right_sp_range.clone(),
            _ => self.stage..self.stage + 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MspPhasePlan {
    pub pp: usize,
    pub n: usize,
    pub stages: Vec<StagePhases>,
}

/// Left / steady / right chunk sets and SP ranges for every stage.
///
/// Stage `i` splits its first `PP-1-i` chunks across stages `i..PP` and its
/// last `i` chunks across stages `0..=i`.
pub fn msp_phase_plan(pp: usize, n: usize) -> Result<MspPhasePlan> {
    if pp == 0 {
        return Err(Error::domain("pipeline shape", "PP must be >= 1"));
    }
    if n < pp {
        return Err(Error::Infeasible(format!(
            "MSP needs N >= PP (N={n}, PP={pp}); the steady phase would be negative"
        )));
    }
    let stages = (0..pp)
        .map(|i| {
            let left_ids = 0..pp - 1 - i;
            let steady_ids = pp - 1 - i..n - i;
            let right_ids = n - i..n;
            let left_sp_range = if left_ids.is_empty() { 0..0 } else { i..pp };
            let right_sp_range = if right_ids.is_empty() { 0..0 } else { 0..i + 1 };
            StagePhases {
                stage: i,
                left_ids,
                steady_ids,
                right_ids,
                left_sp_range,
                right_sp_range,
            }
        })
        .collect();
    Ok(MspPhasePlan { pp, n, stages })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(r: &Range<usize>) -> Vec<usize> {
        r.clone().collect()
    }

    #[test]
    fn four_stages_eight_chunks() {
        let plan = msp_phase_plan(4, 8).unwrap();
        let s1 = &plan.stages[1];
        assert_eq!(ids(&s1.left_ids), vec![0, 1]);
        assert_eq!(ids(&s1.steady_ids), vec![2, 3, 4, 5, 6]);
        assert_eq!(ids(&s1.right_ids), vec![7]);
        assert_eq!(ids(&s1.left_sp_range), vec![1, 2, 3]);
        assert_eq!(ids(&s1.right_sp_range), vec![0, 1]);

        let s3 = &plan.stages[3];
        assert!(s3.left_ids.is_empty());
        assert_eq!(ids(&s3.steady_ids), vec![0, 1, 2, 3, 4]);
        assert_eq!(ids(&s3.right_ids), vec![5, 6, 7]);
        assert!(s3.left_sp_range.is_empty());
        assert_eq!(ids(&s3.right_sp_range), vec![0, 1, 2, 3]);
    }

    #[test]
    fn single_stage_is_all_steady() {
        let plan = msp_phase_plan(1, 4).unwrap();
        let s = &plan.stages[0];
        assert!(s.left_ids.is_empty() && s.right_ids.is_empty());
        assert_eq!(ids(&s.steady_ids), vec![0, 1, 2, 3]);
        assert_eq!(s.sp_range(2), 0..1);
    }

    #[test]
    fn too_few_chunks() {
        assert!(matches!(msp_phase_plan(4, 3), Err(Error::Infeasible(_))));
    }

    #[test]
    fn phases_partition_ids() {
        for pp in 1..=8 {
            for n in pp..=64 {
                let plan = msp_phase_plan(pp, n).unwrap();
                for s in &plan.stages {
                    assert_eq!(s.left_ids.end, s.steady_ids.start);
                    assert_eq!(s.steady_ids.end, s.right_ids.start);
                    assert_eq!(s.left_ids.start, 0);
                    assert_eq!(s.right_ids.end, n);
                }
                assert!(plan.stages[pp - 1].left_ids.is_empty());
                assert!(plan.stages[0].right_ids.is_empty());
            }
        }
    }
}
