//! Ground truth, precision/recall bookkeeping and work accounting.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use nalgebra::Vector3;

use crate::retrieval::{post_process, RetrievalConfig, RetrievalError, SimilarityMatrix};
use crate::selector::{CandidateArea, LoopPair};

/// True loop pairs derived from ground-truth positions.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthLoops {
    /// Sorted by query; at most one pair per query.
    pub pairs: Vec<(usize, usize)>,
    pub radius: f64,
    pub margin: usize,
}

impl GroundTruthLoops {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn from_pairs(mut pairs: Vec<(usize, usize)>, radius: f64, margin: usize) -> Self {
        pairs.sort_unstable();
        pairs.dedup();
        Self { pairs, radius, margin }
    }
}

/// For every frame, its nearest predecessor at least `margin` frames back,
/// kept when strictly closer than `radius`.
pub fn ground_truth_loops(positions: &[Vector3<f64>], radius: f64, margin: usize) -> GroundTruthLoops {
    let mut pairs = Vec::new();
    for i in margin..positions.len() {
        let mut best: Option<(usize, f64)> = None;
        for j in 0..=i - margin {
            let d = (positions[i] - positions[j]).norm();
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((j, d));
            }
        }
        if let Some((j, d)) = best {
            if d < radius {
                pairs.push((i, j));
            }
        }
    }
    GroundTruthLoops { pairs, radius, margin }
}

/// Median distance between consecutive positions.
pub fn median_spacing(positions: &[Vector3<f64>]) -> f64 {
    let mut steps: Vec<f64> = positions.windows(2).map(|w| (w[1] - w[0]).norm()).collect();
    if steps.is_empty() {
        return 0.0;
    }
    steps.sort_unstable_by(f64::total_cmp);
    let n = steps.len();
    if n % 2 == 1 {
        steps[n / 2]
    } else {
        0.5 * (steps[n / 2 - 1] + steps[n / 2])
    }
}

/// Default truth radius: three median frame spacings.
pub fn default_truth_radius(positions: &[Vector3<f64>]) -> f64 {
    3.0 * median_spacing(positions)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MatchCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl MatchCounts {
    /// Precision, defined as 1 when nothing was detected.
    pub fn precision(&self) -> f64 {
        if self.tp + self.fp == 0 {
            1.0
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        }
    }

    /// Recall, defined as 1 when there is nothing to find.
    pub fn recall(&self) -> f64 {
        if self.tp + self.fn_ == 0 {
            1.0
        } else {
            self.tp as f64 / (self.tp + self.fn_) as f64
        }
    }
}

/// Greedy matching in detection order. Each detection takes the closest
/// unconsumed truth pair within `tolerance` frames on both axes (Chebyshev
/// distance, then smaller query, then smaller match).
pub fn match_with_truth(detected: &[LoopPair], truth: &GroundTruthLoops, tolerance: usize) -> MatchCounts {
    let mut open: BTreeMap<(usize, usize), ()> = truth.pairs.iter().map(|&p| (p, ())).collect();
    let mut tp = 0;
    for d in detected {
        let lo = (d.query.saturating_sub(tolerance), 0);
        let hi = (d.query + tolerance, usize::MAX);
        let best = open
            .range(lo..=hi)
            .map(|(&(ti, tj), _)| (ti, tj))
            .filter(|&(_, tj)| tj.abs_diff(d.matched) <= tolerance)
            .min_by_key(|&(ti, tj)| (ti.abs_diff(d.query).max(tj.abs_diff(d.matched)), ti, tj));
        if let Some(key) = best {
            open.remove(&key);
            tp += 1;
        }
    }
    MatchCounts {
        tp,
        fp: detected.len() - tp,
        fn_: truth.len() - tp,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
    #[cfg_attr(feature = "serde", serde(rename = "fn"))]
    pub fn_: usize,
}

impl PrPoint {
    pub fn new(threshold: f64, c: MatchCounts) -> Self {
        Self {
            threshold,
            precision: c.precision(),
            recall: c.recall(),
            tp: c.tp,
            fp: c.fp,
            fn_: c.fn_,
        }
    }
}

/// Run `detect` once per threshold (ascending) and score each result.
pub fn pr_sweep<E>(
    thresholds: &[f64],
    truth: &GroundTruthLoops,
    tolerance: usize,
    mut detect: impl FnMut(f64) -> Result<Vec<LoopPair>, E>,
) -> Result<Vec<PrPoint>, E> {
    let mut sorted = thresholds.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    sorted
        .into_iter()
        .map(|t| Ok(PrPoint::new(t, match_with_truth(&detect(t)?, truth, tolerance))))
        .collect()
}

/// Sweep the similarity threshold over a matrix built at or below the
/// smallest threshold, so descriptors are compared only once.
pub fn pr_sweep_matrix(
    m: &SimilarityMatrix,
    thresholds: &[f64],
    cfg: &RetrievalConfig,
    truth: &GroundTruthLoops,
    tolerance: usize,
) -> Result<Vec<PrPoint>, RetrievalError> {
    pr_sweep(thresholds, truth, tolerance, |t| post_process(&m.filtered(t), cfg))
}

/// `count` thresholds evenly spaced over `[lo, hi]`.
pub fn threshold_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => alloc::vec![lo],
        _ => (0..count)
            .map(|k| lo + (hi - lo) * k as f64 / (count - 1) as f64)
            .collect(),
    }
}

/// Best precision reached at recall `r` or above.
pub fn interpolated_precision(curve: &[PrPoint], r: f64) -> Option<f64> {
    curve
        .iter()
        .filter(|p| p.recall >= r)
        .map(|p| p.precision)
        .max_by(f64::total_cmp)
}

/// Highest recall reached with precision exactly 1.
pub fn max_recall_at_full_precision(curve: &[PrPoint]) -> f64 {
    curve
        .iter()
        .filter(|p| p.precision == 1.0)
        .map(|p| p.recall)
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveComparison {
    /// Recall levels reachable by both curves.
    pub recall_levels: Vec<f64>,
    /// Interpolated precision of (first, second) at each level.
    pub precision: Vec<(f64, f64)>,
}

impl CurveComparison {
    pub fn never_worse(&self) -> bool {
        self.precision.iter().all(|&(a, b)| a >= b)
    }

    pub fn strictly_better_somewhere(&self) -> bool {
        self.precision.iter().any(|&(a, b)| a > b)
    }
}

/// Compare two PR curves at every positive recall value either curve
/// attains, up to the smaller of the two maximum recalls.
pub fn compare_curves(first: &[PrPoint], second: &[PrPoint]) -> CurveComparison {
    let top = |c: &[PrPoint]| c.iter().map(|p| p.recall).fold(0.0, f64::max);
    let limit = top(first).min(top(second));
    let mut levels: Vec<f64> = first
        .iter()
        .chain(second)
        .map(|p| p.recall)
        .filter(|&r| r > 0.0 && r <= limit)
        .collect();
    levels.sort_unstable_by(f64::total_cmp);
    levels.dedup();
    let precision = levels
        .iter()
        .map(|&r| {
            (
                interpolated_precision(first, r).unwrap_or(0.0),
                interpolated_precision(second, r).unwrap_or(0.0),
            )
        })
        .collect();
    CurveComparison {
        recall_levels: levels,
        precision,
    }
}

/// Cells in the unconstrained search triangle `j + margin <= i < frame_count`.
pub fn triangle_count(frame_count: usize, margin: usize) -> u64 {
    if frame_count <= margin {
        return 0;
    }
    let rows = (frame_count - margin) as u64;
    rows * (rows + 1) / 2
}

/// Baseline comparisons divided by constrained comparisons.
pub fn comparison_reduction_ratio(constrained: u64, baseline: u64) -> f64 {
    if constrained == 0 {
        f64::INFINITY
    } else {
        baseline as f64 / constrained as f64
    }
}

/// Fraction of truth pairs inside at least one area (1 for empty truth).
pub fn area_recall(truth: &GroundTruthLoops, areas: &[CandidateArea]) -> f64 {
    if truth.is_empty() {
        return 1.0;
    }
    let inside = truth
        .pairs
        .iter()
        .filter(|&&(i, j)| areas.iter().any(|a| a.contains(i, j)))
        .count();
    inside as f64 / truth.len() as f64
}
