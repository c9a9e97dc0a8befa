//! Descriptor retrieval restricted to a search region, followed by sequence
//! matching and non-maximum suppression.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::dird::{descriptor_distance, similarity, DirdConfig, DirdDescriptor, DirdError};
use crate::selector::{CandidateArea, LoopPair};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RetrievalError {
    #[error("no descriptor for frame {frame}")]
    MissingDescriptor { frame: usize },
    #[error("sequence length must be odd and positive (got {0})")]
    EvenSequence(usize),
    #[error("similarity threshold must lie in (0, 1) (got {0})")]
    BadThreshold(f64),
    #[error(transparent)]
    Descriptor(#[from] DirdError),
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct RetrievalConfig {
    pub similarity_threshold: f64,
    /// Odd number of frames along the diagonal summed by sequence matching.
    pub sequence_length: usize,
    pub sequence_sum_threshold: f64,
    pub nms_window: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            similarity_threshold: 0.6,
            sequence_length: 5,
            sequence_sum_threshold: 0.7 * 5.0,
            nms_window: 10,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        if !(self.similarity_threshold > 0.0 && self.similarity_threshold < 1.0) {
            return Err(RetrievalError::BadThreshold(self.similarity_threshold));
        }
        if self.sequence_length.is_multiple_of(2) {
            return Err(RetrievalError::EvenSequence(self.sequence_length));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RegionShape {
    Areas(Vec<CandidateArea>),
    /// Every cell with `matched + margin <= query`.
    Triangle,
}

/// The set of (query, matched) cells where descriptors are compared.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchRegion {
    pub shape: RegionShape,
    pub frame_count: usize,
    pub margin: usize,
}

impl SearchRegion {
    pub fn areas(areas: Vec<CandidateArea>, frame_count: usize, margin: usize) -> Self {
        Self {
            shape: RegionShape::Areas(areas),
            frame_count,
            margin,
        }
    }

    pub fn triangle(frame_count: usize, margin: usize) -> Self {
        Self {
            shape: RegionShape::Triangle,
            frame_count,
            margin,
        }
    }

    /// Disjoint, sorted, inclusive match ranges searched for `query`.
    pub fn row_ranges(&self, query: usize) -> Vec<(usize, usize)> {
        if query >= self.frame_count || query < self.margin {
            return Vec::new();
        }
        let limit = query - self.margin;
        match &self.shape {
            RegionShape::Triangle => alloc::vec![(0, limit)],
            RegionShape::Areas(areas) => {
                let mut ranges: Vec<(usize, usize)> = areas
                    .iter()
                    .filter(|a| (a.query_lo..=a.query_hi).contains(&query) && a.match_lo <= limit)
                    .map(|a| (a.match_lo, a.match_hi.min(limit)))
                    .collect();
                ranges.sort_unstable();
                let mut merged: Vec<(usize, usize)> = Vec::with_capacity(ranges.len());
                for (lo, hi) in ranges {
                    match merged.last_mut() {
                        Some(last) if lo <= last.1 + 1 => last.1 = last.1.max(hi),
                        _ => merged.push((lo, hi)),
                    }
                }
                merged
            }
        }
    }

    pub fn contains(&self, query: usize, matched: usize) -> bool {
        self.row_ranges(query).iter().any(|&(lo, hi)| (lo..=hi).contains(&matched))
    }

    /// Number of distinct cells, i.e. descriptor comparisons.
    pub fn cell_count(&self) -> u64 {
        (0..self.frame_count)
            .map(|i| self.row_ranges(i).iter().map(|(lo, hi)| (hi - lo + 1) as u64).sum::<u64>())
            .sum()
    }

    /// Sorted frames whose descriptors are needed.
    pub fn frames(&self) -> Vec<usize> {
        let mut needed = alloc::vec![false; self.frame_count];
        for i in 0..self.frame_count {
            let ranges = self.row_ranges(i);
            if ranges.is_empty() {
                continue;
            }
            needed[i] = true;
            for (lo, hi) in ranges {
                needed[lo..=hi].iter_mut().for_each(|n| *n = true);
            }
        }
        needed
            .iter()
            .enumerate()
            .filter_map(|(k, &n)| n.then_some(k))
            .collect()
    }
}

/// Descriptor lookup by frame index.
pub trait DescriptorSource {
    fn descriptor(&self, frame: usize) -> Option<&DirdDescriptor>;
}

impl DescriptorSource for BTreeMap<usize, DirdDescriptor> {
    fn descriptor(&self, frame: usize) -> Option<&DirdDescriptor> {
        self.get(&frame)
    }
}

impl DescriptorSource for [DirdDescriptor] {
    fn descriptor(&self, frame: usize) -> Option<&DirdDescriptor> {
        self.get(frame)
    }
}

impl DescriptorSource for Vec<DirdDescriptor> {
    fn descriptor(&self, frame: usize) -> Option<&DirdDescriptor> {
        self.get(frame)
    }
}

/// Sparse (query, matched) → similarity map.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimilarityMatrix {
    pub entries: BTreeMap<(usize, usize), f64>,
    pub frame_count: usize,
    /// Descriptor comparisons performed to build the matrix.
    pub comparisons: u64,
}

impl SimilarityMatrix {
    pub fn new(frame_count: usize) -> Self {
        Self {
            entries: BTreeMap::new(),
            frame_count,
            comparisons: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, query: usize, matched: usize) -> Option<f64> {
        self.entries.get(&(query, matched)).copied()
    }

    /// Entries at or above `threshold`; the comparison count is kept.
    pub fn filtered(&self, threshold: f64) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .filter(|(_, &s)| s >= threshold)
                .map(|(&k, &s)| (k, s))
                .collect(),
            frame_count: self.frame_count,
            comparisons: self.comparisons,
        }
    }
}

/// Similarities of one query row, keeping those at or above `threshold`.
/// Returns the kept cells and the number of comparisons made.
pub fn score_row<S: DescriptorSource + ?Sized>(
    query: usize,
    ranges: &[(usize, usize)],
    descriptors: &S,
    dird: &DirdConfig,
    threshold: f64,
) -> Result<(Vec<(usize, f64)>, u64), RetrievalError> {
    let block = dird.filter_count();
    let q = descriptors
        .descriptor(query)
        .ok_or(RetrievalError::MissingDescriptor { frame: query })?;
    let mut kept = Vec::new();
    let mut count = 0;
    for &(lo, hi) in ranges {
        for j in lo..=hi {
            let m = descriptors.descriptor(j).ok_or(RetrievalError::MissingDescriptor { frame: j })?;
            let s = similarity(descriptor_distance(q, m, block)?, dird);
            count += 1;
            if s >= threshold {
                kept.push((j, s));
            }
        }
    }
    Ok((kept, count))
}

/// Compare descriptors over every cell of `region` exactly once.
pub fn build_similarity<S: DescriptorSource + ?Sized>(
    region: &SearchRegion,
    descriptors: &S,
    dird: &DirdConfig,
    cfg: &RetrievalConfig,
) -> Result<SimilarityMatrix, RetrievalError> {
    let mut m = SimilarityMatrix::new(region.frame_count);
    for i in 0..region.frame_count {
        let ranges = region.row_ranges(i);
        if ranges.is_empty() {
            continue;
        }
        let (kept, count) = score_row(i, &ranges, descriptors, dird, cfg.similarity_threshold)?;
        m.comparisons += count;
        m.entries.extend(kept.into_iter().map(|(j, s)| ((i, j), s)));
    }
    Ok(m)
}

/// Keep entries whose diagonal window sum reaches the sequence threshold.
///
/// Absent cells count as zero. Near the ends of the sequence the window is
/// truncated and the threshold scaled by the fraction of the window that
/// exists; surviving entries carry their window sum rescaled to full length.
pub fn sequence_match(m: &SimilarityMatrix, cfg: &RetrievalConfig) -> Result<SimilarityMatrix, RetrievalError> {
    let len = cfg.sequence_length;
    if len.is_multiple_of(2) {
        return Err(RetrievalError::EvenSequence(len));
    }
    let half = (len / 2) as i64;
    let n = m.frame_count as i64;
    let mut out = SimilarityMatrix::new(m.frame_count);
    out.comparisons = m.comparisons;
    for &(i, j) in m.entries.keys() {
        let mut sum = 0.0;
        let mut available = 0usize;
        for t in -half..=half {
            let (qi, qj) = (i as i64 + t, j as i64 + t);
            if qi < 0 || qj < 0 || qi >= n || qj >= n {
                continue;
            }
            available += 1;
            sum += m.get(qi as usize, qj as usize).unwrap_or(0.0);
        }
        let (score, threshold) = if available == len {
            (sum, cfg.sequence_sum_threshold)
        } else {
            let scale = len as f64 / available as f64;
            (sum * scale, cfg.sequence_sum_threshold * available as f64 / len as f64)
        };
        if sum >= threshold {
            out.entries.insert((i, j), score);
        }
    }
    Ok(out)
}

/// `a` beats `b`: higher score, then smaller matched index, then smaller query.
fn beats(a: (usize, usize, f64), b: (usize, usize, f64)) -> bool {
    if a.2 != b.2 {
        return a.2 > b.2;
    }
    (a.1, a.0) < (b.1, b.0)
}

/// Per query row, keep the best cell if it beats every cell within the
/// `nms_window × nms_window` neighbourhood that lies off its own diagonal.
///
/// Cells on the same diagonal continue the same sequence hypothesis and are
/// not competitors.
pub fn non_max_suppression(m: &SimilarityMatrix, cfg: &RetrievalConfig) -> Vec<LoopPair> {
    let half = cfg.nms_window / 2;
    let mut rows: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
    for (&(i, j), &s) in &m.entries {
        match rows.get(&i) {
            Some(&(bj, bs)) if !beats((i, j, s), (i, bj, bs)) => {}
            _ => {
                rows.insert(i, (j, s));
            }
        }
    }
    let mut out = Vec::new();
    for (&i, &(j, s)) in &rows {
        let me = (i, j, s);
        let mut keep = true;
        'scan: for qi in i.saturating_sub(half)..=i + half {
            let lo = (qi, j.saturating_sub(half));
            let hi = (qi, j + half);
            for (&(ci, cj), &cs) in m.entries.range(lo..=hi) {
                if ci + j != cj + i && !beats(me, (ci, cj, cs)) {
                    keep = false;
                    break 'scan;
                }
            }
        }
        if keep {
            out.push(LoopPair::new(i, j, s));
        }
    }
    out
}

/// Monotonic millisecond clock used to time pipeline stages.
pub trait Clock {
    fn now_ms(&self) -> f64;
}

/// Clock that always reads zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct NullClock;

impl Clock for NullClock {
    fn now_ms(&self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StageTimes {
    pub similarity_ms: f64,
    pub sequence_ms: f64,
    pub nms_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub loops: Vec<LoopPair>,
    /// Thresholded similarities before sequence matching.
    pub similarity: SimilarityMatrix,
    pub comparisons: u64,
    pub times: StageTimes,
}

/// Sequence matching followed by non-maximum suppression.
pub fn post_process(m: &SimilarityMatrix, cfg: &RetrievalConfig) -> Result<Vec<LoopPair>, RetrievalError> {
    Ok(non_max_suppression(&sequence_match(m, cfg)?, cfg))
}

/// Full retrieval over `region`.
pub fn detect_loops<S: DescriptorSource + ?Sized>(
    region: &SearchRegion,
    descriptors: &S,
    dird: &DirdConfig,
    cfg: &RetrievalConfig,
    clock: &dyn Clock,
) -> Result<Detection, RetrievalError> {
    cfg.validate()?;
    let t0 = clock.now_ms();
    let similarity = build_similarity(region, descriptors, dird, cfg)?;
    let t1 = clock.now_ms();
    finish_detection(similarity, cfg, clock, t1 - t0)
}

/// Post-process an already built matrix and assemble the result.
pub fn finish_detection(
    similarity: SimilarityMatrix,
    cfg: &RetrievalConfig,
    clock: &dyn Clock,
    similarity_ms: f64,
) -> Result<Detection, RetrievalError> {
    let t1 = clock.now_ms();
    let sequenced = sequence_match(&similarity, cfg)?;
    let t2 = clock.now_ms();
    let loops = non_max_suppression(&sequenced, cfg);
    let t3 = clock.now_ms();
    Ok(Detection {
        loops,
        comparisons: similarity.comparisons,
        similarity,
        times: StageTimes {
            similarity_ms,
            sequence_ms: t2 - t1,
            nms_ms: t3 - t2,
        },
    })
}
