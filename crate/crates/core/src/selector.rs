//! Pose-constrained gating and candidate-area construction.
//!
//! Two places are compared with a covariance-corrected distance
//!
//! ```text
//! d(i, j) = sqrt(Δpᵀ (I + P_i + P_j)⁻¹ Δp),   Δp = p_i − p_j
//! ```
//!
//! which reduces to the Euclidean distance when both position covariances
//! vanish and shrinks as they grow. A frame is a preliminary loop with its
//! nearest sufficiently old predecessor when that distance is below the 95%
//! confidence radius of its own position estimate plus a drift allowance β.

use alloc::vec::Vec;

use nalgebra::{Matrix3, UnitQuaternion, Vector3};

use crate::geometry::max_eigenvalue;
use crate::pose_filter::FilterState;

/// Two-sided 95% quantile of the standard normal distribution.
pub const CONFIDENCE_95: f64 = 1.96;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SelectorError {
    #[error("place record for frame {frame} has non-finite entries")]
    NonFinite { frame: usize },
    #[error("beta must be non-negative (got {0})")]
    NegativeBeta(f64),
    #[error("place records must have strictly increasing frame indices (frame {frame})")]
    Unsorted { frame: usize },
}

/// Pose, uncertainty and descriptor handle of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaceRecord {
    pub frame_index: usize,
    pub position: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
    pub position_covariance: Matrix3<f64>,
    /// Carried along for completeness; the gate only uses positions.
    pub rotation_covariance: Matrix3<f64>,
    pub descriptor_ref: Option<usize>,
}

impl PlaceRecord {
    pub fn new(frame_index: usize, position: Vector3<f64>, position_covariance: Matrix3<f64>) -> Self {
        Self {
            frame_index,
            position,
            rotation: UnitQuaternion::identity(),
            position_covariance,
            rotation_covariance: Matrix3::zeros(),
            descriptor_ref: None,
        }
    }

    pub fn from_state(frame_index: usize, state: &FilterState) -> Self {
        Self {
            frame_index,
            position: state.position,
            rotation: state.rotation,
            position_covariance: state.position_covariance(),
            rotation_covariance: state.rotation_covariance(),
            descriptor_ref: Some(frame_index),
        }
    }

    fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite()) && self.position_covariance.iter().all(|v| v.is_finite())
    }
}

/// A (query, matched) frame pair with a score whose meaning depends on the
/// stage: gate distance for preliminary pairs, sequence score for final loops.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopPair {
    pub query: usize,
    pub matched: usize,
    pub score: f64,
}

impl LoopPair {
    pub fn new(query: usize, matched: usize, score: f64) -> Self {
        Self { query, matched, score }
    }
}

/// A preliminary pair together with the threshold it passed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GatedPair {
    pub query: usize,
    pub matched: usize,
    pub distance: f64,
    pub threshold: f64,
}

impl GatedPair {
    pub fn pair(&self) -> LoopPair {
        LoopPair::new(self.query, self.matched, self.distance)
    }
}

/// Rectangle in (query, matched) index space, bounds inclusive. Only cells
/// with `matched + margin <= query` are ever searched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CandidateArea {
    pub query_lo: usize,
    pub query_hi: usize,
    pub match_lo: usize,
    pub match_hi: usize,
}

impl CandidateArea {
    pub fn new(query: (usize, usize), matched: (usize, usize)) -> Self {
        Self {
            query_lo: query.0,
            query_hi: query.1,
            match_lo: matched.0,
            match_hi: matched.1,
        }
    }

    pub fn contains(&self, query: usize, matched: usize) -> bool {
        (self.query_lo..=self.query_hi).contains(&query) && (self.match_lo..=self.match_hi).contains(&matched)
    }

    pub fn overlaps(&self, other: &CandidateArea) -> bool {
        self.query_lo <= other.query_hi
            && other.query_lo <= self.query_hi
            && self.match_lo <= other.match_hi
            && other.match_lo <= self.match_hi
    }

    fn union(&self, other: &CandidateArea) -> CandidateArea {
        CandidateArea {
            query_lo: self.query_lo.min(other.query_lo),
            query_hi: self.query_hi.max(other.query_hi),
            match_lo: self.match_lo.min(other.match_lo),
            match_hi: self.match_hi.max(other.match_hi),
        }
    }
}

/// How the 3×3 position covariance is reduced to a scalar radius.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum RadiusConvention {
    /// `sqrt(λ_max(P))`
    #[default]
    MaxEigenvalue,
    /// `sqrt(trace(P) / 3)`
    MeanTrace,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SelectorConfig {
    /// Drift allowance added to the gate radius, meters.
    pub beta: f64,
    pub margin: usize,
    /// Pairs closer than this in both indices join the same cluster.
    pub gap_tolerance: usize,
    /// Frames added around each cluster rectangle.
    pub enlargement: usize,
    /// Longest query extent of one rectangle; longer clusters are tiled into
    /// consecutive rectangles along their diagonal. Zero disables tiling.
    pub max_query_span: usize,
    pub radius: RadiusConvention,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            margin: crate::DEFAULT_MARGIN,
            gap_tolerance: 5,
            enlargement: 10,
            max_query_span: 50,
            radius: RadiusConvention::MaxEigenvalue,
        }
    }
}

/// Covariance-corrected distance between two places.
pub fn pose_distance(a: &PlaceRecord, b: &PlaceRecord) -> Result<f64, SelectorError> {
    for r in [a, b] {
        if !r.is_finite() {
            return Err(SelectorError::NonFinite { frame: r.frame_index });
        }
    }
    let delta = a.position - b.position;
    // summing the covariances first keeps the result exactly symmetric
    let corrected = Matrix3::identity() + (a.position_covariance + b.position_covariance);
    let sq = match corrected.cholesky() {
        Some(chol) => delta.dot(&chol.solve(&delta)),
        // only reachable for indefinite inputs; fall back to the Euclidean form
        None => delta.norm_squared(),
    };
    Ok(libm::sqrt(sq.max(0.0)))
}

/// Gate radius `1.96·sqrt(σ²) + β` of a record.
pub fn gate_threshold(rec: &PlaceRecord, beta: f64, convention: RadiusConvention) -> Result<f64, SelectorError> {
    if !(beta >= 0.0) {
        return Err(SelectorError::NegativeBeta(beta));
    }
    if !rec.is_finite() {
        return Err(SelectorError::NonFinite { frame: rec.frame_index });
    }
    let variance = match convention {
        RadiusConvention::MaxEigenvalue => max_eigenvalue(&rec.position_covariance),
        RadiusConvention::MeanTrace => rec.position_covariance.trace() / 3.0,
    };
    Ok(CONFIDENCE_95 * libm::sqrt(variance.max(0.0)) + beta)
}

fn check_sorted(records: &[PlaceRecord]) -> Result<(), SelectorError> {
    for w in records.windows(2) {
        if w[1].frame_index <= w[0].frame_index {
            return Err(SelectorError::Unsorted { frame: w[1].frame_index });
        }
    }
    Ok(())
}

/// Gate the record at slice position `idx` against its nearest eligible
/// predecessor. Ties go to the smaller frame index.
pub fn gate_query(records: &[PlaceRecord], idx: usize, cfg: &SelectorConfig) -> Result<Option<GatedPair>, SelectorError> {
    let query = &records[idx];
    let Some(limit) = query.frame_index.checked_sub(cfg.margin) else {
        return Ok(None);
    };
    let mut best: Option<(usize, f64)> = None;
    for cand in records[..idx].iter().take_while(|r| r.frame_index <= limit) {
        let d = pose_distance(query, cand)?;
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((cand.frame_index, d));
        }
    }
    let Some((matched, distance)) = best else {
        return Ok(None);
    };
    let threshold = gate_threshold(query, cfg.beta, cfg.radius)?;
    Ok((distance < threshold).then_some(GatedPair {
        query: query.frame_index,
        matched,
        distance,
        threshold,
    }))
}

/// Preliminary loop pairs, one per gated query, in query order.
pub fn find_preliminary_loops(records: &[PlaceRecord], cfg: &SelectorConfig) -> Result<Vec<GatedPair>, SelectorError> {
    if !(cfg.beta >= 0.0) {
        return Err(SelectorError::NegativeBeta(cfg.beta));
    }
    check_sorted(records)?;
    let mut out = Vec::new();
    for idx in 0..records.len() {
        if let Some(p) = gate_query(records, idx, cfg)? {
            out.push(p);
        }
    }
    Ok(out)
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Cluster pairs by index continuity and wrap each cluster in enlarged,
/// disjoint rectangles clamped to `[0, frame_count)` and the margin.
pub fn cluster_candidate_areas(pairs: &[LoopPair], cfg: &SelectorConfig, frame_count: usize) -> Vec<CandidateArea> {
    if pairs.is_empty() || frame_count == 0 {
        return Vec::new();
    }
    let mut sorted: Vec<(usize, usize)> = pairs.iter().map(|p| (p.query, p.matched)).collect();
    sorted.sort_unstable();
    sorted.dedup();

    let gap = cfg.gap_tolerance;
    let mut sets = DisjointSet::new(sorted.len());
    for b in 0..sorted.len() {
        for a in (0..b).rev() {
            if sorted[b].0 - sorted[a].0 > gap {
                break;
            }
            if sorted[a].1.abs_diff(sorted[b].1) <= gap {
                sets.union(a, b);
            }
        }
    }
    let mut clusters: Vec<Vec<(usize, usize)>> = Vec::new();
    let mut slot = alloc::vec![usize::MAX; sorted.len()];
    for (idx, &p) in sorted.iter().enumerate() {
        let root = sets.find(idx);
        if slot[root] == usize::MAX {
            slot[root] = clusters.len();
            clusters.push(Vec::new());
        }
        clusters[slot[root]].push(p);
    }

    let enl = cfg.enlargement;
    let mut areas = Vec::new();
    for members in &clusters {
        // members are in query order
        let mut chunks: Vec<&[(usize, usize)]> = Vec::new();
        let mut start = 0;
        for k in 1..members.len() {
            if cfg.max_query_span > 0 && members[k].0 - members[start].0 >= cfg.max_query_span {
                chunks.push(&members[start..k]);
                start = k;
            }
        }
        chunks.push(&members[start..]);
        let last = chunks.len() - 1;
        for (c, chunk) in chunks.iter().enumerate() {
            let q_lo = chunk[0].0;
            let q_hi = chunk[chunk.len() - 1].0;
            let m_lo = chunk.iter().map(|p| p.1).min().unwrap_or(0);
            let m_hi = chunk.iter().map(|p| p.1).max().unwrap_or(0);
            // interior chunk boundaries tile the query axis without overlap
            let q_lo = if c == 0 { q_lo.saturating_sub(enl) } else { q_lo };
            let q_hi = if c == last { q_hi + enl } else { chunks[c + 1][0].0 - 1 };
            areas.push(CandidateArea::new((q_lo, q_hi), (m_lo.saturating_sub(enl), m_hi + enl)));
        }
    }

    let mut clamped: Vec<CandidateArea> = areas
        .into_iter()
        .filter_map(|a| clamp_area(a, cfg.margin, frame_count))
        .collect();

    // merge until no two rectangles overlap
    loop {
        let mut merged = false;
        'outer: for a in 0..clamped.len() {
            for b in a + 1..clamped.len() {
                if clamped[a].overlaps(&clamped[b]) {
                    let u = clamped[a].union(&clamped[b]);
                    clamped[a] = u;
                    clamped.swap_remove(b);
                    merged = true;
                    break 'outer;
                }
            }
        }
        if !merged {
            break;
        }
    }
    clamped.sort_unstable();
    clamped
}

fn clamp_area(a: CandidateArea, margin: usize, frame_count: usize) -> Option<CandidateArea> {
    let query_lo = a.query_lo.max(margin);
    let query_hi = a.query_hi.min(frame_count - 1);
    if query_lo > query_hi {
        return None;
    }
    let match_hi = a.match_hi.min(query_hi - margin);
    if a.match_lo > match_hi {
        return None;
    }
    Some(CandidateArea {
        query_lo,
        query_hi,
        match_lo: a.match_lo,
        match_hi,
    })
}
