//! CSV tables exchanged between commands.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use loopgate_core::eval::PrPoint;
use loopgate_core::selector::GatedPair;
use loopgate_core::{CandidateArea, LoopPair, SimilarityMatrix};

use super::{FormatError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AreaRow {
    pub i_lo: usize,
    pub i_hi: usize,
    pub j_lo: usize,
    pub j_hi: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GatedRow {
    pub i: usize,
    pub j: usize,
    pub distance: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityRow {
    pub i: usize,
    pub j: usize,
    pub similarity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopRow {
    pub i: usize,
    pub j: usize,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrRow {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub stage: String,
    pub frames: usize,
    pub total_ms: f64,
    pub per_frame_ms: f64,
    pub comparisons: u64,
}

impl From<&CandidateArea> for AreaRow {
    fn from(a: &CandidateArea) -> Self {
        Self {
            i_lo: a.query_lo,
            i_hi: a.query_hi,
            j_lo: a.match_lo,
            j_hi: a.match_hi,
        }
    }
}

impl From<AreaRow> for CandidateArea {
    fn from(r: AreaRow) -> Self {
        CandidateArea::new((r.i_lo, r.i_hi), (r.j_lo, r.j_hi))
    }
}

impl From<&GatedPair> for GatedRow {
    fn from(g: &GatedPair) -> Self {
        Self {
            i: g.query,
            j: g.matched,
            distance: g.distance,
            threshold: g.threshold,
        }
    }
}

impl From<&LoopPair> for LoopRow {
    fn from(p: &LoopPair) -> Self {
        Self {
            i: p.query,
            j: p.matched,
            score: p.score,
        }
    }
}

impl From<LoopRow> for LoopPair {
    fn from(r: LoopRow) -> Self {
        LoopPair::new(r.i, r.j, r.score)
    }
}

impl From<&PrPoint> for PrRow {
    fn from(p: &PrPoint) -> Self {
        Self {
            threshold: p.threshold,
            precision: p.precision,
            recall: p.recall,
            tp: p.tp,
            fp: p.fp,
            fn_: p.fn_,
        }
    }
}

/// A CSV row type with a fixed column list.
pub trait Table: Serialize {
    const COLUMNS: &'static [&'static str];
}

macro_rules! table {
    ($($ty:ty => [$($col:literal),*];)*) => {
        $(impl Table for $ty {
            const COLUMNS: &'static [&'static str] = &[$($col),*];
        })*
    };
}

table! {
    AreaRow => ["i_lo", "i_hi", "j_lo", "j_hi"];
    GatedRow => ["i", "j", "distance", "threshold"];
    SimilarityRow => ["i", "j", "similarity"];
    LoopRow => ["i", "j", "score"];
    PrRow => ["threshold", "precision", "recall", "tp", "fp", "fn"];
    TimingRow => ["stage", "frames", "total_ms", "per_frame_ms", "comparisons"];
}

fn header_line(columns: &[&str]) -> String {
    columns.join(",") + "\n"
}

pub fn similarity_rows(m: &SimilarityMatrix) -> Vec<SimilarityRow> {
    m.entries
        .iter()
        .map(|(&(i, j), &similarity)| SimilarityRow { i, j, similarity })
        .collect()
}

pub fn write_rows<T: Table>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(FormatError::io(path))?;
    if rows.is_empty() {
        // the csv writer only emits headers alongside the first record
        std::fs::write(path, header_line(T::COLUMNS)).map_err(FormatError::io(path))?;
    }
    Ok(())
}

pub fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_error(path, e))).collect()
}

fn csv_error(path: &Path, e: csv::Error) -> FormatError {
    match e.position() {
        Some(pos) => FormatError::parse(path, pos.line() as usize, e.to_string()),
        None => FormatError::invalid(path, e.to_string()),
    }
}
