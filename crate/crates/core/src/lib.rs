//! Pose-gated loop-closure detection.
//!
//! The pipeline runs in four stages:
//!
//! 1. [`pose_filter`] integrates IMU-style controls (and sparse position
//!    observations) with an error-state EKF, yielding a pose and covariance
//!    per frame.
//! 2. [`selector`] compares every frame against older frames with a
//!    covariance-corrected distance, gates the nearest neighbour with a 95%
//!    confidence radius and clusters the surviving pairs into rectangular
//!    candidate areas in (query, match) index space.
//! 3. [`dird`] computes Haar-filter descriptors that are invariant to affine
//!    illumination changes.
//! 4. [`retrieval`] compares descriptors only inside the candidate areas and
//!    refines the similarity matrix with sequence matching and non-maximum
//!    suppression.
//!
//! [`eval`] holds the ground-truth and precision/recall bookkeeping, and
//! [`synth`] generates deterministic looping datasets with rendered frames.
//!
//! The crate is `no_std` and only needs `alloc`; file formats, timing and the
//! command-line tool live in the `loopgate` companion crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod dird;
pub mod eval;
pub mod geometry;
pub mod pose_filter;
pub mod retrieval;
pub mod selector;
pub mod synth;

pub use nalgebra;

pub use dird::{DirdConfig, DirdDescriptor, GrayImage, Quantization};
pub use pose_filter::{ControlInput, FilterState, NoiseConfig, PositionObservation};
pub use retrieval::{RetrievalConfig, SimilarityMatrix};
pub use selector::{CandidateArea, LoopPair, PlaceRecord, SelectorConfig};

/// Frames closer than this in index are never considered as loop partners.
pub const DEFAULT_MARGIN: usize = 30;
