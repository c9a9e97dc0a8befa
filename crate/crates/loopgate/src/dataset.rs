//! Datasets on disk: synthetic sets written by `synth`, manifests, and
//! KITTI-style image directories with a pose file.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context};
use rayon::prelude::*;

use loopgate_core::nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use loopgate_core::synth::SynthDataset;
use loopgate_core::{FilterState, GrayImage};

use crate::formats::controls::{read_controls, write_controls, ControlLog};
use crate::formats::images::{is_image_path, read_image, write_image};
use crate::formats::manifest::{DatasetManifest, InitialState, MANIFEST_VERSION};
use crate::formats::trajectory::{read_trajectory, write_trajectory, TrajectoryRow};
use crate::formats::{numeric_fields, FormatError};

pub const MANIFEST_FILE: &str = "manifest.json";
const IMAGE_DIR: &str = "images";
const CONTROLS_FILE: &str = "controls.txt";
const GROUND_TRUTH_FILE: &str = "ground_truth.txt";

/// A loaded dataset; images are read on demand.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub frames: Vec<PathBuf>,
    pub ground_truth: Vec<TrajectoryRow>,
    pub controls: Option<ControlLog>,
}

impl Dataset {
    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.ground_truth.iter().map(|r| r.position).collect()
    }

    pub fn image(&self, frame: usize) -> anyhow::Result<GrayImage> {
        let path = self.frames.get(frame).with_context(|| format!("frame {frame} out of range"))?;
        read_image(path).with_context(|| format!("frame {frame}"))
    }

    /// Filter state before the first control sample.
    pub fn initial_state(&self) -> FilterState {
        match &self.manifest.initial_state {
            Some(s) => s.to_state(),
            None => FilterState::at_rest(),
        }
    }
}

pub fn frame_file_name(frame: usize) -> String {
    format!("frame_{frame:06}.pgm")
}

/// Write `ds` under `dir` and return the manifest path.
pub fn write_dataset(ds: &SynthDataset, dir: &Path) -> anyhow::Result<PathBuf> {
    let n = ds.frame_count();
    let image_dir = dir.join(IMAGE_DIR);
    fs::create_dir_all(&image_dir).with_context(|| format!("creating {}", image_dir.display()))?;

    let images: Vec<GrayImage> = (0..n).into_par_iter().map(|k| ds.render(k)).collect();
    for (k, img) in images.iter().enumerate() {
        write_image(&image_dir.join(frame_file_name(k)), img)?;
    }

    let cfg = &ds.config;
    let log = ControlLog {
        times: (0..n).map(|k| cfg.frame_time(k)).collect(),
        controls: ds.controls.clone(),
        observations: ds.observations.clone(),
    };
    write_controls(&dir.join(CONTROLS_FILE), &log)?;

    let rows: Vec<TrajectoryRow> = ds
        .trajectory
        .poses
        .iter()
        .enumerate()
        .map(|(k, p)| TrajectoryRow {
            frame: k,
            t: p.t,
            position: p.position,
            rotation: p.rotation,
            position_covariance: Matrix3::zeros(),
        })
        .collect();
    write_trajectory(&dir.join(GROUND_TRUTH_FILE), &rows)?;

    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        seed: cfg.seed,
        frame_count: n,
        image_dir: IMAGE_DIR.into(),
        controls_file: Some(CONTROLS_FILE.into()),
        ground_truth_file: GROUND_TRUTH_FILE.into(),
        truth_radius_m: ds.truth_radius,
        config: Some(cfg.clone()),
        initial_state: Some(InitialState::from_state(&ds.trajectory.initial_state())),
    };
    let path = dir.join(MANIFEST_FILE);
    manifest.write(&path)?;
    Ok(path)
}

/// Image files of `dir` in name order.
pub fn list_images(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))?;
    let mut out = Vec::new();
    for e in entries {
        let path = e.with_context(|| format!("listing {}", dir.display()))?.path();
        if path.is_file() && is_image_path(&path) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

pub fn load_manifest(path: &Path) -> anyhow::Result<Dataset> {
    let manifest = DatasetManifest::read(path)?;
    let root = path.parent().unwrap_or(Path::new(""));
    let frames = list_images(&root.join(&manifest.image_dir))?;
    let n = manifest.frame_count;
    ensure!(n > 0, "{}: dataset has no frames", path.display());
    ensure!(
        frames.len() == n,
        "{}: manifest lists {n} frames but the image directory holds {}",
        path.display(),
        frames.len()
    );
    let gt_path = root.join(&manifest.ground_truth_file);
    let ground_truth = read_poses(&gt_path)?;
    ensure!(
        ground_truth.len() == n,
        "{}: {} poses for {n} frames",
        gt_path.display(),
        ground_truth.len()
    );
    let controls = match &manifest.controls_file {
        Some(f) => {
            let p = root.join(f);
            let log = read_controls(&p)?;
            ensure!(log.controls.len() == n, "{}: {} control samples for {n} frames", p.display(), log.controls.len());
            Some(log)
        }
        None => None,
    };
    Ok(Dataset {
        manifest,
        frames,
        ground_truth,
        controls,
    })
}

/// Poses in either the trajectory format or KITTI's 12-value rows.
pub fn read_poses(path: &Path) -> anyhow::Result<Vec<TrajectoryRow>> {
    let text = fs::read_to_string(path).map_err(FormatError::io(path))?;
    let first = text
        .lines()
        .enumerate()
        .map(|(i, l)| numeric_fields(path, i + 1, l))
        .find(|f| f.as_ref().map_or(true, |f| !f.is_empty()))
        .transpose()?;
    match first.map(|f| f.len()) {
        Some(12) => read_kitti_poses(path),
        _ => Ok(read_trajectory(path)?),
    }
}

/// KITTI odometry poses: one row-major 3×4 `[R | t]` per line. Frames are
/// timestamped by index.
pub fn read_kitti_poses(path: &Path) -> anyhow::Result<Vec<TrajectoryRow>> {
    let text = fs::read_to_string(path).map_err(FormatError::io(path))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let f = numeric_fields(path, i + 1, line)?;
        if f.is_empty() {
            continue;
        }
        if f.len() != 12 {
            return Err(FormatError::parse(path, i + 1, format!("expected 12 fields, found {}", f.len())).into());
        }
        let r = Matrix3::new(f[0], f[1], f[2], f[4], f[5], f[6], f[8], f[9], f[10]);
        let frame = rows.len();
        rows.push(TrajectoryRow {
            frame,
            t: frame as f64,
            position: Vector3::new(f[3], f[7], f[11]),
            rotation: UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix(&r)),
            position_covariance: Matrix3::zeros(),
        });
    }
    Ok(rows)
}

/// Dataset from a directory of ordered images and a KITTI pose file.
pub fn load_kitti_style(image_dir: &Path, pose_file: &Path) -> anyhow::Result<Dataset> {
    let frames = list_images(image_dir)?;
    let ground_truth = read_kitti_poses(pose_file)?;
    if frames.len() != ground_truth.len() {
        bail!(
            "{} images in {} but {} poses in {}",
            frames.len(),
            image_dir.display(),
            ground_truth.len(),
            pose_file.display()
        );
    }
    ensure!(!frames.is_empty(), "{}: no images", image_dir.display());
    let positions: Vec<_> = ground_truth.iter().map(|r| r.position).collect();
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        seed: 0,
        frame_count: frames.len(),
        image_dir: image_dir.to_string_lossy().into_owned(),
        controls_file: None,
        ground_truth_file: pose_file.to_string_lossy().into_owned(),
        truth_radius_m: loopgate_core::eval::default_truth_radius(&positions),
        config: None,
        initial_state: None,
    };
    Ok(Dataset {
        manifest,
        frames,
        ground_truth,
        controls: None,
    })
}
