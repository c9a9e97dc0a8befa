//! Dataset manifest (JSON). Paths are relative to the manifest's directory.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use loopgate_core::nalgebra::{Quaternion, UnitQuaternion, Vector3};
use loopgate_core::synth::SynthConfig;
use loopgate_core::FilterState;

use super::{FormatError, Result};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub seed: u64,
    pub frame_count: usize,
    pub image_dir: String,
    /// Absent for datasets that only carry reference poses.
    pub controls_file: Option<String>,
    pub ground_truth_file: String,
    pub truth_radius_m: f64,
    /// Generator settings for synthetic datasets.
    pub config: Option<SynthConfig>,
    /// Pose one control step before frame 0, where filtering starts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<InitialState>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialState {
    pub position: [f64; 3],
    /// `[w, x, y, z]`
    pub rotation: [f64; 4],
    pub velocity: [f64; 3],
}

impl InitialState {
    pub fn from_state(s: &FilterState) -> Self {
        let q = s.rotation.quaternion();
        Self {
            position: s.position.into(),
            rotation: [q.w, q.i, q.j, q.k],
            velocity: s.velocity.into(),
        }
    }

    /// Filter state with zero uncertainty.
    pub fn to_state(&self) -> FilterState {
        let [w, x, y, z] = self.rotation;
        FilterState::new(
            Vector3::from(self.position),
            UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z)),
            Vector3::from(self.velocity),
            Default::default(),
        )
    }
}

impl DatasetManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(FormatError::io(path))?;
        let m: Self = serde_json::from_str(&text).map_err(|e| FormatError::parse(path, e.line(), e.to_string()))?;
        if m.version != MANIFEST_VERSION {
            return Err(FormatError::invalid(path, format!("unsupported manifest version {}", m.version)));
        }
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text + "\n").map_err(FormatError::io(path))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_and_field_names() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("manifest.json");
        let m = DatasetManifest {
            version: 1,
            seed: 42,
            frame_count: 10,
            image_dir: "images".into(),
            controls_file: Some("controls.txt".into()),
            ground_truth_file: "ground_truth.txt".into(),
            truth_radius_m: 1.5,
            config: Some(SynthConfig::default()),
            initial_state: None,
        };
        m.write(&p).unwrap();
        assert_eq!(DatasetManifest::read(&p).unwrap(), m);
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&p).unwrap()).unwrap();
        for key in ["version", "seed", "frame_count", "image_dir", "controls_file", "ground_truth_file", "truth_radius_m", "config"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }
}
