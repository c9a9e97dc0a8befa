//! Trajectory file: `frame t px py pz qw qx qy qz c11 c12 c13 c22 c23 c33`,
//! where `cij` is the upper triangle of the position covariance.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use loopgate_core::nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use loopgate_core::FilterState;

use super::{numeric_fields, FormatError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub frame: usize,
    pub t: f64,
    pub position: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
    pub position_covariance: Matrix3<f64>,
}

impl TrajectoryRow {
    pub fn from_state(frame: usize, t: f64, s: &FilterState) -> Self {
        Self {
            frame,
            t,
            position: s.position,
            rotation: s.rotation,
            position_covariance: s.position_covariance(),
        }
    }
}

pub fn write_trajectory(path: &Path, rows: &[TrajectoryRow]) -> Result<()> {
    let mut out = String::new();
    for r in rows {
        let p = r.position;
        let q = r.rotation.quaternion();
        let c = r.position_covariance;
        writeln!(
            out,
            "{} {} {} {} {} {} {} {} {} {} {} {} {} {} {}",
            r.frame,
            r.t,
            p.x,
            p.y,
            p.z,
            q.w,
            q.i,
            q.j,
            q.k,
            c[(0, 0)],
            c[(0, 1)],
            c[(0, 2)],
            c[(1, 1)],
            c[(1, 2)],
            c[(2, 2)]
        )
        .unwrap();
    }
    fs::write(path, out).map_err(FormatError::io(path))
}

pub fn read_trajectory(path: &Path) -> Result<Vec<TrajectoryRow>> {
    let text = fs::read_to_string(path).map_err(FormatError::io(path))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let f = numeric_fields(path, i + 1, line)?;
        if f.is_empty() {
            continue;
        }
        if f.len() != 15 {
            return Err(FormatError::parse(path, i + 1, format!("expected 15 fields, found {}", f.len())));
        }
        if f[0] < 0.0 || f[0].fract() != 0.0 {
            return Err(FormatError::parse(path, i + 1, "frame index must be a non-negative integer"));
        }
        let frame = f[0] as usize;
        if frame != rows.len() {
            return Err(FormatError::parse(path, i + 1, format!("expected frame {}, found {frame}", rows.len())));
        }
        // stored quaternions are already unit length; renormalizing would
        // perturb the last bit
        let rotation = UnitQuaternion::new_unchecked(Quaternion::new(f[5], f[6], f[7], f[8]));
        let position_covariance = Matrix3::new(f[9], f[10], f[11], f[10], f[12], f[13], f[11], f[13], f[14]);
        rows.push(TrajectoryRow {
            frame,
            t: f[1],
            position: Vector3::new(f[2], f[3], f[4]),
            rotation,
            position_covariance,
        });
    }
    Ok(rows)
}
