//! Control log: one line per frame, `t ax ay az gx gy gz [px py pz]`.
//!
//! `t` is the frame timestamp; the sample covers the interval since the
//! previous timestamp (or since zero for the first line). The optional
//! trailing triple is a position fix applied at that frame.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use loopgate_core::nalgebra::Vector3;
use loopgate_core::{ControlInput, PositionObservation};

use super::{numeric_fields, FormatError, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ControlLog {
    pub times: Vec<f64>,
    pub controls: Vec<ControlInput>,
    pub observations: BTreeMap<usize, PositionObservation>,
}

pub fn write_controls(path: &Path, log: &ControlLog) -> Result<()> {
    let mut out = String::new();
    for (k, (t, c)) in log.times.iter().zip(&log.controls).enumerate() {
        let a = c.linear_acceleration;
        let g = c.angular_velocity;
        write!(out, "{t} {} {} {} {} {} {}", a.x, a.y, a.z, g.x, g.y, g.z).unwrap();
        if let Some(o) = log.observations.get(&k) {
            let p = o.observed_position;
            write!(out, " {} {} {}", p.x, p.y, p.z).unwrap();
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(FormatError::io(path))
}

pub fn read_controls(path: &Path) -> Result<ControlLog> {
    let text = fs::read_to_string(path).map_err(FormatError::io(path))?;
    let mut log = ControlLog::default();
    let mut prev = 0.0;
    for (i, line) in text.lines().enumerate() {
        let f = numeric_fields(path, i + 1, line)?;
        if f.is_empty() {
            continue;
        }
        if f.len() != 7 && f.len() != 10 {
            return Err(FormatError::parse(path, i + 1, format!("expected 7 or 10 fields, found {}", f.len())));
        }
        let dt = f[0] - prev;
        if !(dt > 0.0) {
            return Err(FormatError::parse(path, i + 1, "timestamps must increase"));
        }
        prev = f[0];
        let frame = log.controls.len();
        log.times.push(f[0]);
        log.controls.push(ControlInput::new(
            Vector3::new(f[4], f[5], f[6]),
            Vector3::new(f[1], f[2], f[3]),
            dt,
        ));
        if f.len() == 10 {
            log.observations
                .insert(frame, PositionObservation::new(Vector3::new(f[7], f[8], f[9])));
        }
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_with_sparse_fixes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("controls.txt");
        let mut log = ControlLog::default();
        for k in 0..5 {
            log.times.push((k + 1) as f64 * 0.25);
            log.controls.push(ControlInput::new(
                Vector3::new(0.0, 0.0, 0.1 * k as f64),
                Vector3::new(1.0 / 3.0, -2.5, 9.81),
                0.25,
            ));
        }
        log.observations
            .insert(2, PositionObservation::new(Vector3::new(1.5, -0.1, 1e-17)));
        write_controls(&p, &log).unwrap();
        assert_eq!(read_controls(&p).unwrap(), log);
    }

    #[test]
    fn malformed_lines_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.txt");
        fs::write(&p, "0.1 0 0 9.81 0 0 0\n0.2 0 0 9.81 0 0\n").unwrap();
        let err = read_controls(&p).unwrap_err().to_string();
        assert!(err.contains(":2:"), "{err}");
        fs::write(&p, "0.1 0 0 9.81 0 0 0\n0.1 0 0 9.81 0 0 0\n").unwrap();
        assert!(read_controls(&p).is_err());
    }
}
