//! TUM trajectory text format: `timestamp tx ty tz qx qy qz qw` per line.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use super::Pose;
use crate::error::{Error, Result};

pub type Trajectory = Vec<(f64, Pose)>;

pub fn format_tum(traj: &[(f64, Pose)]) -> String {
    let mut out = String::new();
    for (t, p) in traj {
        let q = p.quaternion();
        let (qi, qw) = (q.imag(), q.w);
        writeln!(
            out,
            "{} {} {} {} {} {} {} {}",
            t, p.translation.x, p.translation.y, p.translation.z, qi.x, qi.y, qi.z, qw
        )
        .unwrap();
    }
    out
}

pub fn parse_tum(text: &str) -> Result<Trajectory> {
    let mut traj = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse(format!("TUM line {}: {e}", lineno + 1)))?;
        if vals.len() != 8 {
            return Err(Error::Parse(format!(
                "TUM line {}: expected 8 fields, found {}",
                lineno + 1,
                vals.len()
            )));
        }
        let q = UnitQuaternion::from_quaternion(Quaternion::new(vals[7], vals[4], vals[5], vals[6]));
        traj.push((vals[0], Pose::from_quaternion(&q, Vector3::new(vals[1], vals[2], vals[3]))));
    }
    Ok(traj)
}

pub fn write_tum(path: &Path, traj: &[(f64, Pose)]) -> Result<()> {
    std::fs::write(path, format_tum(traj)).map_err(|e| Error::io(path, e))
}

pub fn read_tum(path: &Path) -> Result<Trajectory> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_tum(&text)
}
