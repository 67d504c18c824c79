//! Timestamped trajectory I/O: one line per frame,
//! `timestamp tx ty tz qx qy qz qw`, space-separated, full double precision.

use super::SimError;
use crate::liegroup::{AxisAngle, Pose};
use nalgebra::{Vector3, Vector4};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

/// Unit quaternion (x, y, z, w) of an axis-angle rotation.
pub fn quaternion_of(rotation: &AxisAngle) -> Vector4<f64> {
    let angle = rotation.angle();
    let axis = rotation.axis();
    let half = angle / 2.0;
    let s = half.sin();
    Vector4::new(axis.x * s, axis.y * s, axis.z * s, half.cos())
}

fn axis_angle_of(q: &Vector4<f64>) -> AxisAngle {
    let uq = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
        q.w, q.x, q.y, q.z,
    ));
    AxisAngle(uq.scaled_axis())
}

pub fn write_trajectory(
    path: impl AsRef<Path>,
    trajectory: &[(f64, Pose)],
) -> Result<(), SimError> {
    let path_str = path.as_ref().display().to_string();
    let file = std::fs::File::create(path.as_ref())
        .map_err(|source| SimError::ConfigIo { path: path_str.clone(), source })?;
    let mut out = std::io::BufWriter::new(file);
    for (t, pose) in trajectory {
        let p = pose.translation;
        let q = quaternion_of(&pose.rotation);
        writeln!(
            out,
            "{t:.16e} {:.16e} {:.16e} {:.16e} {:.16e} {:.16e} {:.16e} {:.16e}",
            p.x, p.y, p.z, q.x, q.y, q.z, q.w
        )
        .map_err(|source| SimError::ConfigIo { path: path_str.clone(), source })?;
    }
    Ok(())
}

pub fn read_trajectory(path: impl AsRef<Path>) -> Result<Vec<(f64, Pose)>, SimError> {
    let path_str = path.as_ref().display().to_string();
    let file = std::fs::File::open(path.as_ref())
        .map_err(|source| SimError::ConfigIo { path: path_str.clone(), source })?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| SimError::ConfigIo { path: path_str.clone(), source })?;
        let content = line.trim();
        if content.is_empty() || content.starts_with('#') {
            continue;
        }
        let fields: Vec<f64> = content
            .split_whitespace()
            .map(|tok| tok.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| SimError::ConfigParse {
                path: path_str.clone(),
                message: format!("line {}: {e}", lineno + 1),
            })?;
        if fields.len() != 8 {
            return Err(SimError::ConfigParse {
                path: path_str.clone(),
                message: format!("line {}: expected 8 fields, got {}", lineno + 1, fields.len()),
            });
        }
        let pose = Pose::new(
            axis_angle_of(&Vector4::new(fields[4], fields[5], fields[6], fields[7])),
            Vector3::new(fields[1], fields[2], fields[3]),
        );
        out.push((fields[0], pose));
    }
    Ok(out)
}
