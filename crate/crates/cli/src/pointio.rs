//! Plain-text point-set files and JSON scene/pose files.
//!
//! Point files hold one point per line, columns separated by whitespace.
//! 3D files have three columns plus an optional integer label column
//! (0 marks an unlabeled point); 2D files have two. `#` starts a comment
//! and blank lines are skipped. Coordinates are written with 17
//! significant digits so a write-read cycle reproduces every bit.

use std::fs;
use std::path::Path;

use nalgebra::{Vector2, Vector3};

use cfpnp::synthlab::SyntheticScene;
use cfpnp::{Error, Pose};

use crate::{io_err, CliError, CliResult};

fn parse_f64(token: &str, line: usize) -> CliResult<f64> {
    token.parse::<f64>().map_err(|_| {
        CliError::Core(Error::Parse { line, message: format!("not a number: {token:?}") })
    })
}

fn parse_i64(token: &str, line: usize) -> CliResult<i64> {
    token.parse::<i64>().map_err(|_| {
        CliError::Core(Error::Parse { line, message: format!("not an integer label: {token:?}") })
    })
}

/// Reads a 3D point file; a fourth column becomes per-point labels.
pub fn read_points3d(path: &Path) -> CliResult<cfpnp::PointSet3D> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut points = Vec::new();
    let mut labels = Vec::new();
    let mut any_label = false;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let cols: Vec<&str> = body.split_whitespace().collect();
        if cols.len() != 3 && cols.len() != 4 {
            return Err(CliError::Core(Error::Parse {
                line,
                message: format!("expected 3 or 4 columns, got {}", cols.len()),
            }));
        }
        let x = parse_f64(cols[0], line)?;
        let y = parse_f64(cols[1], line)?;
        let z = parse_f64(cols[2], line)?;
        points.push(Vector3::new(x, y, z));
        if cols.len() == 4 {
            labels.push(parse_i64(cols[3], line)?);
            any_label = true;
        } else {
            labels.push(0);
        }
    }
    if points.is_empty() {
        return Err(CliError::Core(Error::EmptySourceSet));
    }
    if any_label {
        Ok(cfpnp::PointSet3D::with_labels(points, labels)?)
    } else {
        Ok(cfpnp::PointSet3D::new(points))
    }
}

/// Reads a 2D point file.
pub fn read_points2d(path: &Path) -> CliResult<cfpnp::PointSet2D> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut points = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let cols: Vec<&str> = body.split_whitespace().collect();
        if cols.len() != 2 {
            return Err(CliError::Core(Error::Parse {
                line,
                message: format!("expected 2 columns, got {}", cols.len()),
            }));
        }
        points.push(Vector2::new(parse_f64(cols[0], line)?, parse_f64(cols[1], line)?));
    }
    if points.is_empty() {
        return Err(CliError::Core(Error::EmptyTargetSet));
    }
    Ok(cfpnp::PointSet2D::new(points))
}

/// Writes a 3D point file; the label column appears when labels exist.
pub fn write_points3d(path: &Path, set: &cfpnp::PointSet3D, header: &str) -> CliResult<()> {
    let mut out = String::new();
    out.push_str(&format!("# {header}\n"));
    match &set.labels {
        Some(labels) => {
            out.push_str("# columns: x y z label\n");
            for (p, l) in set.points.iter().zip(labels) {
                out.push_str(&format!("{:.16e} {:.16e} {:.16e} {l}\n", p.x, p.y, p.z));
            }
        }
        None => {
            out.push_str("# columns: x y z\n");
            for p in &set.points {
                out.push_str(&format!("{:.16e} {:.16e} {:.16e}\n", p.x, p.y, p.z));
            }
        }
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Writes a 2D point file.
pub fn write_points2d(path: &Path, set: &cfpnp::PointSet2D, header: &str) -> CliResult<()> {
    let mut out = String::new();
    out.push_str(&format!("# {header}\n# columns: u v\n"));
    for p in &set.points {
        out.push_str(&format!("{:.16e} {:.16e}\n", p.x, p.y));
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Reads a scene JSON file produced by `gen-scene`.
pub fn read_scene(path: &Path) -> CliResult<SyntheticScene> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| {
        CliError::Core(Error::Parse { line: e.line(), message: e.to_string() })
    })
}

/// Reads a pose JSON file holding `rotation` and `translation` fields in
/// the same layout scene files use for their ground-truth pose.
pub fn read_pose(path: &Path) -> CliResult<Pose> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| {
        CliError::Core(Error::Parse { line: e.line(), message: e.to_string() })
    })
}

/// Reads camera intrinsics from JSON (`fx`, `fy`, `cx`, `cy`, `width`,
/// `height`).
pub fn read_camera(path: &Path) -> CliResult<cfpnp::CameraIntrinsics> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| {
        CliError::Core(Error::Parse { line: e.line(), message: e.to_string() })
    })
}
