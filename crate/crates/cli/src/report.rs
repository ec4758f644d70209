//! Serialization of run results: JSON reports with stable key order and
//! CSV tables with a `#` reproducibility header.
//!
//! Wall-clock timing never enters these files; it goes to standard error
//! so reruns with one seed produce identical bytes.

use std::fs;
use std::path::Path;

use serde::Serialize;

use cfpnp::liegeo::log_map;
use cfpnp::solvers::TraceRecord;
use cfpnp::Pose;

use crate::{io_err, CliResult};

/// Pose in plain-data form: homogeneous matrix plus twist coordinates.
#[derive(Debug, Clone, Serialize)]
pub struct PoseReport {
    /// Row-major 4x4 rigid transform.
    pub matrix: [[f64; 4]; 4],
    /// Twist of the pose; absent within 1e-6 of the rotation cut locus.
    pub twist: Option<TwistReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TwistReport {
    pub rho: [f64; 3],
    pub phi: [f64; 3],
}

impl PoseReport {
    pub fn from_pose(pose: &Pose) -> Self {
        let r = &pose.rotation;
        let t = &pose.translation;
        let matrix = [
            [r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x],
            [r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y],
            [r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z],
            [0.0, 0.0, 0.0, 1.0],
        ];
        let twist = log_map(pose).ok().map(|tw| TwistReport {
            rho: [tw.rho.x, tw.rho.y, tw.rho.z],
            phi: [tw.phi.x, tw.phi.y, tw.phi.z],
        });
        PoseReport { matrix, twist }
    }
}

/// Writes pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| {
        crate::CliError::Usage(format!("cannot serialize {}: {e}", path.display()))
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// One `# key=value` comment line per entry, then a header row, then data
/// rows. Floats print in shortest round-trip form.
pub fn write_csv(
    path: &Path,
    config_lines: &[String],
    columns: &[&str],
    rows: &[Vec<String>],
) -> CliResult<()> {
    let mut out = String::new();
    for line in config_lines {
        out.push_str(&format!("# {line}\n"));
    }
    out.push_str(&columns.join(","));
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Per-iteration solver trace as CSV.
pub fn write_trace_csv(
    path: &Path,
    config_lines: &[String],
    trace: &[TraceRecord],
) -> CliResult<()> {
    let columns = ["iteration", "e_data", "e_init", "ell", "median_tre", "accepted", "excluded"];
    let rows: Vec<Vec<String>> = trace
        .iter()
        .map(|r| {
            vec![
                r.iteration.to_string(),
                r.e_data.to_string(),
                r.e_init.to_string(),
                r.ell.map(|e| e.to_string()).unwrap_or_default(),
                r.median_tre.to_string(),
                r.accepted.to_string(),
                r.excluded.to_string(),
            ]
        })
        .collect();
    write_csv(path, config_lines, &columns, &rows)
}
