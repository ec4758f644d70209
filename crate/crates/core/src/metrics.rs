//! Registration quality metrics: projection residuals, gross-failure
//! counting, pose differences, target registration error, percentiles, and
//! rank correlation.

use nalgebra::Vector2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::liegeo::{project, CameraIntrinsics, Pose};
use crate::points::{PointSet2D, PointSet3D};
use crate::spatial::{CorrespondenceSet, TargetIndex};

/// What each projected source point is measured against.
pub enum ResidualReference<'a> {
    /// Targets aligned with the sources by index.
    Known(&'a PointSet2D),
    /// Nearest target, for runs without ground-truth correspondences.
    Closest(&'a TargetIndex),
}

/// Per-point projection residuals of one registration.
#[derive(Debug, Clone)]
pub struct ResidualSummary {
    pub rmse: f64,
    /// Residual norms in source order, behind-camera points omitted.
    pub per_point: Vec<f64>,
    pub excluded: usize,
}

/// Projection residuals of `pose` against a reference, in pixels.
pub fn projection_residual(
    src: &PointSet3D,
    pose: &Pose,
    cam: &CameraIntrinsics,
    reference: &ResidualReference,
) -> Result<ResidualSummary> {
    if src.is_empty() {
        return Err(Error::EmptySourceSet);
    }
    if let ResidualReference::Known(targets) = reference {
        if targets.len() != src.len() {
            return Err(Error::InvalidConfig(format!(
                "known-correspondence residual needs one target per source: {} vs {}",
                targets.len(),
                src.len()
            )));
        }
    }
    let mut per_point = Vec::with_capacity(src.len());
    let mut excluded = 0usize;
    for (i, p) in src.points.iter().enumerate() {
        let Ok(q) = project(pose, p, cam) else {
            excluded += 1;
            continue;
        };
        let r = match reference {
            ResidualReference::Known(targets) => {
                let d: Vector2<f64> = q - targets.points[i];
                d.norm()
            }
            ResidualReference::Closest(index) => index.nearest(&q).1.sqrt(),
        };
        per_point.push(r);
    }
    if per_point.is_empty() {
        return Err(Error::DegenerateGeometry(
            "all source points project behind the camera".to_string(),
        ));
    }
    let ms = per_point.iter().map(|r| r * r).sum::<f64>() / per_point.len() as f64;
    Ok(ResidualSummary { rmse: ms.sqrt(), per_point, excluded })
}

/// Fraction of runs whose residual exceeds `threshold`.
pub fn gross_failure_rate(residuals: &[f64], threshold: f64) -> Result<f64> {
    if residuals.is_empty() {
        return Err(Error::InvalidConfig(
            "gross failure rate needs at least one run".to_string(),
        ));
    }
    let failures = residuals.iter().filter(|&&r| r > threshold).count();
    Ok(failures as f64 / residuals.len() as f64)
}

/// Rotation difference in degrees and translation difference in scene
/// units. Well defined for all inputs, including half-turn rotations.
pub fn pose_difference(a: &Pose, b: &Pose) -> (f64, f64) {
    let rel = a.rotation.transpose() * b.rotation;
    let c = ((rel.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    (c.acos().to_degrees(), (a.translation - b.translation).norm())
}

/// Median closest-point distance of a pairing, in pixels.
pub fn median_tre(corr: &CorrespondenceSet) -> Result<f64> {
    if corr.pairs.is_empty() {
        return Err(Error::DegenerateGeometry(
            "median registration error of an empty pairing".to_string(),
        ));
    }
    median(&corr.distances())
}

/// Quantile with linear interpolation between closest ranks, `q` in [0, 1].
pub fn percentile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidConfig("percentile of an empty slice".to_string()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidConfig(format!("quantile {q} outside [0, 1]")));
    }
    let mut v = values.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Ok(v[lo] + (h - lo as f64) * (v[hi] - v[lo]))
}

/// Median with the even-count convention: mean of the two middle values.
pub fn median(values: &[f64]) -> Result<f64> {
    percentile(values, 0.5)
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman_rho(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::InvalidConfig(format!(
            "rank correlation needs equal lengths: {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::InvalidConfig(
            "rank correlation needs at least two samples".to_string(),
        ));
    }
    let rx = ranks(xs);
    let ry = ranks(ys);
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..rx.len() {
        let dx = rx[i] - mx;
        let dy = ry[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::InvalidConfig(
            "rank correlation of a constant sequence".to_string(),
        ));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        // 1-based rank, averaged over the tied block.
        let avg = (i + j) as f64 * 0.5 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

/// Per-run summary produced by the command-line tools.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub residual_rmse: f64,
    pub residual_median: f64,
    pub residual_p75: f64,
    pub residual_p95: f64,
    pub median_tre: f64,
    pub rotation_error_deg: Option<f64>,
    pub translation_error: Option<f64>,
}

impl MetricsReport {
    pub fn new(
        residuals: &ResidualSummary,
        median_tre: f64,
        pose_error: Option<(f64, f64)>,
    ) -> Result<Self> {
        Ok(Self {
            residual_rmse: residuals.rmse,
            residual_median: median(&residuals.per_point)?,
            residual_p75: percentile(&residuals.per_point, 0.75)?,
            residual_p95: percentile(&residuals.per_point, 0.95)?,
            median_tre,
            rotation_error_deg: pose_error.map(|e| e.0),
            translation_error: pose_error.map(|e| e.1),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liegeo::so3_exp;
    use crate::spatial::build_index;
    use approx::assert_relative_eq;
    use nalgebra::{Vector2, Vector3};

    #[test]
    fn gross_failures_count_strict_exceedance() {
        let gfr = gross_failure_rate(&[1.0, 6.0, 7.0, 2.0], 5.0).unwrap();
        assert_relative_eq!(gfr, 0.5);
        assert!(gross_failure_rate(&[], 5.0).is_err());
        assert_relative_eq!(gross_failure_rate(&[5.0], 5.0).unwrap(), 0.0);
    }

    #[test]
    fn median_averages_middle_pair() {
        assert_relative_eq!(median(&[1.0, 2.0, 3.0, 100.0]).unwrap(), 2.5);
        assert_relative_eq!(median(&[3.0, 1.0, 2.0]).unwrap(), 2.0);
        assert!(median(&[]).is_err());
    }

    #[test]
    fn percentile_interpolates_between_ranks() {
        let v: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        assert_relative_eq!(percentile(&v, 0.95).unwrap(), 95.05, epsilon = 1e-12);
        assert_relative_eq!(percentile(&v, 0.0).unwrap(), 1.0);
        assert_relative_eq!(percentile(&v, 1.0).unwrap(), 100.0);
        assert!(percentile(&v, 1.5).is_err());
    }

    #[test]
    fn pose_difference_handles_half_turn() {
        let a = Pose::identity();
        let b = Pose::new(
            so3_exp(&Vector3::new(0.0, 0.0, std::f64::consts::PI)),
            Vector3::new(1.0, 2.0, 2.0),
        );
        let (deg, trans) = pose_difference(&a, &b);
        assert_relative_eq!(deg, 180.0, epsilon = 1e-9);
        assert_relative_eq!(trans, 3.0, epsilon = 1e-12);

        let c = Pose::new(so3_exp(&Vector3::new(0.0, 30.0_f64.to_radians(), 0.0)), Vector3::zeros());
        let (deg, _) = pose_difference(&a, &c);
        assert_relative_eq!(deg, 30.0, epsilon = 1e-9);
        let (sym, _) = pose_difference(&c, &a);
        assert_relative_eq!(sym, 30.0, epsilon = 1e-9);
    }

    #[test]
    fn spearman_tracks_monotone_order() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        let up = [2.0, 8.0, 9.0, 20.0, 100.0];
        let down = [5.0, 4.0, 3.0, 2.0, 1.0];
        assert_relative_eq!(spearman_rho(&xs, &up).unwrap(), 1.0);
        assert_relative_eq!(spearman_rho(&xs, &down).unwrap(), -1.0);
    }

    #[test]
    fn spearman_averages_tied_ranks() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys = [10.0, 20.0, 20.0, 40.0];
        // Ranks of ys are (1, 2.5, 2.5, 4); Pearson on ranks is 3/sqrt(10).
        assert_relative_eq!(
            spearman_rho(&xs, &ys).unwrap(),
            3.0 / 10.0_f64.sqrt(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn residuals_against_known_targets() {
        let cam = CameraIntrinsics::new(520.0, 520.0, 512.0, 512.0, 1024.0, 1024.0).unwrap();
        let src = PointSet3D::new(vec![
            Vector3::new(0.0, 0.0, 10.0),
            Vector3::new(1.0, 0.0, 10.0),
        ]);
        let targets = PointSet2D::new(vec![
            Vector2::new(512.0 + 3.0, 512.0),
            Vector2::new(564.0, 512.0 + 4.0),
        ]);
        let s = projection_residual(
            &src,
            &Pose::identity(),
            &cam,
            &ResidualReference::Known(&targets),
        )
        .unwrap();
        assert_relative_eq!(s.per_point[0], 3.0, epsilon = 1e-12);
        assert_relative_eq!(s.per_point[1], 4.0, epsilon = 1e-12);
        assert_relative_eq!(s.rmse, (12.5_f64).sqrt(), epsilon = 1e-12);
        assert_eq!(s.excluded, 0);
    }

    #[test]
    fn closest_mode_uses_nearest_target() {
        let cam = CameraIntrinsics::new(520.0, 520.0, 512.0, 512.0, 1024.0, 1024.0).unwrap();
        let src = PointSet3D::new(vec![Vector3::new(0.0, 0.0, 10.0)]);
        let targets = PointSet2D::new(vec![
            Vector2::new(512.0, 511.0),
            Vector2::new(0.0, 0.0),
        ]);
        let index = build_index(&targets).unwrap();
        let s = projection_residual(
            &src,
            &Pose::identity(),
            &cam,
            &ResidualReference::Closest(&index),
        )
        .unwrap();
        assert_relative_eq!(s.rmse, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn behind_camera_points_are_excluded() {
        let cam = CameraIntrinsics::new(520.0, 520.0, 512.0, 512.0, 1024.0, 1024.0).unwrap();
        let src = PointSet3D::new(vec![
            Vector3::new(0.0, 0.0, 10.0),
            Vector3::new(0.0, 0.0, -10.0),
        ]);
        let targets = PointSet2D::new(vec![Vector2::new(512.0, 512.0), Vector2::new(0.0, 0.0)]);
        let s = projection_residual(
            &src,
            &Pose::identity(),
            &cam,
            &ResidualReference::Known(&targets),
        )
        .unwrap();
        assert_eq!(s.excluded, 1);
        assert_eq!(s.per_point.len(), 1);

        let all_behind = PointSet3D::new(vec![Vector3::new(0.0, 0.0, -10.0)]);
        let targets1 = PointSet2D::new(vec![Vector2::new(0.0, 0.0)]);
        assert!(matches!(
            projection_residual(
                &all_behind,
                &Pose::identity(),
                &cam,
                &ResidualReference::Known(&targets1)
            ),
            Err(Error::DegenerateGeometry(_))
        ));
    }
}
