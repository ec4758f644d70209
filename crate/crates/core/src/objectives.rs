//! Registration energies: the Euclidean/Huber baseline objective and the
//! Gaussian-kernel data term with its coarse-to-fine scale schedule.
//!
//! The kernel data term scores a pose by how much correspondence mass the
//! projected points collect: `e_data = sum_i w_i sum_j exp(-d_ij^2 / (2
//! ell^2))`, summed for each source over its nearest targets. Larger is
//! better. The reweighted least-squares view freezes those kernel values as
//! weights, which is what the solver linearizes.

use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::liegeo::{project, se3_distance, CameraIntrinsics, Pose};
use crate::points::{PointSet2D, PointSet3D};
use crate::spatial::TargetIndex;

/// Neighbors per source point in truncated kernel sums.
pub const KERNEL_NEIGHBORS: usize = 8;

/// Kernel sums ignore targets beyond this multiple of `ell`.
pub const KERNEL_TRUNCATION: f64 = 3.0;

/// Baseline loss applied to closest-point residuals.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Squared,
    /// Quadratic near zero, linear past `delta` (pixels).
    Huber { delta: f64 },
}

impl LossKind {
    /// Default corner for the robust baseline, in pixels.
    pub fn default_huber() -> Self {
        LossKind::Huber { delta: 5.0 }
    }

    /// Loss value for a residual norm.
    pub fn value(&self, r: f64) -> f64 {
        match *self {
            LossKind::Squared => r * r,
            LossKind::Huber { delta } => {
                if r <= delta {
                    r * r
                } else {
                    2.0 * delta * r - delta * delta
                }
            }
        }
    }

    /// IRLS weight so that `weight * r^2` linearizes the loss.
    pub fn weight(&self, r: f64) -> f64 {
        match *self {
            LossKind::Squared => 1.0,
            LossKind::Huber { delta } => {
                if r <= delta {
                    1.0
                } else {
                    delta / r
                }
            }
        }
    }
}

/// Parameters of the kernel objective.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct KernelConfig {
    /// Kernel width in pixels. Set from data by [`update_scale`].
    pub ell: f64,
    /// Weight of the initial-pose penalty.
    pub lambda: f64,
    /// Iterations between halvings of `ell`.
    pub shrink_period: usize,
    /// Lower clamp on `ell`, pixels.
    pub ell_floor: f64,
    /// Optional per-source weights; uniform 1 when absent.
    pub point_weights: Option<Vec<f64>>,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            ell: 1.0,
            lambda: 1.0,
            shrink_period: 5,
            ell_floor: 0.5,
            point_weights: None,
        }
    }
}

/// Energy terms evaluated at one pose.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct EnergyBreakdown {
    /// Kernel correspondence mass (dimensionless, larger is better).
    pub e_data: f64,
    /// Squared twist distance from the initial pose.
    pub e_init: f64,
    /// Frozen-weight least-squares value, pixels squared.
    pub weighted_ls: f64,
}

/// One source/target pair with its frozen kernel weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedPair {
    pub source: usize,
    pub target: usize,
    pub weight: f64,
    pub sq_dist: f64,
}

/// Frozen pairing and weights for one linearization, plus the energy at the
/// pose they were built from.
#[derive(Debug, Clone, Default)]
pub struct WeightedPairs {
    pub pairs: Vec<WeightedPair>,
    pub excluded: Vec<usize>,
    /// `e_data` at the build pose; equals the sum of weights.
    pub e_data: f64,
    /// Sum of `weight * sq_dist` at the build pose.
    pub weighted_ls: f64,
    /// Per-source nearest squared distances, for scale init and TRE.
    pub nearest_sq: Vec<f64>,
}

pub fn gaussian_kernel(sq_dist: f64, ell: f64) -> f64 {
    (-sq_dist / (2.0 * ell * ell)).exp()
}

/// Euclidean or Huber energy of a pairing: `sum_i loss(dist_i)`.
pub fn euclidean_energy(distances: &[f64], loss: LossKind) -> f64 {
    distances.iter().map(|&d| loss.value(d)).sum()
}

fn point_weight(cfg: &KernelConfig, i: usize) -> f64 {
    match &cfg.point_weights {
        Some(w) => w[i],
        None => 1.0,
    }
}

fn validate_weights(cfg: &KernelConfig, n: usize) -> Result<()> {
    if let Some(w) = &cfg.point_weights {
        if w.len() != n {
            return Err(Error::InvalidConfig(format!(
                "point_weights length {} does not match source count {n}",
                w.len()
            )));
        }
        if let Some(bad) = w.iter().find(|&&x| !(x >= 0.0)) {
            return Err(Error::InvalidConfig(format!("negative point weight {bad}")));
        }
    }
    Ok(())
}

/// Builds the frozen kernel weights of one iteration.
///
/// Each in-front source pairs with up to [`KERNEL_NEIGHBORS`] targets inside
/// `KERNEL_TRUNCATION * ell`; a source with no target in range keeps its
/// single nearest neighbor so it still pulls toward the target set.
/// Pair order is ascending source index, then ascending distance, which
/// fixes the summation order bit for bit.
pub fn irls_weights(
    src: &PointSet3D,
    pose: &Pose,
    cam: &CameraIntrinsics,
    index: &TargetIndex,
    cfg: &KernelConfig,
) -> Result<WeightedPairs> {
    if src.is_empty() {
        return Err(Error::EmptySourceSet);
    }
    validate_weights(cfg, src.len())?;
    if !(cfg.ell > 0.0) {
        return Err(Error::InvalidConfig(format!("kernel width must be positive, got {}", cfg.ell)));
    }
    let mut out = WeightedPairs::default();
    let radius = KERNEL_TRUNCATION * cfg.ell;
    let mut buf: Vec<(usize, f64)> = Vec::with_capacity(KERNEL_NEIGHBORS);
    for (i, p) in src.points.iter().enumerate() {
        let proj = match project(pose, p, cam) {
            Ok(q) => q,
            Err(_) => {
                out.excluded.push(i);
                continue;
            }
        };
        index.nearest_within(&proj, KERNEL_NEIGHBORS, radius, &mut buf);
        if buf.is_empty() {
            let (j, d2) = index.nearest(&proj);
            buf.push((j, d2));
        }
        let wi = point_weight(cfg, i);
        out.nearest_sq.push(buf[0].1);
        for &(j, d2) in &buf {
            let w = wi * gaussian_kernel(d2, cfg.ell);
            out.pairs.push(WeightedPair { source: i, target: j, weight: w, sq_dist: d2 });
            out.e_data += w;
            out.weighted_ls += w * d2;
        }
    }
    Ok(out)
}

/// Kernel energy of `pose`, with neighbors and kernel values taken at that
/// pose and the initial-pose term anchored at `t0`.
pub fn rkhs_energy(
    src: &PointSet3D,
    pose: &Pose,
    cam: &CameraIntrinsics,
    index: &TargetIndex,
    cfg: &KernelConfig,
    t0: &Pose,
) -> Result<EnergyBreakdown> {
    let pairs = irls_weights(src, pose, cam, index, cfg)?;
    Ok(EnergyBreakdown {
        e_data: pairs.e_data,
        e_init: se3_distance(t0, pose)?,
        weighted_ls: pairs.weighted_ls,
    })
}

/// Kernel energy over a fixed pairing, reprojecting the sources at `pose`.
///
/// Used where the correspondence set must not change between iterations;
/// pairs whose source falls behind the camera contribute nothing.
pub fn rkhs_energy_frozen(
    src: &PointSet3D,
    pose: &Pose,
    cam: &CameraIntrinsics,
    targets: &PointSet2D,
    pairs: &[(usize, usize)],
    cfg: &KernelConfig,
) -> Result<f64> {
    validate_weights(cfg, src.len())?;
    let mut e = 0.0;
    for &(i, j) in pairs {
        let Ok(q) = project(pose, &src.points[i], cam) else { continue };
        let d: Vector2<f64> = q - targets.points[j];
        e += point_weight(cfg, i) * gaussian_kernel(d.norm_squared(), cfg.ell);
    }
    Ok(e)
}

/// Kernel width for a given iteration of the coarse-to-fine schedule.
///
/// Iteration 0 sets `ell^2` to the largest initial squared distance, so
/// `ell` starts at the worst initial distance; the width then halves every
/// `shrink_period` iterations and never drops below `ell_floor`.
pub fn update_scale(
    cfg: &KernelConfig,
    iteration: usize,
    initial_sq_distances: &[f64],
) -> Result<KernelConfig> {
    if initial_sq_distances.is_empty() {
        return Err(Error::InvalidConfig(
            "scale schedule needs at least one initial distance".to_string(),
        ));
    }
    if !(cfg.ell_floor > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "ell_floor must be positive, got {}",
            cfg.ell_floor
        )));
    }
    let max_sq = initial_sq_distances.iter().cloned().fold(0.0_f64, f64::max);
    let ell0 = max_sq.sqrt().max(cfg.ell_floor);
    let halvings = if cfg.shrink_period == 0 { 0 } else { (iteration / cfg.shrink_period) as i32 };
    let ell = (ell0 * 0.5_f64.powi(halvings)).max(cfg.ell_floor);
    Ok(KernelConfig { ell, ..cfg.clone() })
}
