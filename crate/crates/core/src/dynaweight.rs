//! Alternating full-set/subset refinement for distant scenes.
//!
//! Far from the camera, a small rotation and a small translation move the
//! projections almost identically, so plain descent stalls in poses that
//! trade one against the other. Each alternation here re-solves on a small
//! well-separated subset with its pairing frozen, which commits the pose to
//! one side of that trade, then re-solves on the full set. Progress is
//! measured by the median closest-point distance of the full set.

use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::liegeo::{project, CameraIntrinsics, Pose};
use crate::metrics::median_tre;
use crate::objectives::KernelConfig;
use crate::points::{PointSet2D, PointSet3D};
use crate::solvers::{frozen_pairs_register, irls_register, rotation_only_register, SolverConfig};
use crate::spatial::{build_index, closest_point_search, TargetIndex};

/// Minimum usable subset size.
const MIN_SUBSET: usize = 4;

/// How the refinement subset is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsetStrategy {
    /// Points with nonzero labels. Falls back to farthest-point sampling
    /// with k = 4 when fewer than 4 points are labeled.
    GraphNodes,
    /// Farthest-point sampling with k = max(8, n / 20) unless overridden.
    FarthestPointK,
}

#[derive(Debug, Clone, Serialize)]
pub struct AlternationConfig {
    /// Median closest-point distance (pixels) below which the pose is
    /// considered registered.
    pub tre_threshold: f64,
    pub max_alternations: usize,
    pub subset_strategy: SubsetStrategy,
    /// Overrides the farthest-point subset size.
    pub subset_size: Option<usize>,
    /// Solve on the full set before the subset within each alternation.
    pub full_set_first: bool,
}

impl Default for AlternationConfig {
    fn default() -> Self {
        Self {
            tre_threshold: 2.0,
            max_alternations: 20,
            subset_strategy: SubsetStrategy::GraphNodes,
            subset_size: None,
            full_set_first: true,
        }
    }
}

/// Outcome of an alternating registration.
#[derive(Debug, Clone, Serialize)]
pub struct DynaweightResult {
    /// Pose with the smallest observed median error.
    pub pose: Pose,
    /// Median closest-point distance at that pose, pixels.
    pub median_tre: f64,
    pub alternations: usize,
    /// Median error after initialization and after each alternation.
    pub tre_history: Vec<f64>,
    /// Whether the error threshold was reached.
    pub converged: bool,
    #[serde(skip)]
    pub wall_time_ms: f64,
}

/// Indices of the refinement subset, in selection order.
pub fn select_subset(
    src: &PointSet3D,
    strategy: SubsetStrategy,
    size: Option<usize>,
) -> Result<Vec<usize>> {
    if src.len() < MIN_SUBSET {
        return Err(Error::InsufficientSubset { needed: MIN_SUBSET, got: src.len() });
    }
    match strategy {
        SubsetStrategy::GraphNodes => {
            let labeled = src.labeled_indices();
            if labeled.len() >= MIN_SUBSET {
                Ok(labeled)
            } else {
                Ok(farthest_point_sample(src, MIN_SUBSET))
            }
        }
        SubsetStrategy::FarthestPointK => {
            let k = size.unwrap_or_else(|| (src.len() / 20).max(8));
            Ok(farthest_point_sample(src, k.clamp(MIN_SUBSET, src.len())))
        }
    }
}

/// Greedy farthest-point sampling in 3D, seeded at index 0. Distance ties
/// keep the lowest index.
fn farthest_point_sample(src: &PointSet3D, k: usize) -> Vec<usize> {
    let mut selected = Vec::with_capacity(k);
    selected.push(0usize);
    let mut dist: Vec<f64> =
        src.points.iter().map(|p| (p - src.points[0]).norm_squared()).collect();
    while selected.len() < k {
        let mut best = 0usize;
        let mut best_d = f64::NEG_INFINITY;
        for (i, &d) in dist.iter().enumerate() {
            if d > best_d {
                best_d = d;
                best = i;
            }
        }
        selected.push(best);
        for (i, d) in dist.iter_mut().enumerate() {
            *d = d.min((src.points[i] - src.points[best]).norm_squared());
        }
    }
    selected
}

fn full_set_tre(
    src: &PointSet3D,
    index: &TargetIndex,
    cam: &CameraIntrinsics,
    pose: &Pose,
    iteration: usize,
) -> Result<f64> {
    let projections: Vec<_> = src.points.iter().map(|p| project(pose, p, cam).ok()).collect();
    let corr = closest_point_search(index, &projections, iteration);
    median_tre(&corr)
}

/// Alternating registration: rotation-only initialization, then rounds of
/// full-set and frozen-pairing subset solves until the full-set median
/// error drops below the threshold.
///
/// Each inner solve is anchored at the pose it starts from, so the chain
/// stays warm-started. The best pose over the whole run is returned, which
/// may come from an earlier alternation than the last.
pub fn dynaweight_register(
    src: &PointSet3D,
    targets: &PointSet2D,
    cam: &CameraIntrinsics,
    t0: &Pose,
    kcfg: &KernelConfig,
    scfg: &SolverConfig,
    acfg: &AlternationConfig,
) -> Result<DynaweightResult> {
    let start = Instant::now();
    if !(acfg.tre_threshold > 0.0) {
        return Err(Error::InvalidConfig("tre_threshold must be positive".to_string()));
    }
    let subset_idx = select_subset(src, acfg.subset_strategy, acfg.subset_size)?;
    let subset = PointSet3D::new(subset_idx.iter().map(|&i| src.points[i]).collect());
    let index = build_index(targets)?;

    let mut pose = rotation_only_register(src, targets, cam, t0, kcfg, scfg)?.pose;
    let mut xi = full_set_tre(src, &index, cam, &pose, 0)?;
    let mut history = vec![xi];
    let mut best_pose = pose.clone();
    let mut best_xi = xi;
    let mut alternations = 0usize;

    while xi >= acfg.tre_threshold && alternations < acfg.max_alternations {
        alternations += 1;
        if acfg.full_set_first {
            pose = irls_register(src, targets, cam, &pose, kcfg, scfg)?.pose;
        }
        // Subset stage: freeze the pairing at the current pose so the
        // subset cannot re-match its way back into the stalemate.
        let projections: Vec<_> =
            subset.points.iter().map(|p| project(&pose, p, cam).ok()).collect();
        let corr = closest_point_search(&index, &projections, alternations);
        if corr.pairs.len() >= MIN_SUBSET {
            let pairing: Vec<(usize, usize)> =
                corr.pairs.iter().map(|c| (c.source, c.target)).collect();
            pose = frozen_pairs_register(&subset, targets, cam, &pose, &pairing, kcfg, scfg)?.pose;
        }
        if !acfg.full_set_first {
            pose = irls_register(src, targets, cam, &pose, kcfg, scfg)?.pose;
        }
        xi = full_set_tre(src, &index, cam, &pose, alternations)?;
        history.push(xi);
        if xi < best_xi {
            best_xi = xi;
            best_pose = pose.clone();
        }
    }

    Ok(DynaweightResult {
        pose: best_pose,
        median_tre: best_xi,
        alternations,
        tre_history: history,
        converged: best_xi < acfg.tre_threshold,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}
