//! Synthetic experiment scenes: a planar square path, random trees of
//! cubic segments, pose disturbances, and the rotation-translation
//! ambiguity demonstration.
//!
//! All scenes use a 1024 x 1024 camera with focal length 520 and the
//! principal point at the center; the ground-truth pose is the identity,
//! so targets are the projections of the sources.

use std::collections::HashSet;

use nalgebra::{Vector2, Vector3, Vector6};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::liegeo::{exp_map, project, so3_exp, CameraIntrinsics, Pose, Twist};
use crate::points::{PointSet2D, PointSet3D};

/// Minimum mean-depth to lateral-radius ratio for ambiguity scenes.
pub const MIN_DEPTH_RATIO: f64 = 1.5;

/// Depth must dominate lateral extent by this factor in tree scenes.
const TREE_DEPTH_DOMINANCE: f64 = 5.0;

/// Camera shared by all synthetic scenes.
pub fn default_camera() -> CameraIntrinsics {
    CameraIntrinsics::new(520.0, 520.0, 512.0, 512.0, 1024.0, 1024.0)
        .expect("static intrinsics are valid")
}

/// One curve segment of a tree scene.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Segment {
    /// Half-open sample range in the source cloud.
    pub start: usize,
    pub end: usize,
    pub parent: Option<usize>,
    pub leaf: bool,
    /// Structural node id at the segment's end point, internal segments
    /// only.
    pub node_label: Option<i64>,
}

/// A generated scene: 3D sources, their 2D projections, and provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub camera: CameraIntrinsics,
    pub ground_truth: Pose,
    pub source: PointSet3D,
    pub targets: PointSet2D,
    /// Source index that produced each target row.
    pub target_source_indices: Vec<usize>,
    /// Tree topology; empty for square scenes.
    pub segments: Vec<Segment>,
    /// Leaf segments whose targets were removed, if any.
    pub pruned_segments: Vec<usize>,
    pub seed: u64,
}

/// Per-axis Gaussian pose disturbance.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DisturbanceSpec {
    /// Standard deviation of each translation axis, scene units.
    pub sigma_translation: f64,
    /// Standard deviation of each rotation-vector axis, degrees.
    pub sigma_rotation_deg: f64,
}

/// Square path of side 5 at depth 10 to 15, walked counterclockwise from
/// (5, 0, 10). `count` points spaced evenly along the perimeter; must be a
/// positive multiple of 4.
pub fn make_square_scene(count: usize) -> Result<SyntheticScene> {
    let source = square_perimeter(
        count,
        &[
            Vector3::new(5.0, 0.0, 10.0),
            Vector3::new(10.0, 0.0, 10.0),
            Vector3::new(10.0, 0.0, 15.0),
            Vector3::new(5.0, 0.0, 15.0),
        ],
    )?;
    scene_from_source(source, Vec::new(), 0)
}

/// Square of the same size centered on the optical axis, placed so its
/// mean depth over its lateral radius equals `depth_ratio` exactly.
pub fn ambiguity_square(depth_ratio: f64, count: usize) -> Result<PointSet3D> {
    if !(depth_ratio >= MIN_DEPTH_RATIO) {
        return Err(Error::DepthRatio { ratio: depth_ratio, min: MIN_DEPTH_RATIO });
    }
    let half = 2.5;
    let zc = half * depth_ratio;
    square_perimeter(
        count,
        &[
            Vector3::new(-half, 0.0, zc - half),
            Vector3::new(half, 0.0, zc - half),
            Vector3::new(half, 0.0, zc + half),
            Vector3::new(-half, 0.0, zc + half),
        ],
    )
}

fn square_perimeter(count: usize, corners: &[Vector3<f64>; 4]) -> Result<PointSet3D> {
    if count < 4 || count % 4 != 0 {
        return Err(Error::InvalidConfig(format!(
            "square point count must be a positive multiple of 4, got {count}"
        )));
    }
    let side = (corners[1] - corners[0]).norm();
    let perimeter = 4.0 * side;
    let step = perimeter / count as f64;
    let points = (0..count)
        .map(|i| {
            let s = step * i as f64;
            let edge = ((s / side) as usize).min(3);
            let local = (s - side * edge as f64) / side;
            corners[edge] + (corners[(edge + 1) % 4] - corners[edge]) * local
        })
        .collect();
    Ok(PointSet3D::new(points))
}

fn scene_from_source(
    source: PointSet3D,
    segments: Vec<Segment>,
    seed: u64,
) -> Result<SyntheticScene> {
    let camera = default_camera();
    let ground_truth = Pose::identity();
    let mut targets = Vec::with_capacity(source.len());
    for p in &source.points {
        targets.push(project(&ground_truth, p, &camera)?);
    }
    let target_source_indices = (0..source.len()).collect();
    Ok(SyntheticScene {
        camera,
        ground_truth,
        source,
        targets: PointSet2D::new(targets),
        target_source_indices,
        segments,
        pruned_segments: Vec::new(),
        seed,
    })
}

struct RawSegment {
    a: Vector3<f64>,
    c1: Vector3<f64>,
    c2: Vector3<f64>,
    b: Vector3<f64>,
    dir_end: Vector3<f64>,
    parent: Option<usize>,
    children: usize,
}

fn bezier(s: &RawSegment, t: f64) -> Vector3<f64> {
    let u = 1.0 - t;
    s.a * (u * u * u) + s.c1 * (3.0 * u * u * t) + s.c2 * (3.0 * u * t * t) + s.b * (t * t * t)
}

fn grow_segment(
    a: Vector3<f64>,
    dir: Vector3<f64>,
    len: f64,
    parent: Option<usize>,
    rng: &mut ChaCha8Rng,
) -> RawSegment {
    let b = a + dir * len;
    let bow = |rng: &mut ChaCha8Rng| {
        Vector3::new(
            rng.gen_range(-0.15..0.15),
            rng.gen_range(-0.15..0.15),
            rng.gen_range(-0.08..0.08),
        ) * len
    };
    let c1 = a + dir * (len / 3.0) + bow(rng);
    let c2 = a + dir * (2.0 * len / 3.0) + bow(rng);
    let tangent = b - c2;
    let dir_end = if tangent.norm() > 0.0 { tangent.normalize() } else { dir };
    RawSegment { a, c1, c2, b, dir_end, parent, children: 0 }
}

fn branch_direction(parent_dir: &Vector3<f64>, rng: &mut ChaCha8Rng) -> Vector3<f64> {
    let mut d = parent_dir
        + Vector3::new(
            rng.gen_range(-0.55..0.55),
            rng.gen_range(-0.55..0.55),
            rng.gen_range(0.0..0.2),
        );
    if d.z < 0.25 {
        d.z = 0.25;
    }
    d.normalize()
}

/// Random tree of cubic segments growing away from the camera.
///
/// The tree starts at depth `depth_range.0`, bifurcates until it has
/// `branches` leaves, and is sampled to roughly 2000 points. Depths are
/// rescaled into `depth_range` and the lateral extent is clamped so depth
/// dominates it at least fivefold everywhere. Bifurcation points carry
/// nonzero labels; there are exactly `branches - 1` of them.
pub fn make_tree_scene(
    branches: usize,
    depth_range: (f64, f64),
    seed: u64,
) -> Result<SyntheticScene> {
    if branches < 2 {
        return Err(Error::InvalidConfig(format!(
            "a tree needs at least two branches, got {branches}"
        )));
    }
    if !(depth_range.0 > 0.0 && depth_range.1 > depth_range.0) {
        return Err(Error::InvalidConfig(format!(
            "depth range must satisfy 0 < near < far, got ({}, {})",
            depth_range.0, depth_range.1
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (zmin, zmax) = depth_range;
    let extent = zmax - zmin;

    let root_dir = Vector3::new(rng.gen_range(-0.12..0.12), rng.gen_range(-0.12..0.12), 1.0)
        .normalize();
    let root_len = extent * rng.gen_range(0.25..0.4);
    let mut segs =
        vec![grow_segment(Vector3::new(0.0, 0.0, zmin), root_dir, root_len, None, &mut rng)];
    let mut leaves = vec![0usize];
    while leaves.len() < branches {
        let pick = rng.gen_range(0..leaves.len());
        let parent = leaves.swap_remove(pick);
        segs[parent].children = 2;
        for _ in 0..2 {
            let dir = branch_direction(&segs[parent].dir_end.clone(), &mut rng);
            let len = extent * rng.gen_range(0.15..0.3);
            let child = grow_segment(segs[parent].b, dir, len, Some(parent), &mut rng);
            segs.push(child);
            leaves.push(segs.len() - 1);
        }
    }

    // Sample counts proportional to control-polygon length.
    let total = 1700 + rng.gen_range(0..=600) as usize;
    let lengths: Vec<f64> = segs
        .iter()
        .map(|s| (s.c1 - s.a).norm() + (s.c2 - s.c1).norm() + (s.b - s.c2).norm())
        .collect();
    let len_sum: f64 = lengths.iter().sum();
    let mut points: Vec<Vector3<f64>> = Vec::with_capacity(total + segs.len());
    let mut segments = Vec::with_capacity(segs.len());
    for (i, s) in segs.iter().enumerate() {
        let n = ((total as f64 * lengths[i] / len_sum) + 0.5).floor().max(6.0) as usize;
        let start = points.len();
        if s.parent.is_none() {
            points.push(s.a);
        }
        // Sampling in (0, 1] leaves each bifurcation point owned by its
        // parent segment alone.
        for k in 1..=n {
            points.push(bezier(s, k as f64 / n as f64));
        }
        segments.push(Segment {
            start,
            end: points.len(),
            parent: s.parent,
            leaf: s.children == 0,
            node_label: None,
        });
    }

    // Rescale depths into the requested range, then clamp the lateral
    // extent so every point keeps depth / lateral >= 5.
    let z_lo = points.iter().map(|p| p.z).fold(f64::INFINITY, f64::min);
    let z_hi = points.iter().map(|p| p.z).fold(f64::NEG_INFINITY, f64::max);
    let z_scale = extent / (z_hi - z_lo);
    for p in &mut points {
        p.z = zmin + (p.z - z_lo) * z_scale;
    }
    let max_lat = points
        .iter()
        .map(|p| (p.x * p.x + p.y * p.y).sqrt())
        .fold(0.0_f64, f64::max);
    let allowed = 0.98 * zmin / TREE_DEPTH_DOMINANCE;
    if max_lat > allowed {
        let s = allowed / max_lat;
        for p in &mut points {
            p.x *= s;
            p.y *= s;
        }
    }

    let mut labels = vec![0i64; points.len()];
    let mut node_id = 1i64;
    for (i, s) in segs.iter().enumerate() {
        if s.children > 0 {
            labels[segments[i].end - 1] = node_id;
            segments[i].node_label = Some(node_id);
            node_id += 1;
        }
    }
    let source = PointSet3D::with_labels(points, labels)?;
    scene_from_source(source, segments, seed)
}

/// Removes the 2D targets of `leaf_count` randomly chosen leaf segments.
/// The 3D source cloud is left untouched, modelling structure that is
/// present in 3D but missing from the 2D view.
pub fn prune_branches(
    scene: &SyntheticScene,
    leaf_count: usize,
    seed: u64,
) -> Result<SyntheticScene> {
    let leaves: Vec<usize> = scene
        .segments
        .iter()
        .enumerate()
        .filter(|(_, s)| s.leaf)
        .map(|(i, _)| i)
        .collect();
    if leaf_count > leaves.len() {
        return Err(Error::InvalidConfig(format!(
            "cannot prune {leaf_count} of {} leaf segments",
            leaves.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool = leaves;
    for i in 0..leaf_count {
        let j = rng.gen_range(i..pool.len());
        pool.swap(i, j);
    }
    let pruned: HashSet<usize> = pool[..leaf_count].iter().copied().collect();
    let mut drop = vec![false; scene.source.len()];
    for &si in &pruned {
        for idx in scene.segments[si].start..scene.segments[si].end {
            drop[idx] = true;
        }
    }
    let mut targets = Vec::new();
    let mut provenance = Vec::new();
    for (q, &si) in scene.targets.points.iter().zip(&scene.target_source_indices) {
        if !drop[si] {
            targets.push(*q);
            provenance.push(si);
        }
    }
    if targets.is_empty() {
        return Err(Error::EmptyTargetSet);
    }
    let mut pruned_sorted: Vec<usize> = pruned.into_iter().collect();
    pruned_sorted.sort_unstable();
    Ok(SyntheticScene {
        camera: scene.camera,
        ground_truth: scene.ground_truth.clone(),
        source: scene.source.clone(),
        targets: PointSet2D::new(targets),
        target_source_indices: provenance,
        segments: scene.segments.clone(),
        pruned_segments: pruned_sorted,
        seed: scene.seed,
    })
}

/// Gaussian disturbance: rotation noise composed on the left, translation
/// noise added. Rotation axes are drawn before translation axes.
pub fn perturb_pose<R: Rng>(pose: &Pose, spec: &DisturbanceSpec, rng: &mut R) -> Pose {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let sr = spec.sigma_rotation_deg.to_radians();
    let phi = Vector3::new(
        normal.sample(rng) * sr,
        normal.sample(rng) * sr,
        normal.sample(rng) * sr,
    );
    let dt = Vector3::new(
        normal.sample(rng) * spec.sigma_translation,
        normal.sample(rng) * spec.sigma_translation,
        normal.sample(rng) * spec.sigma_translation,
    );
    Pose::new(so3_exp(&phi) * pose.rotation, pose.translation + dt)
}

/// Disturbance drawn uniformly from the radius ball of twist space,
/// applied on the left.
pub fn perturb_pose_in_ball<R: Rng>(pose: &Pose, radius: f64, rng: &mut R) -> Pose {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut v = Vector6::zeros();
    for i in 0..6 {
        v[i] = normal.sample(rng);
    }
    let n = v.norm();
    if n > 0.0 {
        v *= radius * rng.gen::<f64>().powf(1.0 / 6.0) / n;
    }
    exp_map(&Twist::from_vector(&v)).compose(pose)
}

/// Disturbance whose reprojection displacement is about `radius_px` pixels.
///
/// The twist is drawn uniformly from a ball whose translation axes are
/// scaled by `mean_depth / f` and rotation axes by `1 / f`, so a radius
/// of one moves a point at the mean depth by roughly one pixel. This is
/// the disturbance model of the toy-model protocol: small enough that
/// nearest-projection pairings stay intact on sparse scenes.
pub fn perturb_pose_pixel_ball<R: Rng>(
    pose: &Pose,
    radius_px: f64,
    mean_depth: f64,
    camera: &CameraIntrinsics,
    rng: &mut R,
) -> Pose {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut v = Vector6::zeros();
    for i in 0..6 {
        v[i] = normal.sample(rng);
    }
    let n = v.norm();
    if n > 0.0 {
        v *= rng.gen::<f64>().powf(1.0 / 6.0) / n;
    }
    let f = 0.5 * (camera.fx + camera.fy);
    let rho = v.fixed_rows::<3>(0) * (radius_px * mean_depth / f);
    let phi = v.fixed_rows::<3>(3) * (radius_px / f);
    let mut xi = Vector6::zeros();
    xi.fixed_rows_mut::<3>(0).copy_from(&rho);
    xi.fixed_rows_mut::<3>(3).copy_from(&phi);
    exp_map(&Twist::from_vector(&xi)).compose(pose)
}

/// Mean depth over the largest lateral radius; infinite for on-axis sets.
pub fn scene_depth_ratio(points: &PointSet3D) -> f64 {
    if points.is_empty() {
        return f64::INFINITY;
    }
    let mean_z = points.points.iter().map(|p| p.z).sum::<f64>() / points.len() as f64;
    let max_lat = points
        .points
        .iter()
        .map(|p| (p.x * p.x + p.y * p.y).sqrt())
        .fold(0.0_f64, f64::max);
    if max_lat == 0.0 {
        f64::INFINITY
    } else {
        mean_z / max_lat
    }
}

/// How well a per-point rotation reproduces a translated view.
#[derive(Debug, Clone, Serialize)]
pub struct AmbiguityReport {
    /// Pixel motion caused by the translation, per point.
    pub displacement: Vec<f64>,
    /// Distance between the rotated and translated views, per point.
    pub residual: Vec<f64>,
    /// residual / displacement, zero where nothing moved.
    pub ratio: Vec<f64>,
    pub mean_ratio: f64,
    /// Shared roll angle fitted by line search.
    pub roll: f64,
    pub depth_ratio: f64,
}

/// Demonstrates the rotation-translation ambiguity: for each point, a
/// rotation with per-point pitch/yaw angles and one shared roll nearly
/// reproduces the translated projection when the scene is deep and narrow.
///
/// Pitch and yaw for point `p` are `-t_y / (p_z + t_z)` and
/// `t_x / (p_z + t_z)`; the roll is fitted on [-0.2, 0.2] by golden-section
/// search. Requires a depth ratio of at least 1.5.
pub fn ambiguity_demo(
    points: &PointSet3D,
    t: &Vector3<f64>,
    cam: &CameraIntrinsics,
) -> Result<AmbiguityReport> {
    if points.is_empty() {
        return Err(Error::EmptySourceSet);
    }
    let depth_ratio = scene_depth_ratio(points);
    if depth_ratio < MIN_DEPTH_RATIO {
        return Err(Error::DepthRatio { ratio: depth_ratio, min: MIN_DEPTH_RATIO });
    }
    let identity = Pose::identity();
    let translated = Pose::new(nalgebra::Matrix3::identity(), *t);
    let mut q_id = Vec::with_capacity(points.len());
    let mut q_t = Vec::with_capacity(points.len());
    let mut angles = Vec::with_capacity(points.len());
    for p in &points.points {
        q_id.push(project(&identity, p, cam)?);
        q_t.push(project(&translated, p, cam)?);
        let depth = p.z + t.z;
        angles.push((-t.y / depth, t.x / depth));
    }

    let rotated_view = |roll: f64, i: usize| -> Result<Vector2<f64>> {
        let (ax, ay) = angles[i];
        let rot = Pose::new(so3_exp(&Vector3::new(ax, ay, roll)), Vector3::zeros());
        project(&rot, &points.points[i], cam)
    };
    let objective = |roll: f64| -> f64 {
        let mut s = 0.0;
        for i in 0..points.len() {
            match rotated_view(roll, i) {
                Ok(q) => s += (q - q_t[i]).norm_squared(),
                Err(_) => return f64::INFINITY,
            }
        }
        s
    };
    let roll = golden_section_min(objective, -0.2, 0.2, 90);

    let mut displacement = Vec::with_capacity(points.len());
    let mut residual = Vec::with_capacity(points.len());
    let mut ratio = Vec::with_capacity(points.len());
    for i in 0..points.len() {
        let q_r = rotated_view(roll, i)?;
        let disp = (q_t[i] - q_id[i]).norm();
        let res = (q_r - q_t[i]).norm();
        displacement.push(disp);
        residual.push(res);
        ratio.push(if disp < 1e-12 { 0.0 } else { res / disp });
    }
    let mean_ratio = ratio.iter().sum::<f64>() / ratio.len() as f64;
    Ok(AmbiguityReport { displacement, residual, ratio, mean_ratio, roll, depth_ratio })
}

fn golden_section_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, iters: usize) -> f64 {
    let inv_phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..iters {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}
