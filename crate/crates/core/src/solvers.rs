//! Pose solvers: damped Gauss-Newton steps on SE(3), the kernel-objective
//! registration loop with its coarse-to-fine schedule, a rotation-only
//! variant, and a closest-point Euclidean baseline.
//!
//! All solvers share the same step machinery: a residual builder assembles
//! the normal equations of a frozen linearization, `lm_step` solves them
//! under Levenberg damping, and the outer loops decide acceptance. The
//! kernel loop judges candidates purely by the kernel correspondence mass
//! `e_data`, so accepted steps never decrease it at a fixed kernel width.

use std::time::Instant;

use nalgebra::{Matrix2x3, Matrix3, Matrix6, SMatrix, Vector2, Vector3, Vector6};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::liegeo::{
    adjoint, exp_map, log_map, project, se3_distance, se3_left_jacobian_inv, skew, so3_exp,
    CameraIntrinsics, Pose, Twist, MIN_DEPTH,
};
use crate::metrics::median;
use crate::objectives::{
    gaussian_kernel, irls_weights, update_scale, KernelConfig, LossKind, WeightedPair,
    WeightedPairs,
};
use crate::points::{PointSet2D, PointSet3D};
use crate::spatial::{build_index, closest_point_search, Correspondence, TargetIndex};

/// Damping never leaves this range.
const MIN_DAMPING: f64 = 1e-12;
const MAX_DAMPING: f64 = 1e12;

/// Singular-system retries before giving up on a step.
const MAX_DAMPING_ESCALATIONS: usize = 3;

/// Candidates whose mean depth exceeds this multiple of the initial mean
/// depth are rejected outright.
const DEPTH_GUARD_FACTOR: f64 = 10.0;

/// Outer-loop parameters shared by all solvers.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverConfig {
    pub max_outer_iterations: usize,
    pub lm_initial_damping: f64,
    /// Multiplier applied to damping after a failed or singular step.
    pub lm_damping_up: f64,
    /// Multiplier applied after a successful step.
    pub lm_damping_down: f64,
    /// Stop when an accepted update twist is shorter than this.
    pub twist_tolerance: f64,
    /// Stop on this relative energy change once the schedule has bottomed
    /// out.
    pub energy_tolerance: f64,
    /// Consecutive rejections before the kernel width is forced down.
    pub max_rejected_steps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_outer_iterations: 50,
            lm_initial_damping: 1e-3,
            lm_damping_up: 10.0,
            lm_damping_down: 0.1,
            twist_tolerance: 1e-7,
            energy_tolerance: 1e-5,
            max_rejected_steps: 5,
        }
    }
}

impl SolverConfig {
    fn validate(&self) -> Result<()> {
        if self.max_outer_iterations == 0 {
            return Err(Error::InvalidConfig("max_outer_iterations must be positive".into()));
        }
        if !(self.lm_initial_damping > 0.0) {
            return Err(Error::InvalidConfig("initial damping must be positive".into()));
        }
        if !(self.lm_damping_up > 1.0) || !(self.lm_damping_down > 0.0 && self.lm_damping_down < 1.0) {
            return Err(Error::InvalidConfig(
                "damping factors must bracket 1: up > 1, 0 < down < 1".into(),
            ));
        }
        if !(self.twist_tolerance > 0.0) || !(self.energy_tolerance > 0.0) {
            return Err(Error::InvalidConfig("tolerances must be positive".into()));
        }
        if self.max_rejected_steps == 0 {
            return Err(Error::InvalidConfig("max_rejected_steps must be positive".into()));
        }
        Ok(())
    }
}

/// Why a registration loop stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIterations,
    Degenerate,
}

/// One outer-iteration row of a registration run.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TraceRecord {
    pub iteration: usize,
    /// Objective value after this iteration's accept/reject decision.
    pub e_data: f64,
    /// Squared twist distance from the initial pose.
    pub e_init: f64,
    /// Kernel width, absent for the Euclidean baseline.
    pub ell: Option<f64>,
    /// Median closest-point distance, pixels.
    pub median_tre: f64,
    pub accepted: bool,
    /// Sources excluded for projecting behind the camera.
    pub excluded: usize,
}

/// Outcome of a registration run.
#[derive(Debug, Clone, Serialize)]
pub struct RegistrationResult {
    pub pose: Pose,
    pub trace: Vec<TraceRecord>,
    pub termination: Termination,
    pub iterations: usize,
    /// Wall time of the solve; excluded from serialized output so reruns
    /// with one seed produce identical bytes.
    #[serde(skip)]
    pub wall_time_ms: f64,
}

/// Normal equations of one linearization: `jtj x = -jtr` with value `ls`.
#[derive(Debug, Clone)]
pub struct NormalSystem {
    pub jtj: Matrix6<f64>,
    pub jtr: Vector6<f64>,
    /// Objective value at the linearization pose. The gradient of the
    /// builder's objective is `2 * jtr`.
    pub ls: f64,
}

impl NormalSystem {
    fn zero() -> Self {
        Self { jtj: Matrix6::zeros(), jtr: Vector6::zeros(), ls: 0.0 }
    }
}

/// Degrees of freedom a step is allowed to move.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DofMask {
    Full,
    /// Translation stays bit-for-bit fixed; only the rotation updates.
    RotationOnly,
}

/// Source of normal equations for [`lm_step`].
pub trait ResidualBuilder {
    /// Normal equations at `pose`, residuals and weights frozen there.
    fn system(&self, pose: &Pose) -> Result<NormalSystem>;

    /// The builder's objective at an arbitrary pose, on the same frozen
    /// pairing. Infinite when the pose is not evaluable.
    fn ls_value(&self, pose: &Pose) -> Result<f64>;
}

/// Result of one damped step.
#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub candidate: Pose,
    pub delta: Twist,
    /// Damping to carry into the next step.
    pub next_damping: f64,
    pub ls_before: f64,
    pub ls_after: f64,
}

/// Residual rows of the pinhole projection at `pose`, as `jtj/jtr/ls`
/// contributions. Returns false when the point is behind the camera.
fn accumulate_projection(
    sys: &mut NormalSystem,
    pose: &Pose,
    p: &Vector3<f64>,
    q: &Vector2<f64>,
    w: f64,
    cam: &CameraIntrinsics,
) -> bool {
    let pc = pose.transform(p);
    if pc.z <= MIN_DEPTH {
        return false;
    }
    let iz = 1.0 / pc.z;
    let u = Vector2::new(cam.fx * pc.x * iz + cam.cx, cam.fy * pc.y * iz + cam.cy);
    let jp = Matrix2x3::new(
        cam.fx * iz,
        0.0,
        -cam.fx * pc.x * iz * iz,
        0.0,
        cam.fy * iz,
        -cam.fy * pc.y * iz * iz,
    );
    // Motion model: candidate = exp(delta) * pose, so dPc/ddelta = [I | -Pc^].
    let mut j = SMatrix::<f64, 2, 6>::zeros();
    j.fixed_view_mut::<2, 3>(0, 0).copy_from(&jp);
    j.fixed_view_mut::<2, 3>(0, 3).copy_from(&(-jp * skew(&pc)));
    let r = u - q;
    sys.jtj += w * j.transpose() * j;
    sys.jtr += w * j.transpose() * r;
    sys.ls += w * r.norm_squared();
    true
}

/// Initial-pose penalty rows: `lambda * |log(anchor^-1 pose)|^2` linearized
/// through the left Jacobian of the relative twist.
fn accumulate_prior(sys: &mut NormalSystem, pose: &Pose, anchor: &Pose, lambda: f64) -> Result<()> {
    if lambda == 0.0 {
        return Ok(());
    }
    let anchor_inv = anchor.inverse();
    let xi = log_map(&anchor_inv.compose(pose))?;
    let v = xi.as_vector();
    let jp = se3_left_jacobian_inv(&xi) * adjoint(&anchor_inv);
    sys.jtj += lambda * jp.transpose() * jp;
    sys.jtr += lambda * (jp.transpose() * v);
    sys.ls += lambda * v.norm_squared();
    Ok(())
}

/// Anchor and weight of the initial-pose penalty.
#[derive(Debug, Clone, Copy)]
pub struct PriorTerm<'a> {
    pub anchor: &'a Pose,
    pub lambda: f64,
}

/// Frozen-weight linearization of the kernel objective.
pub struct KernelResiduals<'a> {
    pub src: &'a PointSet3D,
    pub targets: &'a PointSet2D,
    pub cam: &'a CameraIntrinsics,
    pub pairs: &'a [WeightedPair],
    pub prior: Option<PriorTerm<'a>>,
}

impl ResidualBuilder for KernelResiduals<'_> {
    fn system(&self, pose: &Pose) -> Result<NormalSystem> {
        let mut sys = NormalSystem::zero();
        for pair in self.pairs {
            accumulate_projection(
                &mut sys,
                pose,
                &self.src.points[pair.source],
                &self.targets.points[pair.target],
                pair.weight,
                self.cam,
            );
        }
        if let Some(p) = self.prior {
            accumulate_prior(&mut sys, pose, p.anchor, p.lambda)?;
        }
        Ok(sys)
    }

    fn ls_value(&self, pose: &Pose) -> Result<f64> {
        let mut ls = 0.0;
        for pair in self.pairs {
            let Ok(u) = project(pose, &self.src.points[pair.source], self.cam) else {
                return Ok(f64::INFINITY);
            };
            let r: Vector2<f64> = u - self.targets.points[pair.target];
            ls += pair.weight * r.norm_squared();
        }
        if let Some(p) = self.prior {
            if p.lambda > 0.0 {
                match log_map(&p.anchor.inverse().compose(pose)) {
                    Ok(xi) => ls += p.lambda * xi.as_vector().norm_squared(),
                    Err(_) => return Ok(f64::INFINITY),
                }
            }
        }
        Ok(ls)
    }
}

/// Robust linearization of the closest-point baseline. IRLS weights are
/// frozen at the pairing's distances; the objective is the robust loss.
pub struct EuclideanResiduals<'a> {
    pub src: &'a PointSet3D,
    pub targets: &'a PointSet2D,
    pub cam: &'a CameraIntrinsics,
    pub pairs: &'a [Correspondence],
    pub loss: LossKind,
    weights: Vec<f64>,
}

impl<'a> EuclideanResiduals<'a> {
    pub fn new(
        src: &'a PointSet3D,
        targets: &'a PointSet2D,
        cam: &'a CameraIntrinsics,
        pairs: &'a [Correspondence],
        loss: LossKind,
    ) -> Self {
        let weights = pairs.iter().map(|p| loss.weight(p.sq_dist.sqrt())).collect();
        Self { src, targets, cam, pairs, loss, weights }
    }
}

impl ResidualBuilder for EuclideanResiduals<'_> {
    fn system(&self, pose: &Pose) -> Result<NormalSystem> {
        let mut sys = NormalSystem::zero();
        for (pair, &w) in self.pairs.iter().zip(&self.weights) {
            accumulate_projection(
                &mut sys,
                pose,
                &self.src.points[pair.source],
                &self.targets.points[pair.target],
                w,
                self.cam,
            );
        }
        // Damping and acceptance compare the robust loss, not the
        // frozen-weight quadratic.
        sys.ls = self.ls_value(pose)?;
        Ok(sys)
    }

    fn ls_value(&self, pose: &Pose) -> Result<f64> {
        let mut ls = 0.0;
        for pair in self.pairs {
            let Ok(u) = project(pose, &self.src.points[pair.source], self.cam) else {
                return Ok(f64::INFINITY);
            };
            let r: Vector2<f64> = u - self.targets.points[pair.target];
            ls += self.loss.value(r.norm());
        }
        Ok(ls)
    }
}

/// Reduction from a rotation-only update to the full twist: a rotation
/// delta phi corresponds to the twist (t x phi, phi), which leaves the
/// translation fixed to first order. The candidate pins it exactly.
fn rotation_reduction(t: &Vector3<f64>) -> SMatrix<f64, 6, 3> {
    let mut b = SMatrix::<f64, 6, 3>::zeros();
    b.fixed_view_mut::<3, 3>(0, 0).copy_from(&skew(t));
    b.fixed_view_mut::<3, 3>(3, 0).copy_from(&Matrix3::identity());
    b
}

/// One Levenberg step: solve the damped normal equations, apply the update
/// on the left, and propose the next damping from the objective change.
///
/// A singular system escalates damping up to three times before failing
/// with a degenerate-geometry error.
pub fn lm_step(
    pose: &Pose,
    builder: &dyn ResidualBuilder,
    mask: DofMask,
    damping: f64,
    scfg: &SolverConfig,
) -> Result<LmOutcome> {
    let sys = builder.system(pose)?;
    let mut mu = damping.clamp(MIN_DAMPING, MAX_DAMPING);
    let mut escalations = 0usize;
    let (delta, candidate) = loop {
        let solved = match mask {
            DofMask::Full => {
                let mut a = sys.jtj;
                for i in 0..6 {
                    a[(i, i)] += mu;
                }
                nalgebra::linalg::Cholesky::new(a).map(|ch| {
                    let d = ch.solve(&(-sys.jtr));
                    let tw = Twist::from_vector(&d);
                    let cand = exp_map(&tw).compose(pose);
                    (tw, cand)
                })
            }
            DofMask::RotationOnly => {
                let b = rotation_reduction(&pose.translation);
                let mut a = b.transpose() * sys.jtj * b;
                for i in 0..3 {
                    a[(i, i)] += mu;
                }
                let rhs = -(b.transpose() * sys.jtr);
                nalgebra::linalg::Cholesky::new(a).map(|ch| {
                    let phi = ch.solve(&rhs);
                    let tw = Twist { rho: Vector3::zeros(), phi };
                    let cand = Pose::new(so3_exp(&phi) * pose.rotation, pose.translation);
                    (tw, cand)
                })
            }
        };
        match solved {
            Some(x) => break x,
            None => {
                escalations += 1;
                if escalations > MAX_DAMPING_ESCALATIONS {
                    return Err(Error::DegenerateGeometry(
                        "normal equations stay singular after repeated damping increases"
                            .to_string(),
                    ));
                }
                mu *= scfg.lm_damping_up;
            }
        }
    };
    let ls_after = builder.ls_value(&candidate)?;
    let next_damping = if ls_after < sys.ls {
        (mu * scfg.lm_damping_down).max(MIN_DAMPING)
    } else {
        (mu * scfg.lm_damping_up).min(MAX_DAMPING)
    };
    Ok(LmOutcome { candidate, delta, next_damping, ls_before: sys.ls, ls_after })
}

/// Kernel-objective registration over all degrees of freedom.
///
/// Outer loop: freeze kernel weights at the current pose, take one damped
/// step, rebuild the pairing at the candidate, and accept only when the
/// kernel mass `e_data` does not drop. Five consecutive rejections pull the
/// kernel width down early; at the width floor they end the run.
pub fn irls_register(
    src: &PointSet3D,
    targets: &PointSet2D,
    cam: &CameraIntrinsics,
    t0: &Pose,
    kcfg: &KernelConfig,
    scfg: &SolverConfig,
) -> Result<RegistrationResult> {
    kernel_register_impl(src, targets, cam, t0, kcfg, scfg, DofMask::Full, None)
}

/// Kernel-objective registration that only moves the rotation. The
/// translation of `t0` is preserved bit for bit.
pub fn rotation_only_register(
    src: &PointSet3D,
    targets: &PointSet2D,
    cam: &CameraIntrinsics,
    t0: &Pose,
    kcfg: &KernelConfig,
    scfg: &SolverConfig,
) -> Result<RegistrationResult> {
    kernel_register_impl(src, targets, cam, t0, kcfg, scfg, DofMask::RotationOnly, None)
}

/// Kernel-objective registration over a fixed pairing: the source-target
/// assignment never changes, while the kernel weights track the pose.
pub fn frozen_pairs_register(
    src: &PointSet3D,
    targets: &PointSet2D,
    cam: &CameraIntrinsics,
    t0: &Pose,
    pairing: &[(usize, usize)],
    kcfg: &KernelConfig,
    scfg: &SolverConfig,
) -> Result<RegistrationResult> {
    kernel_register_impl(src, targets, cam, t0, kcfg, scfg, DofMask::Full, Some(pairing))
}

fn median_from_sq(sq: &[f64]) -> f64 {
    let d: Vec<f64> = sq.iter().map(|x| x.sqrt()).collect();
    median(&d).unwrap_or(0.0)
}

/// Mean depth of the transformed sources over in-front points; infinite
/// when every point is behind the camera.
fn mean_depth(src: &PointSet3D, pose: &Pose) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for p in &src.points {
        let z = pose.transform(p).z;
        if z > MIN_DEPTH {
            sum += z;
            n += 1;
        }
    }
    if n == 0 {
        f64::INFINITY
    } else {
        sum / n as f64
    }
}

/// Weights for a fixed pairing: kernel values at the current distances.
fn frozen_weights(
    src: &PointSet3D,
    targets: &PointSet2D,
    cam: &CameraIntrinsics,
    pose: &Pose,
    pairing: &[(usize, usize)],
    cfg: &KernelConfig,
) -> Result<WeightedPairs> {
    let mut out = WeightedPairs::default();
    for &(i, j) in pairing {
        let Ok(q) = project(pose, &src.points[i], cam) else {
            out.excluded.push(i);
            continue;
        };
        let d: Vector2<f64> = q - targets.points[j];
        let d2 = d.norm_squared();
        let wi = match &cfg.point_weights {
            Some(w) => w[i],
            None => 1.0,
        };
        let w = wi * gaussian_kernel(d2, cfg.ell);
        out.pairs.push(WeightedPair { source: i, target: j, weight: w, sq_dist: d2 });
        out.e_data += w;
        out.weighted_ls += w * d2;
        out.nearest_sq.push(d2);
    }
    Ok(out)
}

fn build_weights(
    src: &PointSet3D,
    pose: &Pose,
    cam: &CameraIntrinsics,
    targets: &PointSet2D,
    index: Option<&TargetIndex>,
    pairing: Option<&[(usize, usize)]>,
    cfg: &KernelConfig,
) -> Result<WeightedPairs> {
    match (pairing, index) {
        (Some(p), _) => frozen_weights(src, targets, cam, pose, p, cfg),
        (None, Some(ix)) => irls_weights(src, pose, cam, ix, cfg),
        (None, None) => unreachable!("rebuild mode always carries an index"),
    }
}

#[allow(clippy::too_many_arguments)]
fn kernel_register_impl(
    src: &PointSet3D,
    targets: &PointSet2D,
    cam: &CameraIntrinsics,
    t0: &Pose,
    kcfg: &KernelConfig,
    scfg: &SolverConfig,
    mask: DofMask,
    pairing: Option<&[(usize, usize)]>,
) -> Result<RegistrationResult> {
    let start = Instant::now();
    scfg.validate()?;
    if src.is_empty() {
        return Err(Error::EmptySourceSet);
    }
    if targets.is_empty() {
        return Err(Error::EmptyTargetSet);
    }
    if let Some(p) = pairing {
        if p.is_empty() {
            return Err(Error::InvalidConfig("fixed pairing must be nonempty".to_string()));
        }
    }
    let index = if pairing.is_none() { Some(build_index(targets)?) } else { None };

    // Scale schedule and depth guard both key off the state at t0.
    let init_weights = {
        let cfg0 = KernelConfig { ell: 1.0, ..kcfg.clone() };
        build_weights(src, t0, cam, targets, index.as_ref(), pairing, &cfg0)?
    };
    if init_weights.nearest_sq.is_empty() {
        return Err(Error::DegenerateGeometry(
            "all source points project behind the camera at the initial pose".to_string(),
        ));
    }
    let init_sq = init_weights.nearest_sq.clone();
    let init_depth = mean_depth(src, t0);

    let mut pose = t0.clone();
    let mut damping = scfg.lm_initial_damping;
    let mut rejected_streak = 0usize;
    let mut extra_halvings = 0usize;
    let mut trace: Vec<TraceRecord> = Vec::new();
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0usize;
    // Weights valid at (ell, current pose), reused across rejected steps.
    let mut cache: Option<(f64, WeightedPairs)> = None;

    for k in 0..scfg.max_outer_iterations {
        iterations = k + 1;
        let cfg_k = update_scale(kcfg, k + extra_halvings * kcfg.shrink_period, &init_sq)?;
        let weights = match cache.take() {
            Some((ell, w)) if ell == cfg_k.ell => w,
            _ => build_weights(src, &pose, cam, targets, index.as_ref(), pairing, &cfg_k)?,
        };
        if weights.pairs.is_empty() {
            return Err(Error::DegenerateGeometry(
                "all source points project behind the camera".to_string(),
            ));
        }
        let e_before = weights.e_data;
        let tre_before = median_from_sq(&weights.nearest_sq);

        let builder = KernelResiduals {
            src,
            targets,
            cam,
            pairs: &weights.pairs,
            prior: Some(PriorTerm { anchor: t0, lambda: cfg_k.lambda }),
        };
        let step = match lm_step(&pose, &builder, mask, damping, scfg) {
            Ok(s) => s,
            Err(Error::DegenerateGeometry(msg)) => {
                if k == 0 {
                    return Err(Error::DegenerateGeometry(msg));
                }
                termination = Termination::Degenerate;
                break;
            }
            Err(e) => return Err(e),
        };
        damping = step.next_damping;

        let guard_ok = mean_depth(src, &step.candidate) <= DEPTH_GUARD_FACTOR * init_depth;
        let cand_weights =
            build_weights(src, &step.candidate, cam, targets, index.as_ref(), pairing, &cfg_k)?;
        let e_cand = cand_weights.e_data;
        let accepted = guard_ok && !cand_weights.pairs.is_empty() && e_cand >= e_before;

        let (e_now, tre_now, excluded_now);
        if accepted {
            pose = step.candidate.clone();
            e_now = e_cand;
            tre_now = median_from_sq(&cand_weights.nearest_sq);
            excluded_now = cand_weights.excluded.len();
            cache = Some((cfg_k.ell, cand_weights));
            rejected_streak = 0;
        } else {
            e_now = e_before;
            tre_now = tre_before;
            excluded_now = weights.excluded.len();
            cache = Some((cfg_k.ell, weights));
            rejected_streak += 1;
        }
        trace.push(TraceRecord {
            iteration: k,
            e_data: e_now,
            e_init: se3_distance(t0, &pose).unwrap_or(f64::INFINITY),
            ell: Some(cfg_k.ell),
            median_tre: tre_now,
            accepted,
            excluded: excluded_now,
        });

        let at_floor = cfg_k.ell <= kcfg.ell_floor;
        if accepted && step.delta.norm() < scfg.twist_tolerance {
            termination = Termination::Converged;
            break;
        }
        if accepted {
            // A scale that stops paying energy is exhausted: finish at the
            // floor, otherwise move the schedule to the next width early.
            let rel = (e_cand - e_before).abs() / e_before.abs().max(1.0);
            if rel < scfg.energy_tolerance {
                if at_floor {
                    termination = Termination::Converged;
                    break;
                }
                extra_halvings += 1;
                cache = None;
            }
        }
        if rejected_streak >= scfg.max_rejected_steps {
            if at_floor {
                termination = Termination::Converged;
                break;
            }
            // Pull the schedule forward instead of burning iterations.
            extra_halvings += 1;
            rejected_streak = 0;
            cache = None;
        }
    }

    Ok(RegistrationResult {
        pose,
        trace,
        termination,
        iterations,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// Closest-point baseline: rebuild the 1-NN pairing every iteration and
/// descend the squared or Huber loss. No initial-pose penalty.
pub fn dticp_register(
    src: &PointSet3D,
    targets: &PointSet2D,
    cam: &CameraIntrinsics,
    t0: &Pose,
    loss: LossKind,
    scfg: &SolverConfig,
) -> Result<RegistrationResult> {
    let start = Instant::now();
    scfg.validate()?;
    if src.is_empty() {
        return Err(Error::EmptySourceSet);
    }
    let index = build_index(targets)?;

    let mut pose = t0.clone();
    let mut damping = scfg.lm_initial_damping;
    let mut rejected_streak = 0usize;
    let mut trace: Vec<TraceRecord> = Vec::new();
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0usize;
    let mut prev_energy: Option<f64> = None;

    for k in 0..scfg.max_outer_iterations {
        iterations = k + 1;
        let projections: Vec<Option<Vector2<f64>>> =
            src.points.iter().map(|p| project(&pose, p, cam).ok()).collect();
        let corr = closest_point_search(&index, &projections, k);
        if corr.pairs.is_empty() {
            return Err(Error::DegenerateGeometry(
                "all source points project behind the camera".to_string(),
            ));
        }
        let distances = corr.distances();
        let tre = median(&distances).unwrap_or(0.0);

        let builder = EuclideanResiduals::new(src, targets, cam, &corr.pairs, loss);
        let step = match lm_step(&pose, &builder, DofMask::Full, damping, scfg) {
            Ok(s) => s,
            Err(Error::DegenerateGeometry(msg)) => {
                if k == 0 {
                    return Err(Error::DegenerateGeometry(msg));
                }
                termination = Termination::Degenerate;
                break;
            }
            Err(e) => return Err(e),
        };
        damping = step.next_damping;

        let accepted = step.ls_after < step.ls_before;
        if accepted {
            pose = step.candidate.clone();
            rejected_streak = 0;
        } else {
            rejected_streak += 1;
        }
        let e_now = if accepted { step.ls_after } else { step.ls_before };
        trace.push(TraceRecord {
            iteration: k,
            e_data: e_now,
            e_init: se3_distance(t0, &pose).unwrap_or(f64::INFINITY),
            ell: None,
            median_tre: tre,
            accepted,
            excluded: corr.excluded.len(),
        });

        if accepted && step.delta.norm() < scfg.twist_tolerance {
            termination = Termination::Converged;
            break;
        }
        if let Some(prev) = prev_energy {
            if accepted && (prev - e_now).abs() <= scfg.energy_tolerance * prev.abs().max(1.0) {
                termination = Termination::Converged;
                break;
            }
        }
        prev_energy = Some(e_now);
        if rejected_streak >= scfg.max_rejected_steps {
            termination = Termination::Converged;
            break;
        }
    }

    Ok(RegistrationResult {
        pose,
        trace,
        termination,
        iterations,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}
