//! Rigid transforms, pinhole projection, and the SE(3) Lie machinery the
//! solvers linearize against.
//!
//! Twists are stored as `(rho, phi)` with the translational part first; the
//! exponential and logarithm use the exact closed forms and switch to their
//! series limits below [`SMALL_ANGLE`]. Updates throughout the crate are
//! left-applied: a solver step maps `T` to `exp_map(delta) * T`.

use nalgebra::{Matrix3, Matrix6, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rotation angles below this use the series limit of exp/log.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Rotation logarithms are rejected within this margin of pi.
pub const CUT_LOCUS_MARGIN: f64 = 1e-6;

/// Minimum camera-frame depth accepted by the projection model.
pub const MIN_DEPTH: f64 = 1e-6;

/// Compositions between rotation renormalizations.
const RENORMALIZE_PERIOD: u32 = 50;

/// Element of se(3): translational part `rho`, rotational part `phi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Twist {
    pub rho: Vector3<f64>,
    pub phi: Vector3<f64>,
}

impl Twist {
    pub fn zero() -> Self {
        Self { rho: Vector3::zeros(), phi: Vector3::zeros() }
    }

    /// Packs into a 6-vector ordered `(rho, phi)`.
    pub fn as_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.rho.x, self.rho.y, self.rho.z, self.phi.x, self.phi.y, self.phi.z,
        )
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self {
            rho: Vector3::new(v[0], v[1], v[2]),
            phi: Vector3::new(v[3], v[4], v[5]),
        }
    }

    /// Euclidean norm of the stacked 6-vector.
    pub fn norm(&self) -> f64 {
        (self.rho.norm_squared() + self.phi.norm_squared()).sqrt()
    }
}

/// Rigid transform: orthonormal rotation plus translation.
///
/// A composition counter triggers a polar-decomposition renormalization of
/// the rotation every 50 compositions so long solver chains do not drift
/// from the manifold.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    #[serde(skip)]
    compositions: u32,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            compositions: 0,
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation, compositions: 0 }
    }

    /// Applies the transform to a point.
    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Group composition `self * other`, renormalizing the rotation once
    /// enough compositions have accumulated.
    pub fn compose(&self, other: &Pose) -> Pose {
        let mut out = Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
            compositions: self.compositions + other.compositions + 1,
        };
        if out.compositions >= RENORMALIZE_PERIOD {
            out.rotation = nearest_rotation(&out.rotation);
            out.compositions = 0;
        }
        out
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
            compositions: self.compositions,
        }
    }
}

/// Pinhole camera parameters in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
}

impl CameraIntrinsics {
    /// Validates `fx, fy > 0` and that the principal point lies inside the
    /// image rectangle.
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: f64, height: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "focal lengths must be positive, got fx={fx}, fy={fy}"
            )));
        }
        if !(width > 0.0 && height > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "image size must be positive, got {width}x{height}"
            )));
        }
        if !(0.0..=width).contains(&cx) || !(0.0..=height).contains(&cy) {
            return Err(Error::InvalidConfig(format!(
                "principal point ({cx}, {cy}) outside {width}x{height} image"
            )));
        }
        Ok(Self { fx, fy, cx, cy, width, height })
    }
}

/// Skew-symmetric matrix such that `skew(a) * b == a.cross(&b)`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Rodrigues formula; series limit below [`SMALL_ANGLE`].
pub fn so3_exp(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let px = skew(phi);
    if theta < SMALL_ANGLE {
        return Matrix3::identity() + px + px * px * 0.5;
    }
    let a = theta.sin() / theta;
    let b = one_minus_cos_over_sq(theta);
    Matrix3::identity() + px * a + px * px * b
}

// (1 - cos t) / t^2 without cancellation near zero.
fn one_minus_cos_over_sq(theta: f64) -> f64 {
    let half_sin = (0.5 * theta).sin();
    2.0 * half_sin * half_sin / (theta * theta)
}

/// Rotation logarithm. Errors within [`CUT_LOCUS_MARGIN`] of pi, where the
/// axis is not recoverable to working precision.
pub fn so3_log(rot: &Matrix3<f64>) -> Result<Vector3<f64>> {
    let w = vee(&(rot - rot.transpose())) * 0.5;
    let s = w.norm();
    let c = ((rot.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = s.atan2(c);
    if theta >= std::f64::consts::PI - CUT_LOCUS_MARGIN {
        return Err(Error::CutLocus { angle: theta });
    }
    if theta < SMALL_ANGLE {
        return Ok(w);
    }
    Ok(w * (theta / s))
}

/// Left Jacobian of SO(3).
pub fn so3_left_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let px = skew(phi);
    if theta < SMALL_ANGLE {
        return Matrix3::identity() + px * 0.5 + px * px * (1.0 / 6.0);
    }
    let a = one_minus_cos_over_sq(theta);
    let b = (theta - theta.sin()) / (theta * theta * theta);
    Matrix3::identity() + px * a + px * px * b
}

/// Inverse of the SO(3) left Jacobian.
pub fn so3_left_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let px = skew(phi);
    if theta < SMALL_ANGLE {
        return Matrix3::identity() - px * 0.5 + px * px * (1.0 / 12.0);
    }
    let half = 0.5 * theta;
    let cot = half.cos() / half.sin();
    let coeff = (1.0 - half * cot) / (theta * theta);
    Matrix3::identity() - px * 0.5 + px * px * coeff
}

/// Exponential map from se(3), exact for any angle below pi.
pub fn exp_map(xi: &Twist) -> Pose {
    let rotation = so3_exp(&xi.phi);
    let translation = so3_left_jacobian(&xi.phi) * xi.rho;
    Pose::new(rotation, translation)
}

/// Logarithm map to se(3). Errors near the rotational cut locus.
pub fn log_map(pose: &Pose) -> Result<Twist> {
    let phi = so3_log(&pose.rotation)?;
    let rho = so3_left_jacobian_inv(&phi) * pose.translation;
    Ok(Twist { rho, phi })
}

/// Adjoint of a pose acting on `(rho, phi)` twists:
/// `exp_map(adjoint(T) * xi) == T * exp_map(xi) * T^-1`.
pub fn adjoint(pose: &Pose) -> Matrix6<f64> {
    let mut ad = Matrix6::zeros();
    let tr = skew(&pose.translation) * pose.rotation;
    for r in 0..3 {
        for c in 0..3 {
            ad[(r, c)] = pose.rotation[(r, c)];
            ad[(r, c + 3)] = tr[(r, c)];
            ad[(r + 3, c + 3)] = pose.rotation[(r, c)];
        }
    }
    ad
}

// Coupling block of the SE(3) left Jacobian (Barfoot's Q), with series
// fallbacks for the three angle-dependent coefficients.
fn se3_q_matrix(xi: &Twist) -> Matrix3<f64> {
    let rx = skew(&xi.rho);
    let px = skew(&xi.phi);
    let theta = xi.phi.norm();
    let (c1, c2, c3) = if theta < 1e-4 {
        let t2 = theta * theta;
        (
            1.0 / 6.0 - t2 / 120.0,
            -1.0 / 24.0 + t2 / 720.0,
            -1.0 / 120.0 + t2 / 2520.0,
        )
    } else {
        let t2 = theta * theta;
        let t3 = t2 * theta;
        let (s, c) = theta.sin_cos();
        (
            (theta - s) / t3,
            (1.0 - t2 / 2.0 - c) / (t2 * t2),
            ((theta - s - t3 / 6.0) / (t2 * t3)),
        )
    };
    let pr = px * rx;
    let rp = rx * px;
    rx * 0.5
        + (pr + rp + px * rp) * c1
        - (px * pr + rp * px - px * rp * 3.0) * c2
        - (px * rp * px + px * px * rp) * (0.5 * (c2 - 3.0 * c3))
}

/// Inverse of the SE(3) left Jacobian, used to linearize pose logarithms.
pub fn se3_left_jacobian_inv(xi: &Twist) -> Matrix6<f64> {
    let jinv = so3_left_jacobian_inv(&xi.phi);
    let q = se3_q_matrix(xi);
    let upper = -jinv * q * jinv;
    let mut out = Matrix6::zeros();
    for r in 0..3 {
        for c in 0..3 {
            out[(r, c)] = jinv[(r, c)];
            out[(r, c + 3)] = upper[(r, c)];
            out[(r + 3, c + 3)] = jinv[(r, c)];
        }
    }
    out
}

/// Pinhole projection of a world point through a pose, in pixels.
///
/// Errors when the transformed point's depth falls at or below
/// [`MIN_DEPTH`].
pub fn project(pose: &Pose, p: &Vector3<f64>, cam: &CameraIntrinsics) -> Result<Vector2<f64>> {
    let q = pose.transform(p);
    if q.z <= MIN_DEPTH {
        return Err(Error::BehindCamera { depth: q.z, min: MIN_DEPTH });
    }
    Ok(Vector2::new(
        cam.fx * q.x / q.z + cam.cx,
        cam.fy * q.y / q.z + cam.cy,
    ))
}

/// Squared norm of the relative twist `log(a^-1 * b)`.
pub fn se3_distance(a: &Pose, b: &Pose) -> Result<f64> {
    let rel = log_map(&a.inverse().compose(b))?;
    Ok(rel.rho.norm_squared() + rel.phi.norm_squared())
}

/// Projects a rotation-like matrix back to SO(3) via polar decomposition.
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd requested u");
    let vt = svd.v_t.expect("svd requested v_t");
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        let mut uf = u;
        uf.column_mut(2).neg_mut();
        r = uf * vt;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn toy_camera() -> CameraIntrinsics {
        CameraIntrinsics::new(520.0, 520.0, 512.0, 512.0, 1024.0, 1024.0).unwrap()
    }

    fn random_twist(rng: &mut ChaCha8Rng, max_angle: f64, max_trans: f64) -> Twist {
        let mut draw = |scale: f64| {
            Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ) * scale
        };
        Twist { rho: draw(max_trans), phi: draw(max_angle / 3.0_f64.sqrt()) }
    }

    #[test]
    fn projects_toy_points() {
        let cam = toy_camera();
        let id = Pose::identity();
        let q = project(&id, &Vector3::new(5.0, 0.0, 10.0), &cam).unwrap();
        assert_relative_eq!(q.x, 772.0, epsilon = 1e-9);
        assert_relative_eq!(q.y, 512.0, epsilon = 1e-9);

        let q = project(&id, &Vector3::new(10.0, 0.0, 15.0), &cam).unwrap();
        assert!((q.x - 858.67).abs() < 1e-2);
        assert!((q.y - 512.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_points_behind_camera() {
        let cam = toy_camera();
        let err = project(&Pose::identity(), &Vector3::new(0.0, 0.0, -1.0), &cam).unwrap_err();
        assert!(matches!(err, Error::BehindCamera { .. }));

        let err = project(&Pose::identity(), &Vector3::new(0.0, 0.0, 1e-7), &cam).unwrap_err();
        assert!(matches!(err, Error::BehindCamera { .. }));
    }

    #[test]
    fn exp_of_quarter_turn_rotates_axes() {
        let xi = Twist {
            rho: Vector3::zeros(),
            phi: Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2),
        };
        let pose = exp_map(&xi);
        let v = pose.transform(&Vector3::new(1.0, 0.0, 0.0));
        assert_relative_eq!(v.x, 0.0, epsilon = 1e-12);
        assert_relative_eq!(v.y, 1.0, epsilon = 1e-12);
        assert_relative_eq!(v.z, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_twist_is_identity() {
        let pose = exp_map(&Twist::zero());
        assert_relative_eq!(pose.rotation, Matrix3::identity(), epsilon = 1e-15);
        assert_relative_eq!(pose.translation, Vector3::zeros(), epsilon = 1e-15);
    }

    #[test]
    fn log_rejects_cut_locus() {
        let angle = std::f64::consts::PI - 1e-7;
        let pose = exp_map(&Twist {
            rho: Vector3::zeros(),
            phi: Vector3::new(angle, 0.0, 0.0),
        });
        assert!(matches!(log_map(&pose), Err(Error::CutLocus { .. })));
    }

    #[test]
    fn roundtrip_stays_below_1e9() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut worst = 0.0_f64;
        for _ in 0..2000 {
            let scale: f64 = rng.gen_range(0.0..3.0);
            let mut xi = random_twist(&mut rng, 1.0, 2.0);
            if xi.phi.norm() > 0.0 {
                xi.phi = xi.phi.normalize() * scale.min(3.0);
            }
            let back = log_map(&exp_map(&xi)).unwrap();
            worst = worst.max((back.as_vector() - xi.as_vector()).norm());
        }
        assert!(worst < 1e-9, "worst roundtrip deviation {worst}");
    }

    #[test]
    fn small_angle_branch_is_continuous() {
        for mag in [9.9e-9, 1.01e-8] {
            let xi = Twist {
                rho: Vector3::new(0.5, -0.25, 0.125),
                phi: Vector3::new(mag, 0.0, 0.0),
            };
            let back = log_map(&exp_map(&xi)).unwrap();
            assert!((back.as_vector() - xi.as_vector()).norm() < 1e-13);
        }
    }

    #[test]
    fn translation_distance_is_squared_norm() {
        let a = Pose::identity();
        let b = Pose::new(Matrix3::identity(), Vector3::new(3.0, 4.0, 0.0));
        assert_relative_eq!(se3_distance(&a, &b).unwrap(), 25.0, epsilon = 1e-12);
    }

    #[test]
    fn distance_is_symmetric_and_left_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let a = exp_map(&random_twist(&mut rng, 1.5, 2.0));
            let b = exp_map(&random_twist(&mut rng, 1.5, 2.0));
            let g = exp_map(&random_twist(&mut rng, 1.5, 2.0));
            let d = se3_distance(&a, &b).unwrap();
            assert!((d - se3_distance(&b, &a).unwrap()).abs() < 1e-8);
            let dg = se3_distance(&g.compose(&a), &g.compose(&b)).unwrap();
            assert!((d - dg).abs() < 1e-8 * (1.0 + d));
        }
    }

    #[test]
    fn long_composition_chains_stay_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut pose = Pose::identity();
        for _ in 0..500 {
            pose = exp_map(&random_twist(&mut rng, 0.3, 0.1)).compose(&pose);
        }
        let gram = pose.rotation.transpose() * pose.rotation;
        assert_relative_eq!(gram, Matrix3::identity(), epsilon = 1e-9);
    }

    #[test]
    fn adjoint_matches_conjugation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let t = exp_map(&random_twist(&mut rng, 1.0, 1.5));
            let xi = random_twist(&mut rng, 0.4, 0.6);
            let lhs = exp_map(&Twist::from_vector(&(adjoint(&t) * xi.as_vector())));
            let rhs = t.compose(&exp_map(&xi)).compose(&t.inverse());
            assert_relative_eq!(lhs.rotation, rhs.rotation, epsilon = 1e-9);
            assert_relative_eq!(lhs.translation, rhs.translation, epsilon = 1e-9);
        }
    }

    // log(exp(eta) * exp(xi)) ~= xi + Jl_inv(xi) * eta is the linearization
    // the pose-prior residual relies on; check it against differences.
    #[test]
    fn left_jacobian_inverse_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..20 {
            let xi = random_twist(&mut rng, 1.2, 1.5);
            let base = exp_map(&xi);
            let jinv = se3_left_jacobian_inv(&xi);
            let h = 1e-6;
            for k in 0..6 {
                let mut dv = Vector6::zeros();
                dv[k] = h;
                let plus = log_map(&exp_map(&Twist::from_vector(&dv)).compose(&base)).unwrap();
                dv[k] = -h;
                let minus = log_map(&exp_map(&Twist::from_vector(&dv)).compose(&base)).unwrap();
                let fd = (plus.as_vector() - minus.as_vector()) / (2.0 * h);
                let analytic = jinv.column(k);
                for r in 0..6 {
                    assert!(
                        (fd[r] - analytic[r]).abs() < 1e-5,
                        "row {r} col {k}: fd {} vs analytic {}",
                        fd[r],
                        analytic[r]
                    );
                }
            }
        }
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 520.0, 512.0, 512.0, 1024.0, 1024.0).is_err());
        assert!(CameraIntrinsics::new(520.0, 520.0, 1500.0, 512.0, 1024.0, 1024.0).is_err());
        assert!(CameraIntrinsics::new(520.0, 520.0, 512.0, 512.0, 1024.0, 1024.0).is_ok());
    }
}
