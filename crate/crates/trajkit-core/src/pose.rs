//! SE(3) pose primitives: unit-quaternion rotations, world-to-camera poses,
//! trajectories and pinhole intrinsics.
//!
//! Conventions are fixed once here and used everywhere else:
//! poses are world-to-camera (`x_cam = R * x_world + t`, the COLMAP
//! convention), camera centers are derived as `-R^T * t` and never stored,
//! and rotations are stored as sign-canonical unit quaternions so that `q`
//! and `-q` cannot diverge anywhere downstream.

use nalgebra::{Matrix3, Quaternion, Unit, UnitQuaternion, Vector3};
use thiserror::Error;

/// Degenerate-geometry cutoff below which SLERP falls back to normalized
/// linear interpolation (geodesic angle, radians).
pub const SLERP_DEGENERACY_ANGLE: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum PoseError {
    #[error("quaternion norm {norm} is too close to zero to normalize")]
    ZeroNormQuaternion { norm: f64 },
    #[error("non-finite value in {what}")]
    NonFinite { what: &'static str },
    #[error("time_step must be >= 0, got {0}")]
    NegativeTimeStep(i64),
    #[error("trajectory time_steps must be strictly increasing ({prev} then {next})")]
    NonMonotonicTimeSteps { prev: i64, next: i64 },
    #[error("pose_rate_hz must be positive, got {0}")]
    InvalidPoseRate(f64),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
}

/// A 3D rotation stored as a sign-canonical unit quaternion `(w, x, y, z)`.
///
/// Canonical sign means `w >= 0`, and if `w == 0` the first nonzero vector
/// component is `>= 0`; `q` and `-q` therefore construct the same value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation {
    q: UnitQuaternion<f64>,
}

impl Rotation {
    pub fn identity() -> Self {
        Self {
            q: UnitQuaternion::identity(),
        }
    }

    /// Build from quaternion components in `(w, x, y, z)` order. The input is
    /// normalized and canonicalized; a near-zero norm is rejected.
    pub fn from_quat_wxyz(w: f64, x: f64, y: f64, z: f64) -> Result<Self, PoseError> {
        for v in [w, x, y, z] {
            if !v.is_finite() {
                return Err(PoseError::NonFinite { what: "quaternion" });
            }
        }
        let norm = (w * w + x * x + y * y + z * z).sqrt();
        if norm < 1e-12 {
            return Err(PoseError::ZeroNormQuaternion { norm });
        }
        // Dividing an already-unit quaternion by its computed norm perturbs
        // the components by an ulp, which breaks bit-exact round trips.
        let q = if (norm - 1.0).abs() <= 1e-12 {
            Quaternion::new(w, x, y, z)
        } else {
            Quaternion::new(w / norm, x / norm, y / norm, z / norm)
        };
        Ok(Self::canonicalize(UnitQuaternion::new_unchecked(q)))
    }

    /// Rotation by `angle` radians about `axis`.
    pub fn from_axis_angle(axis: &Unit<Vector3<f64>>, angle: f64) -> Self {
        Self::canonicalize(UnitQuaternion::from_axis_angle(axis, angle))
    }

    pub fn from_unit_quaternion(q: UnitQuaternion<f64>) -> Self {
        Self::canonicalize(q)
    }

    fn canonicalize(q: UnitQuaternion<f64>) -> Self {
        let c = q.quaternion();
        let flip = if c.w != 0.0 {
            c.w < 0.0
        } else if c.i != 0.0 {
            c.i < 0.0
        } else if c.j != 0.0 {
            c.j < 0.0
        } else {
            c.k < 0.0
        };
        let q = if flip {
            UnitQuaternion::new_unchecked(Quaternion::new(-c.w, -c.i, -c.j, -c.k))
        } else {
            q
        };
        Self { q }
    }

    /// Components in `(w, x, y, z)` order, canonical sign.
    pub fn quat_wxyz(&self) -> [f64; 4] {
        let c = self.q.quaternion();
        [c.w, c.i, c.j, c.k]
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        *self.q.to_rotation_matrix().matrix()
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.q * v
    }

    pub fn inverse_rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.q.inverse() * v
    }

    pub fn inverse(&self) -> Rotation {
        Self::canonicalize(self.q.inverse())
    }

    /// `self * other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Rotation) -> Rotation {
        Self::canonicalize(self.q * other.q)
    }

    /// Rotation angle in radians, in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        geodesic_angle(&Rotation::identity(), self)
    }

    /// Sign-invariant quaternion component distance,
    /// `min(||qa - qb||, ||qa + qb||)`. Unlike the geodesic angle this does
    /// not amplify ulp-level differences through `acos`, so it is the right
    /// comparison for tight numeric tolerances.
    pub fn component_distance(&self, other: &Rotation) -> f64 {
        let a = self.quat_wxyz();
        let b = other.quat_wxyz();
        let (mut diff, mut sum) = (0.0, 0.0);
        for i in 0..4 {
            diff += (a[i] - b[i]) * (a[i] - b[i]);
            sum += (a[i] + b[i]) * (a[i] + b[i]);
        }
        diff.min(sum).sqrt()
    }
}

/// Geodesic distance between two rotations: `2 * acos(|<a, b>|)`, radians in
/// `[0, pi]`. Symmetric, zero iff the rotations agree up to quaternion sign.
///
/// Computed through the chord length (`2 acos(1 - d^2/2) = 4 asin(d/2)` with
/// `d` the sign-resolved component distance), which stays exact where `acos`
/// of a near-1 dot product would amplify ulp noise to ~1e-8.
pub fn geodesic_angle(a: &Rotation, b: &Rotation) -> f64 {
    let d = a.component_distance(b);
    4.0 * (d / 2.0).clamp(0.0, 1.0).asin()
}

/// Angle between two nonzero 3-vectors, radians in `[0, pi]`, computed via
/// the chord between the normalized vectors so identical inputs give exactly
/// zero (where `acos` of a near-1 dot would not).
pub fn vector_angle(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let an = a.normalize();
    let bn = b.normalize();
    let chord = (an - bn).norm();
    2.0 * (chord / 2.0).clamp(0.0, 1.0).asin()
}

/// Spherical linear interpolation along the shortest arc.
///
/// `slerp(a, b, 0) = a` and `slerp(a, b, 1) = b`; below
/// [`SLERP_DEGENERACY_ANGLE`] the geodesic is numerically flat and the result
/// falls back to normalized linear interpolation.
pub fn slerp(a: &Rotation, b: &Rotation, s: f64) -> Rotation {
    debug_assert!((0.0..=1.0).contains(&s), "slerp fraction out of [0,1]: {s}");
    let qa = a.quat_wxyz();
    let mut qb = b.quat_wxyz();
    let mut dot: f64 = qa.iter().zip(qb.iter()).map(|(x, y)| x * y).sum();
    if dot < 0.0 {
        for v in qb.iter_mut() {
            *v = -*v;
        }
        dot = -dot;
    }
    dot = dot.clamp(-1.0, 1.0);
    let geodesic = 2.0 * dot.acos();

    let (wa, wb) = if geodesic < SLERP_DEGENERACY_ANGLE {
        (1.0 - s, s)
    } else {
        let half = dot.acos();
        let sin_half = half.sin();
        (((1.0 - s) * half).sin() / sin_half, (s * half).sin() / sin_half)
    };
    let q = Quaternion::new(
        wa * qa[0] + wb * qb[0],
        wa * qa[1] + wb * qb[1],
        wa * qa[2] + wb * qb[2],
        wa * qa[3] + wb * qb[3],
    );
    let norm = q.norm();
    let q = Quaternion::new(q.w / norm, q.i / norm, q.j / norm, q.k / norm);
    Rotation::canonicalize(UnitQuaternion::new_unchecked(q))
}

/// A world-to-camera pose sampled at the trajectory pose rate.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraPose {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
    pub time_step: i64,
    pub frame_name: String,
}

impl CameraPose {
    pub fn new(
        rotation: Rotation,
        translation: Vector3<f64>,
        time_step: i64,
        frame_name: impl Into<String>,
    ) -> Result<Self, PoseError> {
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(PoseError::NonFinite {
                what: "translation",
            });
        }
        if time_step < 0 {
            return Err(PoseError::NegativeTimeStep(time_step));
        }
        Ok(Self {
            rotation,
            translation,
            time_step,
            frame_name: frame_name.into(),
        })
    }

    pub fn identity(time_step: i64, frame_name: impl Into<String>) -> Self {
        Self {
            rotation: Rotation::identity(),
            translation: Vector3::zeros(),
            time_step,
            frame_name: frame_name.into(),
        }
    }

    /// Camera center in world coordinates: `-R^T * t`.
    pub fn center(&self) -> Vector3<f64> {
        -self.rotation.inverse_rotate(&self.translation)
    }

    /// Optical axis (camera `+z`) expressed in the world frame; unit norm.
    pub fn forward(&self) -> Vector3<f64> {
        self.rotation.inverse_rotate(&Vector3::z())
    }

    /// Rebuild a pose from a world center instead of a translation.
    pub fn from_center(
        rotation: Rotation,
        center: Vector3<f64>,
        time_step: i64,
        frame_name: impl Into<String>,
    ) -> Result<Self, PoseError> {
        let translation = -rotation.rotate(&center);
        Self::new(rotation, translation, time_step, frame_name)
    }

    /// Row-major flattening of the 3x4 world-to-camera matrix `[R | t]`.
    pub fn flatten(&self) -> [f64; 12] {
        let r = self.rotation.matrix();
        let t = self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t.x,
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t.y,
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.z,
        ]
    }
}

/// Camera center and optical-axis direction of a pose.
pub fn camera_center_and_forward(p: &CameraPose) -> (Vector3<f64>, Vector3<f64>) {
    (p.center(), p.forward())
}

/// Relative pose from `a` to `b`: `R_rel = R_b * R_a^T`,
/// `t_rel = t_b - R_rel * t_a`. Composing `a` with the result reproduces `b`.
pub fn relative_pose(a: &CameraPose, b: &CameraPose) -> (Rotation, Vector3<f64>) {
    let r_rel = b.rotation.compose(&a.rotation.inverse());
    let t_rel = b.translation - r_rel.rotate(&a.translation);
    (r_rel, t_rel)
}

/// Apply a relative transform on top of pose `a` (inverse of [`relative_pose`]).
pub fn compose_pose(a: &CameraPose, rel: &(Rotation, Vector3<f64>)) -> (Rotation, Vector3<f64>) {
    let r = rel.0.compose(&a.rotation);
    let t = rel.0.rotate(&a.translation) + rel.1;
    (r, t)
}

/// An ordered pose sequence sampled at a fixed pose rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    poses: Vec<CameraPose>,
    pose_rate_hz: f64,
}

/// Default pose sampling rate (poses per second).
pub const DEFAULT_POSE_RATE_HZ: f64 = 4.0;

impl Trajectory {
    pub fn new(poses: Vec<CameraPose>, pose_rate_hz: f64) -> Result<Self, PoseError> {
        if !(pose_rate_hz.is_finite() && pose_rate_hz > 0.0) {
            return Err(PoseError::InvalidPoseRate(pose_rate_hz));
        }
        for pair in poses.windows(2) {
            if pair[1].time_step <= pair[0].time_step {
                return Err(PoseError::NonMonotonicTimeSteps {
                    prev: pair[0].time_step,
                    next: pair[1].time_step,
                });
            }
        }
        Ok(Self {
            poses,
            pose_rate_hz,
        })
    }

    pub fn poses(&self) -> &[CameraPose] {
        &self.poses
    }

    pub fn pose_rate_hz(&self) -> f64 {
        self.pose_rate_hz
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Number of consecutive-pose transitions (`len - 1`, or 0 when empty).
    pub fn transition_count(&self) -> usize {
        self.poses.len().saturating_sub(1)
    }

    pub fn pose_at_step(&self, time_step: i64) -> Option<&CameraPose> {
        self.poses
            .binary_search_by_key(&time_step, |p| p.time_step)
            .ok()
            .map(|i| &self.poses[i])
    }

    pub fn centers(&self) -> Vec<Vector3<f64>> {
        self.poses.iter().map(|p| p.center()).collect()
    }

    /// Per-transition center step lengths.
    pub fn step_lengths(&self) -> Vec<f64> {
        self.poses
            .windows(2)
            .map(|w| (w[1].center() - w[0].center()).norm())
            .collect()
    }

    pub fn median_step_length(&self) -> Option<f64> {
        let mut steps = self.step_lengths();
        if steps.is_empty() {
            return None;
        }
        steps.sort_by(|a, b| a.total_cmp(b));
        let n = steps.len();
        Some(if n.is_multiple_of(2) {
            0.5 * (steps[n / 2 - 1] + steps[n / 2])
        } else {
            steps[n / 2]
        })
    }

    /// Replace the pose at `index`, keeping time step and frame name.
    pub(crate) fn set_pose_raw(&mut self, index: usize, rotation: Rotation, translation: Vector3<f64>) {
        self.poses[index].rotation = rotation;
        self.poses[index].translation = translation;
    }
}

/// Pinhole camera intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, PoseError> {
        if !(fx.is_finite() && fy.is_finite() && cx.is_finite() && cy.is_finite()) {
            return Err(PoseError::NonFinite { what: "intrinsics" });
        }
        if fx <= 0.0 || fy <= 0.0 {
            return Err(PoseError::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx={fx}, fy={fy})"
            )));
        }
        if !(0.0 < cx && cx < width as f64) || !(0.0 < cy && cy < height as f64) {
            return Err(PoseError::InvalidIntrinsics(format!(
                "principal point ({cx}, {cy}) outside image {width}x{height}"
            )));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Pixel to normalized camera coordinates.
    pub fn normalize(&self, px: [f64; 2]) -> [f64; 2] {
        [(px[0] - self.cx) / self.fx, (px[1] - self.cy) / self.fy]
    }

    /// Normalized camera coordinates to pixel.
    pub fn denormalize(&self, n: [f64; 2]) -> [f64; 2] {
        [n[0] * self.fx + self.cx, n[1] * self.fy + self.cy]
    }

    pub fn contains_pixel(&self, px: [f64; 2]) -> bool {
        px[0] >= 0.0 && px[0] < self.width as f64 && px[1] >= 0.0 && px[1] < self.height as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::FRAC_PI_2;

    fn rot_x(deg: f64) -> Rotation {
        Rotation::from_axis_angle(&Vector3::x_axis(), deg.to_radians())
    }
    fn rot_y(deg: f64) -> Rotation {
        Rotation::from_axis_angle(&Vector3::y_axis(), deg.to_radians())
    }
    fn rot_z(deg: f64) -> Rotation {
        Rotation::from_axis_angle(&Vector3::z_axis(), deg.to_radians())
    }

    fn random_rotation(rng: &mut impl Rng) -> Rotation {
        loop {
            let q = [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ];
            let norm: f64 = q.iter().map(|v: &f64| v * v).sum::<f64>().sqrt();
            if norm > 0.1 {
                return Rotation::from_quat_wxyz(q[0], q[1], q[2], q[3]).unwrap();
            }
        }
    }

    fn random_pose(rng: &mut impl Rng, step: i64) -> CameraPose {
        CameraPose::new(
            random_rotation(rng),
            Vector3::new(
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
            ),
            step,
            format!("f{step:05}.png"),
        )
        .unwrap()
    }

    #[test]
    fn geodesic_angle_identity_is_zero() {
        assert_eq!(geodesic_angle(&Rotation::identity(), &Rotation::identity()), 0.0);
    }

    #[test]
    fn geodesic_angle_quarter_turn() {
        let a = geodesic_angle(&Rotation::identity(), &rot_z(90.0));
        assert_relative_eq!(a, FRAC_PI_2, epsilon = 1e-12);
    }

    #[test]
    fn geodesic_angle_same_axis_difference() {
        // Axis-angle composition about a shared axis is additive, so the
        // distance between 30 and 100 degrees about x is 70 degrees.
        let a = geodesic_angle(&rot_x(30.0), &rot_x(100.0));
        assert_relative_eq!(a, 70f64.to_radians(), epsilon = 1e-12);
    }

    #[test]
    fn geodesic_angle_sign_invariant() {
        let r = rot_y(40.0);
        let [w, x, y, z] = r.quat_wxyz();
        let flipped = Rotation::from_quat_wxyz(-w, -x, -y, -z).unwrap();
        assert_eq!(geodesic_angle(&r, &flipped), 0.0);
    }

    #[test]
    fn slerp_endpoints_and_midpoint() {
        let a = Rotation::identity();
        let b = rot_z(90.0);
        assert_relative_eq!(geodesic_angle(&slerp(&a, &b, 0.0), &a), 0.0, epsilon = 1e-12);
        assert_relative_eq!(geodesic_angle(&slerp(&a, &b, 1.0), &b), 0.0, epsilon = 1e-12);
        let mid = slerp(&a, &b, 0.5);
        assert_relative_eq!(geodesic_angle(&mid, &rot_z(45.0)), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn slerp_identical_inputs() {
        let r = rot_x(17.0);
        let out = slerp(&r, &r, 0.5);
        assert_relative_eq!(geodesic_angle(&out, &r), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn slerp_quarter_point_same_axis() {
        // slerp(rot-y 20, rot-y 80, 0.25) should land at 20 + 0.25*60 = 35 deg.
        let out = slerp(&rot_y(20.0), &rot_y(80.0), 0.25);
        assert_relative_eq!(geodesic_angle(&out, &rot_y(35.0)), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn slerp_takes_shortest_arc() {
        // b given with flipped sign must not send interpolation the long way.
        let a = Rotation::identity();
        let b = rot_z(90.0);
        let [w, x, y, z] = b.quat_wxyz();
        let b_flipped = Rotation {
            q: UnitQuaternion::new_unchecked(Quaternion::new(-w, -x, -y, -z)),
        };
        let mid = slerp(&a, &b_flipped, 0.5);
        assert_relative_eq!(geodesic_angle(&mid, &rot_z(45.0)), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn slerp_angle_is_proportional() {
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..200 {
            let a = random_rotation(&mut rng);
            let b = random_rotation(&mut rng);
            let s: f64 = rng.random_range(0.0..1.0);
            let total = geodesic_angle(&a, &b);
            let part = geodesic_angle(&a, &slerp(&a, &b, s));
            assert!(
                (part - s * total).abs() < 1e-7,
                "expected {} got {}",
                s * total,
                part
            );
        }
    }

    #[test]
    fn canonical_sign_convention() {
        let r = Rotation::from_quat_wxyz(-0.5, 0.5, 0.5, 0.5).unwrap();
        assert!(r.quat_wxyz()[0] >= 0.0);
        // w == 0: first nonzero vector component must be >= 0.
        let r = Rotation::from_quat_wxyz(0.0, -1.0, 0.0, 0.0).unwrap();
        assert_eq!(r.quat_wxyz(), [0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn unit_norm_after_construction() {
        let r = Rotation::from_quat_wxyz(3.0, 4.0, 0.0, 12.0).unwrap();
        let n: f64 = r.quat_wxyz().iter().map(|v| v * v).sum();
        assert_relative_eq!(n, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn zero_quaternion_rejected() {
        assert!(matches!(
            Rotation::from_quat_wxyz(0.0, 0.0, 0.0, 0.0),
            Err(PoseError::ZeroNormQuaternion { .. })
        ));
    }

    #[test]
    fn relative_pose_of_pose_with_itself() {
        let mut rng = StdRng::seed_from_u64(9);
        let p = random_pose(&mut rng, 0);
        let (r, t) = relative_pose(&p, &p);
        assert!(r.component_distance(&Rotation::identity()) < 1e-12);
        assert!(t.norm() < 1e-12);
    }

    #[test]
    fn relative_pose_pure_translation() {
        let a = CameraPose::identity(0, "a");
        let b = CameraPose::new(Rotation::identity(), Vector3::new(1.0, 0.0, 0.0), 1, "b").unwrap();
        let (r, t) = relative_pose(&a, &b);
        assert!(r.angle() < 1e-12);
        assert_relative_eq!(t.x, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn camera_center_and_forward_cases() {
        let p = CameraPose::identity(0, "id");
        let (c, f) = camera_center_and_forward(&p);
        assert!(c.norm() < 1e-12);
        assert_relative_eq!(f.z, 1.0, epsilon = 1e-12);

        let p = CameraPose::new(rot_y(180.0), Vector3::zeros(), 0, "flip").unwrap();
        let (_, f) = camera_center_and_forward(&p);
        assert_relative_eq!(f.z, -1.0, epsilon = 1e-12);

        // Quarter turn about y with t = (0,0,2): verified against the hand
        // matrix products center = -R^T t, forward = R^T z.
        let r = rot_y(-90.0);
        let t = Vector3::new(0.0, 0.0, 2.0);
        let p = CameraPose::new(r, t, 0, "y90").unwrap();
        let (c, f) = camera_center_and_forward(&p);
        let expect_c = -r.matrix().transpose() * t;
        let expect_f = r.matrix().transpose() * Vector3::z();
        assert_relative_eq!((c - expect_c).norm(), 0.0, epsilon = 1e-12);
        assert_relative_eq!((f - expect_f).norm(), 0.0, epsilon = 1e-12);
        assert_relative_eq!(f.x, 1.0, epsilon = 1e-12);
        assert!(f.y.abs() < 1e-12 && f.z.abs() < 1e-12);
    }

    #[test]
    fn flatten_identity_and_translation() {
        let p = CameraPose::identity(0, "id");
        assert_eq!(
            p.flatten(),
            [1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]
        );
        let p = CameraPose::new(Rotation::identity(), Vector3::new(1.0, 2.0, 3.0), 0, "t").unwrap();
        assert_eq!(
            p.flatten(),
            [1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 2.0, 0.0, 0.0, 1.0, 3.0]
        );
    }

    #[test]
    fn flatten_round_trips_rotation_and_translation() {
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..50 {
            let p = random_pose(&mut rng, 0);
            let f = p.flatten();
            let r = p.rotation.matrix();
            for i in 0..3 {
                for j in 0..3 {
                    assert_eq!(f[i * 4 + j], r[(i, j)]);
                }
                assert_eq!(f[i * 4 + 3], p.translation[i]);
            }
        }
    }

    #[test]
    fn trajectory_rejects_non_monotonic_steps() {
        let poses = vec![CameraPose::identity(3, "a"), CameraPose::identity(3, "b")];
        assert!(matches!(
            Trajectory::new(poses, 4.0),
            Err(PoseError::NonMonotonicTimeSteps { .. })
        ));
    }

    #[test]
    fn trajectory_rejects_bad_rate() {
        assert!(Trajectory::new(vec![], 0.0).is_err());
        assert!(Trajectory::new(vec![], -2.0).is_err());
    }

    #[test]
    fn intrinsics_validation() {
        assert!(Intrinsics::new(1000.0, 1000.0, 640.0, 360.0, 1280, 720).is_ok());
        assert!(Intrinsics::new(0.0, 1000.0, 640.0, 360.0, 1280, 720).is_err());
        assert!(Intrinsics::new(1000.0, 1000.0, 1300.0, 360.0, 1280, 720).is_err());
    }

    proptest! {
        #[test]
        fn prop_slerp_reverses(seed in 0u64..1000, s in 0.0f64..=1.0) {
            let mut rng = StdRng::seed_from_u64(seed);
            let a = random_rotation(&mut rng);
            let b = random_rotation(&mut rng);
            let fwd = slerp(&a, &b, s);
            let back = slerp(&b, &a, 1.0 - s);
            prop_assert!(fwd.component_distance(&back) < 1e-9);
        }

        #[test]
        fn prop_relative_pose_round_trip(seed in 0u64..10_000) {
            let mut rng = StdRng::seed_from_u64(seed);
            let a = random_pose(&mut rng, 0);
            let b = random_pose(&mut rng, 1);
            let rel = relative_pose(&a, &b);
            let (r, t) = compose_pose(&a, &rel);
            prop_assert!(r.component_distance(&b.rotation) < 1e-9);
            prop_assert!((t - b.translation).norm() < 1e-9);
        }

        #[test]
        fn prop_canonicalization_idempotent_and_action_preserving(seed in 0u64..1000) {
            let mut rng = StdRng::seed_from_u64(seed);
            let r = random_rotation(&mut rng);
            let [w, x, y, z] = r.quat_wxyz();
            let again = Rotation::from_quat_wxyz(w, x, y, z).unwrap();
            prop_assert_eq!(r.quat_wxyz(), again.quat_wxyz());
            let flipped = Rotation::from_quat_wxyz(-w, -x, -y, -z).unwrap();
            prop_assert_eq!(r.quat_wxyz(), flipped.quat_wxyz());
            let v = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            prop_assert!((r.rotate(&v) - flipped.rotate(&v)).norm() < 1e-12);
        }
    }

    #[test]
    fn slerp_symmetry_sweep() {
        // 1e3-sample sweep demanded by the module contract.
        let mut rng = StdRng::seed_from_u64(1234);
        for _ in 0..1000 {
            let a = random_rotation(&mut rng);
            let b = random_rotation(&mut rng);
            let s: f64 = rng.random_range(0.0..=1.0);
            assert!(slerp(&a, &b, s).component_distance(&slerp(&b, &a, 1.0 - s)) < 1e-9);
        }
    }

    #[test]
    fn relative_pose_round_trip_sweep() {
        let mut rng = StdRng::seed_from_u64(77);
        for _ in 0..10_000 {
            let a = random_pose(&mut rng, 0);
            let b = random_pose(&mut rng, 1);
            let rel = relative_pose(&a, &b);
            let (r, t) = compose_pose(&a, &rel);
            assert!(r.component_distance(&b.rotation) < 1e-9);
            assert!((t - b.translation).norm() < 1e-9);
        }
    }

    #[test]
    fn slerp_degenerate_angle_falls_back_to_lerp() {
        let a = Rotation::identity();
        let b = Rotation::from_axis_angle(&Vector3::z_axis(), 1e-9);
        let out = slerp(&a, &b, 0.5);
        assert!(out.angle() <= 1e-9);
        assert!(out.angle() >= 0.0);
    }
}
