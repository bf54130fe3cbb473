//! Rigid-body algebra and the trajectory transforms used to turn tracker
//! poses into TCP trajectories.
//!
//! Rotations are stored as unit quaternions in `(qx, qy, qz, qw)` order.
//! Every constructor renormalizes and canonicalizes the sign so that
//! `qw >= 0`; `q` and `-q` therefore compare equal after construction.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

/// Three-component real vector (meters for positions, unitless for directions).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);
    pub const UNIT_X: Vec3 = Vec3::new(1.0, 0.0, 0.0);
    pub const UNIT_Y: Vec3 = Vec3::new(0.0, 1.0, 0.0);
    pub const UNIT_Z: Vec3 = Vec3::new(0.0, 0.0, 1.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(self, other: Vec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn cross(self, other: Vec3) -> Vec3 {
        Vec3::new(
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Unit vector in the same direction, or `None` for a (near) zero vector.
    pub fn normalized(self) -> Option<Vec3> {
        let n = self.norm();
        if n > f64::EPSILON && n.is_finite() {
            Some(self * (1.0 / n))
        } else {
            None
        }
    }

    pub fn lerp(self, other: Vec3, s: f64) -> Vec3 {
        self + (other - self) * s
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, rhs: Vec3) -> Vec3 {
        Vec3::new(self.x + rhs.x, self.y + rhs.y, self.z + rhs.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, rhs: Vec3) {
        *self = *self + rhs;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, rhs: Vec3) -> Vec3 {
        Vec3::new(self.x - rhs.x, self.y - rhs.y, self.z - rhs.z)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl fmt::Display for Vec3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.x, self.y, self.z)
    }
}

/// Unit quaternion representing a rotation.
///
/// Stored as `(qx, qy, qz, qw)`. The fields are private so the unit-norm and
/// `qw >= 0` invariants hold for every value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct UnitQuaternion {
    qx: f64,
    qy: f64,
    qz: f64,
    qw: f64,
}

/// Raised when raw quaternion components cannot be normalized.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("quaternion ({qx}, {qy}, {qz}, {qw}) cannot be normalized")]
pub struct InvalidQuaternion {
    pub qx: f64,
    pub qy: f64,
    pub qz: f64,
    pub qw: f64,
}

impl UnitQuaternion {
    pub const IDENTITY: UnitQuaternion = UnitQuaternion {
        qx: 0.0,
        qy: 0.0,
        qz: 0.0,
        qw: 1.0,
    };

    pub fn identity() -> Self {
        Self::IDENTITY
    }

    /// Normalizes and sign-canonicalizes raw components. Components already
    /// unit to within a few ulps are kept as given, so serializing and parsing
    /// a quaternion reproduces it exactly.
    pub fn new(qx: f64, qy: f64, qz: f64, qw: f64) -> Result<Self, InvalidQuaternion> {
        let n = (qx * qx + qy * qy + qz * qz + qw * qw).sqrt();
        if !n.is_finite() || n < 1e-12 {
            return Err(InvalidQuaternion { qx, qy, qz, qw });
        }
        if (n - 1.0).abs() <= 4.0 * f64::EPSILON {
            return Ok(Self::canonical(qx, qy, qz, qw));
        }
        Ok(Self::canonical(qx / n, qy / n, qz / n, qw / n))
    }

    pub fn from_array(q: [f64; 4]) -> Result<Self, InvalidQuaternion> {
        Self::new(q[0], q[1], q[2], q[3])
    }

    // Components must already be (close to) unit norm.
    fn from_raw_normalizing(qx: f64, qy: f64, qz: f64, qw: f64) -> Self {
        let n = (qx * qx + qy * qy + qz * qz + qw * qw).sqrt();
        Self::canonical(qx / n, qy / n, qz / n, qw / n)
    }

    fn canonical(qx: f64, qy: f64, qz: f64, qw: f64) -> Self {
        let flip = if qw != 0.0 {
            qw < 0.0
        } else if qx != 0.0 {
            qx < 0.0
        } else if qy != 0.0 {
            qy < 0.0
        } else {
            qz < 0.0
        };
        // +0.0 for zero components keeps equality and printing stable.
        let fix = |v: f64| if flip { -v + 0.0 } else { v + 0.0 };
        Self {
            qx: fix(qx),
            qy: fix(qy),
            qz: fix(qz),
            qw: fix(qw),
        }
    }

    /// Rotation by `angle` radians about `axis`; the axis need not be unit length.
    /// A zero axis yields the identity.
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        match axis.normalized() {
            Some(a) => {
                let (s, c) = (0.5 * angle).sin_cos();
                Self::from_raw_normalizing(a.x * s, a.y * s, a.z * s, c)
            }
            None => Self::IDENTITY,
        }
    }

    /// Rotation whose axis is `v / |v|` and angle `|v|`.
    pub fn from_rotation_vector(v: Vec3) -> Self {
        Self::from_axis_angle(v, v.norm())
    }

    pub fn rx(angle: f64) -> Self {
        Self::from_axis_angle(Vec3::UNIT_X, angle)
    }

    pub fn ry(angle: f64) -> Self {
        Self::from_axis_angle(Vec3::UNIT_Y, angle)
    }

    pub fn rz(angle: f64) -> Self {
        Self::from_axis_angle(Vec3::UNIT_Z, angle)
    }

    /// Fixed-axis roll/pitch/yaw as used by URDF: `Rz(yaw) * Ry(pitch) * Rx(roll)`.
    pub fn from_rpy(roll: f64, pitch: f64, yaw: f64) -> Self {
        Self::rz(yaw) * Self::ry(pitch) * Self::rx(roll)
    }

    pub fn x(&self) -> f64 {
        self.qx
    }
    pub fn y(&self) -> f64 {
        self.qy
    }
    pub fn z(&self) -> f64 {
        self.qz
    }
    pub fn w(&self) -> f64 {
        self.qw
    }

    /// Components in `(qx, qy, qz, qw)` order.
    pub fn to_array(self) -> [f64; 4] {
        [self.qx, self.qy, self.qz, self.qw]
    }

    pub fn norm(&self) -> f64 {
        (self.qx * self.qx + self.qy * self.qy + self.qz * self.qz + self.qw * self.qw).sqrt()
    }

    pub fn inverse(&self) -> Self {
        Self::canonical(-self.qx, -self.qy, -self.qz, self.qw)
    }

    /// Applies the rotation to a vector.
    pub fn rotate(&self, v: Vec3) -> Vec3 {
        // v' = v + 2w (u x v) + 2 u x (u x v), u = vector part
        let u = Vec3::new(self.qx, self.qy, self.qz);
        let t = u.cross(v) * 2.0;
        v + t * self.qw + u.cross(t)
    }

    /// Geodesic angle of this rotation in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        let v = Vec3::new(self.qx, self.qy, self.qz).norm();
        2.0 * v.atan2(self.qw.abs())
    }

    /// Geodesic angle between two rotations in `[0, pi]`.
    pub fn angle_to(&self, other: &UnitQuaternion) -> f64 {
        (self.inverse() * *other).angle()
    }

    /// Rotation vector (axis times angle), with angle in `[0, pi]`.
    pub fn to_rotation_vector(&self) -> Vec3 {
        let u = Vec3::new(self.qx, self.qy, self.qz);
        let s = u.norm();
        if s < 1e-300 {
            return Vec3::ZERO;
        }
        // qw >= 0 by construction, so the angle is at most pi.
        let angle = 2.0 * s.atan2(self.qw);
        u * (angle / s)
    }

    /// Chordal distance `min(|q1 - q2|, |q1 + q2|)`; zero iff same rotation.
    pub fn distance(&self, other: &UnitQuaternion) -> f64 {
        let a = self.to_array();
        let b = other.to_array();
        let minus: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
        let plus: f64 = a.iter().zip(&b).map(|(x, y)| (x + y) * (x + y)).sum();
        minus.min(plus).sqrt()
    }

    /// Spherical linear interpolation along the shorter arc. `s = 0` returns
    /// `self` and `s = 1` returns `other` exactly.
    pub fn slerp(&self, other: &UnitQuaternion, s: f64) -> Self {
        if s == 0.0 {
            return *self;
        }
        if s == 1.0 {
            return *other;
        }
        let delta = self.inverse() * *other;
        *self * Self::from_rotation_vector(delta.to_rotation_vector() * s)
    }

    /// Row-major 3x3 rotation matrix.
    pub fn to_matrix(&self) -> [[f64; 3]; 3] {
        let (x, y, z, w) = (self.qx, self.qy, self.qz, self.qw);
        [
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - z * w),
                2.0 * (x * z + y * w),
            ],
            [
                2.0 * (x * y + z * w),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - x * w),
            ],
            [
                2.0 * (x * z - y * w),
                2.0 * (y * z + x * w),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ]
    }
}

impl Default for UnitQuaternion {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Mul for UnitQuaternion {
    type Output = UnitQuaternion;
    fn mul(self, r: UnitQuaternion) -> UnitQuaternion {
        let l = self;
        UnitQuaternion::from_raw_normalizing(
            l.qw * r.qx + l.qx * r.qw + l.qy * r.qz - l.qz * r.qy,
            l.qw * r.qy - l.qx * r.qz + l.qy * r.qw + l.qz * r.qx,
            l.qw * r.qz + l.qx * r.qy - l.qy * r.qx + l.qz * r.qw,
            l.qw * r.qw - l.qx * r.qx - l.qy * r.qy - l.qz * r.qz,
        )
    }
}

impl Mul<Vec3> for UnitQuaternion {
    type Output = Vec3;
    fn mul(self, v: Vec3) -> Vec3 {
        self.rotate(v)
    }
}

impl TryFrom<[f64; 4]> for UnitQuaternion {
    type Error = InvalidQuaternion;
    fn try_from(q: [f64; 4]) -> Result<Self, Self::Error> {
        Self::from_array(q)
    }
}

impl From<UnitQuaternion> for [f64; 4] {
    fn from(q: UnitQuaternion) -> Self {
        q.to_array()
    }
}

/// Position plus orientation; the SE(3) element used for camera, TCP and
/// gripper frames.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec3,
    pub orientation: UnitQuaternion,
}

impl Pose {
    pub const IDENTITY: Pose = Pose {
        position: Vec3::ZERO,
        orientation: UnitQuaternion::IDENTITY,
    };

    pub fn new(position: Vec3, orientation: UnitQuaternion) -> Self {
        Self {
            position,
            orientation,
        }
    }

    pub fn identity() -> Self {
        Self::IDENTITY
    }

    pub fn from_translation(position: Vec3) -> Self {
        Self::new(position, UnitQuaternion::IDENTITY)
    }

    pub fn from_rotation(orientation: UnitQuaternion) -> Self {
        Self::new(Vec3::ZERO, orientation)
    }

    /// `[x, y, z, qx, qy, qz, qw]`, the row layout of episode `qpos`.
    pub fn to_row(&self) -> [f64; 7] {
        let q = self.orientation.to_array();
        [
            self.position.x,
            self.position.y,
            self.position.z,
            q[0],
            q[1],
            q[2],
            q[3],
        ]
    }

    pub fn from_row(row: &[f64; 7]) -> Result<Self, InvalidQuaternion> {
        Ok(Self::new(
            Vec3::new(row[0], row[1], row[2]),
            UnitQuaternion::new(row[3], row[4], row[5], row[6])?,
        ))
    }

    pub fn transform_point(&self, p: Vec3) -> Vec3 {
        self.position + self.orientation.rotate(p)
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        compose(self, other)
    }

    pub fn inverse(&self) -> Pose {
        inverse(self)
    }
}

/// Translation plus local rotation between consecutive TCP frames.
///
/// `translation` is expressed in the base frame, `rotation` in the frame of
/// the earlier pose.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RelativePose {
    pub translation: Vec3,
    pub rotation: UnitQuaternion,
}

impl RelativePose {
    pub fn to_row(&self) -> [f64; 7] {
        Pose::new(self.translation, self.rotation).to_row()
    }
}

/// `a ∘ b`: rotate-then-translate composition.
pub fn compose(a: &Pose, b: &Pose) -> Pose {
    Pose {
        position: a.position + a.orientation.rotate(b.position),
        orientation: a.orientation * b.orientation,
    }
}

pub fn inverse(p: &Pose) -> Pose {
    let r_inv = p.orientation.inverse();
    Pose {
        position: -r_inv.rotate(p.position),
        orientation: r_inv,
    }
}

/// Camera pose in the robot base frame from the tracker's pose relative to
/// its initial pose.
///
/// `position = p_b2g + p_i - R_b2g * delta_c2g`, `orientation = R_b2g * R_i`.
pub fn camera_pose_in_base(base_gripper: &Pose, delta_c2g: Vec3, tracker: &Pose) -> Pose {
    camera_pose_in_base_with_rotation(base_gripper, delta_c2g, tracker, base_gripper.orientation)
}

/// Same as [`camera_pose_in_base`] but with an explicit base rotation used for
/// the orientation term instead of the initial gripper orientation.
pub fn camera_pose_in_base_with_rotation(
    base_gripper: &Pose,
    delta_c2g: Vec3,
    tracker: &Pose,
    base_rotation: UnitQuaternion,
) -> Pose {
    Pose {
        position: base_gripper.position + tracker.position
            - base_gripper.orientation.rotate(delta_c2g),
        orientation: base_rotation * tracker.orientation,
    }
}

/// TCP pose from the camera pose: `p_cam + R_cam * delta_c2g`, orientation kept.
pub fn tcp_from_camera(cam: &Pose, delta_c2g: Vec3) -> Pose {
    Pose {
        position: cam.position + cam.orientation.rotate(delta_c2g),
        orientation: cam.orientation,
    }
}

/// Step between consecutive absolute TCP poses: base-frame translation
/// difference and local rotation `R_i^-1 * R_next`.
pub fn relative_step(ee_i: &Pose, ee_next: &Pose) -> RelativePose {
    RelativePose {
        translation: ee_next.position - ee_i.position,
        rotation: ee_i.orientation.inverse() * ee_next.orientation,
    }
}

/// All consecutive steps of an absolute trajectory (`len - 1` entries).
pub fn relative_trajectory(traj: &[Pose]) -> Vec<RelativePose> {
    traj.windows(2)
        .map(|w| relative_step(&w[0], &w[1]))
        .collect()
}

/// Chains relative steps back into absolute poses; the inverse of
/// [`relative_trajectory`]. The output has `steps.len() + 1` poses.
pub fn integrate_relative(initial: &Pose, steps: &[RelativePose]) -> Vec<Pose> {
    let mut out = Vec::with_capacity(steps.len() + 1);
    let mut current = *initial;
    out.push(current);
    for step in steps {
        current = Pose {
            position: current.position + step.translation,
            orientation: current.orientation * step.rotation,
        };
        out.push(current);
    }
    out
}

/// Mounting calibration that maps tracker poses to TCP poses in the base frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackerMount {
    /// Known initial gripper pose in the base frame.
    pub base_gripper: Pose,
    /// Offset from tracker center to gripper center, in the camera frame.
    pub delta_c2g: Vec3,
    /// Rotation applied to tracker orientations. `None` uses the initial
    /// gripper orientation.
    #[serde(default)]
    pub base_rotation: Option<UnitQuaternion>,
}

impl TrackerMount {
    pub fn new(base_gripper: Pose, delta_c2g: Vec3) -> Self {
        Self {
            base_gripper,
            delta_c2g,
            base_rotation: None,
        }
    }

    pub fn base_rotation(&self) -> UnitQuaternion {
        self.base_rotation
            .unwrap_or(self.base_gripper.orientation)
    }

    pub fn camera_pose(&self, tracker: &Pose) -> Pose {
        camera_pose_in_base_with_rotation(
            &self.base_gripper,
            self.delta_c2g,
            tracker,
            self.base_rotation(),
        )
    }

    pub fn tcp_pose(&self, tracker: &Pose) -> Pose {
        tcp_from_camera(&self.camera_pose(tracker), self.delta_c2g)
    }

    /// Tracker reading that produces `tcp` under this mount; used to
    /// synthesize tracker logs from a known TCP trajectory.
    pub fn tracker_for_tcp(&self, tcp: &Pose) -> Pose {
        let orientation = self.base_rotation().inverse() * tcp.orientation;
        let position = tcp.position - self.base_gripper.position
            + self.base_gripper.orientation.rotate(self.delta_c2g)
            - tcp.orientation.rotate(self.delta_c2g);
        Pose::new(position, orientation)
    }
}
