//! Yaw/pitch angles, unit direction vectors, and head⊕eye gaze composition.
//!
//! Frame: +z points straight ahead (toward the camera), +x toward the
//! subject's left, +y up. A pose `(yaw, pitch)` in degrees maps to
//! `(cos θ·sin ψ, sin θ, cos θ·cos ψ)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::GeometryError;

/// Tolerance on `‖v‖` accepted by [`vec_to_yawpitch`].
pub const UNIT_TOLERANCE: f64 = 1e-6;

/// A yaw/pitch pair in degrees. Positive yaw is the subject's left,
/// positive pitch is up.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct YawPitch {
    pub yaw: f64,
    pub pitch: f64,
}

impl YawPitch {
    pub const ZERO: YawPitch = YawPitch { yaw: 0.0, pitch: 0.0 };

    pub const fn new(yaw: f64, pitch: f64) -> Self {
        Self { yaw, pitch }
    }

    pub fn is_finite(&self) -> bool {
        self.yaw.is_finite() && self.pitch.is_finite()
    }

    /// Canonical form: yaw in (−180, 180], pitch in [−90, 90].
    ///
    /// A pitch past the pole flips the yaw by half a turn. At exactly ±90
    /// pitch the yaw is reported as 0.
    pub fn normalized(&self) -> Self {
        let mut pitch = wrap_deg(self.pitch);
        let mut yaw = self.yaw;
        if pitch > 90.0 {
            pitch = 180.0 - pitch;
            yaw += 180.0;
        } else if pitch < -90.0 {
            pitch = -180.0 - pitch;
            yaw += 180.0;
        }
        if pitch.abs() == 90.0 {
            yaw = 0.0;
        }
        Self { yaw: wrap_deg(yaw), pitch }
    }

    /// The left/right mirror image of this pose.
    pub fn mirrored(&self) -> Self {
        Self { yaw: -self.yaw, pitch: self.pitch }
    }
}

impl fmt::Display for YawPitch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.yaw, self.pitch)
    }
}

/// Wraps an angle into (−180, 180].
pub fn wrap_deg(a: f64) -> f64 {
    let mut r = a % 360.0;
    if r <= -180.0 {
        r += 360.0;
    } else if r > 180.0 {
        r -= 360.0;
    }
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// Smallest signed difference `a − b` between two angles, in (−180, 180].
pub fn angle_diff_deg(a: f64, b: f64) -> f64 {
    wrap_deg(a - b)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitVec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl UnitVec3 {
    /// Builds a unit vector, rejecting inputs whose norm is off by more
    /// than [`UNIT_TOLERANCE`].
    pub fn try_new(x: f64, y: f64, z: f64) -> Result<Self, GeometryError> {
        let v = Self { x, y, z };
        let n = v.norm();
        if !n.is_finite() || (n - 1.0).abs() > UNIT_TOLERANCE {
            return Err(GeometryError::InvalidVector { x, y, z, norm: n });
        }
        Ok(v)
    }

    /// Scales an arbitrary non-zero vector to unit length.
    pub fn normalize(x: f64, y: f64, z: f64) -> Result<Self, GeometryError> {
        let n = (x * x + y * y + z * z).sqrt();
        if !(n.is_finite() && n > 0.0) {
            return Err(GeometryError::InvalidVector { x, y, z, norm: n });
        }
        Ok(Self { x: x / n, y: y / n, z: z / n })
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn dot(&self, o: &UnitVec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

/// Order in which the two elementary rotations are applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EulerOrder {
    YawThenPitch,
    PitchThenYaw,
}

/// Whether the second rotation is about the rotated (intrinsic) or the
/// fixed camera (extrinsic) axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Frame {
    Intrinsic,
    Extrinsic,
}

/// Rotation convention used to turn a head yaw/pitch into a rotation
/// matrix. Always right-handed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Convention {
    pub order: EulerOrder,
    pub frame: Frame,
}

impl Convention {
    /// All candidates, in tie-break order.
    pub const ALL: [Convention; 4] = [
        Convention { order: EulerOrder::YawThenPitch, frame: Frame::Intrinsic },
        Convention { order: EulerOrder::YawThenPitch, frame: Frame::Extrinsic },
        Convention { order: EulerOrder::PitchThenYaw, frame: Frame::Intrinsic },
        Convention { order: EulerOrder::PitchThenYaw, frame: Frame::Extrinsic },
    ];

    pub const fn new(order: EulerOrder, frame: Frame) -> Self {
        Self { order, frame }
    }

    /// True when the matrix is `R_yaw · R_pitch` (pitch applied in the
    /// head's own frame after the yaw turn); false for `R_pitch · R_yaw`.
    fn yaw_outermost(&self) -> bool {
        matches!(
            (self.order, self.frame),
            (EulerOrder::YawThenPitch, Frame::Intrinsic) | (EulerOrder::PitchThenYaw, Frame::Extrinsic)
        )
    }

    /// Rotation matrix (row-major) for a head pose under this convention.
    pub fn rotation(&self, head: YawPitch) -> Mat3 {
        let ry = rot_yaw(head.yaw);
        let rx = rot_pitch(head.pitch);
        if self.yaw_outermost() {
            ry.mul(&rx)
        } else {
            rx.mul(&ry)
        }
    }
}

impl Default for Convention {
    fn default() -> Self {
        Convention::ALL[0]
    }
}

impl fmt::Display for Convention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let order = match self.order {
            EulerOrder::YawThenPitch => "yaw-then-pitch",
            EulerOrder::PitchThenYaw => "pitch-then-yaw",
        };
        let frame = match self.frame {
            Frame::Intrinsic => "intrinsic",
            Frame::Extrinsic => "extrinsic",
        };
        write!(f, "{order}/{frame}")
    }
}

impl FromStr for Convention {
    type Err = GeometryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || GeometryError::UnknownConvention(s.to_string());
        let (o, fr) = s.trim().split_once('/').ok_or_else(bad)?;
        let order = match o {
            "yaw-then-pitch" => EulerOrder::YawThenPitch,
            "pitch-then-yaw" => EulerOrder::PitchThenYaw,
            _ => return Err(bad()),
        };
        let frame = match fr {
            "intrinsic" => Frame::Intrinsic,
            "extrinsic" => Frame::Extrinsic,
            _ => return Err(bad()),
        };
        Ok(Convention { order, frame })
    }
}

/// Minimal 3×3 row-major matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn mul(&self, o: &Mat3) -> Mat3 {
        let mut r = [[0.0; 3]; 3];
        for (i, row) in r.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = (0..3).map(|k| self.0[i][k] * o.0[k][j]).sum();
            }
        }
        Mat3(r)
    }

    pub fn transpose(&self) -> Mat3 {
        Mat3(std::array::from_fn(|i| std::array::from_fn(|j| self.0[j][i])))
    }

    pub fn apply(&self, v: [f64; 3]) -> [f64; 3] {
        let m = &self.0;
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    }
}

/// Rotation about +y taking +z toward +x by `deg`.
fn rot_yaw(deg: f64) -> Mat3 {
    let (s, c) = deg.to_radians().sin_cos();
    Mat3([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
}

/// Rotation about x taking +z toward +y by `deg` (pitch up).
fn rot_pitch(deg: f64) -> Mat3 {
    let (s, c) = deg.to_radians().sin_cos();
    Mat3([[1.0, 0.0, 0.0], [0.0, c, s], [0.0, -s, c]])
}

pub fn yawpitch_to_vec(p: YawPitch) -> UnitVec3 {
    let (sy, cy) = p.yaw.to_radians().sin_cos();
    let (sp, cp) = p.pitch.to_radians().sin_cos();
    UnitVec3 { x: cp * sy, y: sp, z: cp * cy }
}

pub fn vec_to_yawpitch(v: UnitVec3) -> Result<YawPitch, GeometryError> {
    let n = v.norm();
    if !n.is_finite() || (n - 1.0).abs() > UNIT_TOLERANCE {
        return Err(GeometryError::InvalidVector { x: v.x, y: v.y, z: v.z, norm: n });
    }
    Ok(vec_to_yawpitch_unchecked(v.as_array()))
}

fn vec_to_yawpitch_unchecked(v: [f64; 3]) -> YawPitch {
    let [x, y, z] = v;
    let pitch = y.clamp(-1.0, 1.0).asin().to_degrees();
    // gimbal tie-break at the poles
    if x.hypot(z) < 1e-12 {
        return YawPitch { yaw: 0.0, pitch: pitch.signum() * 90.0 };
    }
    let mut yaw = x.atan2(z).to_degrees();
    if yaw <= -180.0 {
        yaw += 360.0;
    }
    YawPitch { yaw, pitch }
}

/// Gaze direction of an eye pose expressed in the head frame, after the
/// head rotation is applied.
pub fn compose_gaze(head: YawPitch, eye: YawPitch, conv: Convention) -> YawPitch {
    let r = conv.rotation(head);
    let g = r.apply(yawpitch_to_vec(eye).as_array());
    vec_to_yawpitch_unchecked(g)
}

/// Inverse of `compose_gaze`: the eye pose that, under `head`, looks along
/// `gaze`.
pub fn eye_from_gaze(head: YawPitch, gaze: YawPitch, conv: Convention) -> YawPitch {
    let r = conv.rotation(head).transpose();
    vec_to_yawpitch_unchecked(r.apply(yawpitch_to_vec(gaze).as_array()))
}

/// Geodesic angle between two directions, in degrees.
///
/// Equal to `acos(clamp(a·b))`; evaluated as `atan2(‖a×b‖, a·b)`, which
/// keeps full precision for nearly parallel directions.
pub fn angular_error_deg(a: YawPitch, b: YawPitch) -> f64 {
    let u = yawpitch_to_vec(a);
    let v = yawpitch_to_vec(b);
    let cx = u.y * v.z - u.z * v.y;
    let cy = u.z * v.x - u.x * v.z;
    let cz = u.x * v.y - u.y * v.x;
    let cross = (cx * cx + cy * cy + cz * cz).sqrt();
    cross.atan2(u.dot(&v)).to_degrees()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eye_from_gaze_inverts_composition() {
        for conv in Convention::ALL {
            let head = YawPitch::new(40.0, -20.0);
            let eye = YawPitch::new(-30.0, 15.0);
            let back = eye_from_gaze(head, compose_gaze(head, eye, conv), conv);
            assert!(close(back.yaw, eye.yaw, 1e-9) && close(back.pitch, eye.pitch, 1e-9), "{conv}: {back}");
        }
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn axis_examples() {
        let v = yawpitch_to_vec(YawPitch::new(0.0, 0.0));
        assert_eq!((v.x, v.y, v.z), (0.0, 0.0, 1.0));
        let v = yawpitch_to_vec(YawPitch::new(90.0, 0.0));
        assert!(close(v.x, 1.0, 1e-15) && close(v.y, 0.0, 1e-15) && close(v.z, 0.0, 1e-15));
        let v = yawpitch_to_vec(YawPitch::new(0.0, 90.0));
        assert!(close(v.x, 0.0, 1e-15) && close(v.y, 1.0, 1e-15) && close(v.z, 0.0, 1e-15));
    }

    #[test]
    fn inverse_examples() {
        let p = vec_to_yawpitch(UnitVec3 { x: 0.0, y: 0.0, z: 1.0 }).unwrap();
        assert_eq!(p, YawPitch::new(0.0, 0.0));
        let p = vec_to_yawpitch(UnitVec3 { x: 0.0, y: 0.0, z: -1.0 }).unwrap();
        assert_eq!(p, YawPitch::new(180.0, 0.0));
        let p = vec_to_yawpitch(UnitVec3 { x: -0.0, y: 0.0, z: -1.0 }).unwrap();
        assert_eq!(p.yaw, 180.0);
        // 0.8660 is sqrt(3)/2 rounded; direct trig gives atan2(0.866, 0.5)
        let x = 3f64.sqrt() / 2.0;
        let p = vec_to_yawpitch(UnitVec3 { x, y: 0.0, z: 0.5 }).unwrap();
        assert!(close(p.yaw, 60.0, 1e-12));
        // the four-digit literal 0.8660 is itself off-unit by 2e-5
        assert!(UnitVec3::try_new(0.8660, 0.0, 0.5).is_err());
    }

    #[test]
    fn non_unit_vector_rejected() {
        let err = vec_to_yawpitch(UnitVec3 { x: 0.0, y: 0.0, z: 2.0 }).unwrap_err();
        assert!(matches!(err, GeometryError::InvalidVector { .. }));
        assert!(UnitVec3::try_new(1.0, 1.0, 0.0).is_err());
        assert!(UnitVec3::normalize(0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn pole_tie_break() {
        let p = vec_to_yawpitch(yawpitch_to_vec(YawPitch::new(37.0, 90.0))).unwrap();
        assert_eq!(p.yaw, 0.0);
        assert!(close(p.pitch, 90.0, 1e-9));
        assert_eq!(YawPitch::new(12.0, -90.0).normalized(), YawPitch::new(0.0, -90.0));
    }

    #[test]
    fn normalization() {
        assert_eq!(YawPitch::new(-180.0, 0.0).normalized(), YawPitch::new(180.0, 0.0));
        assert_eq!(YawPitch::new(370.0, 10.0).normalized(), YawPitch::new(10.0, 10.0));
        let n = YawPitch::new(0.0, 100.0).normalized();
        assert!(close(n.pitch, 80.0, 1e-12) && close(n.yaw, 180.0, 1e-12));
        let n = YawPitch::new(30.0, -120.0).normalized();
        assert!(close(n.pitch, -60.0, 1e-12) && close(n.yaw, -150.0, 1e-12));
    }

    #[test]
    fn compose_examples() {
        for conv in Convention::ALL {
            let g = compose_gaze(YawPitch::ZERO, YawPitch::new(37.0, -12.0), conv);
            assert!(close(g.yaw, 37.0, 1e-12) && close(g.pitch, -12.0, 1e-12), "{conv}: {g}");
            let g = compose_gaze(YawPitch::new(30.0, 0.0), YawPitch::ZERO, conv);
            assert!(close(g.yaw, 30.0, 1e-12) && close(g.pitch, 0.0, 1e-12), "{conv}: {g}");
            let g = compose_gaze(YawPitch::new(60.0, 0.0), YawPitch::new(50.0, 10.0), conv);
            assert!(angle_diff_deg(g.yaw, 109.0).abs() <= 2.0 && close(g.pitch, 10.0, 2.0), "{conv}: {g}");
        }
    }

    #[test]
    fn identity_eye_returns_head_for_yaw_outer_matrix() {
        let conv = Convention::ALL[0];
        for hy in (-70..=70).step_by(10) {
            for hp in (-70..=70).step_by(10) {
                let h = YawPitch::new(hy as f64, hp as f64);
                let g = compose_gaze(h, YawPitch::ZERO, conv);
                assert!(close(g.yaw, h.yaw, 1e-9) && close(g.pitch, h.pitch, 1e-9));
            }
        }
    }

    #[test]
    fn pitch_outer_matrix_moves_pitched_heads() {
        // R_pitch·R_yaw does not map +z onto the head direction once both
        // angles are non-zero.
        let conv = Convention::new(EulerOrder::YawThenPitch, Frame::Extrinsic);
        let g = compose_gaze(YawPitch::new(30.0, 30.0), YawPitch::ZERO, conv);
        assert!((g.yaw - 30.0).abs() > 1.0);
    }

    #[test]
    fn angular_error_examples() {
        let a = YawPitch::new(17.0, -4.0);
        assert_eq!(angular_error_deg(a, a), 0.0);
        assert!(close(angular_error_deg(YawPitch::ZERO, YawPitch::new(90.0, 0.0)), 90.0, 1e-12));
        assert!(close(angular_error_deg(YawPitch::ZERO, YawPitch::new(60.0, 0.0)), 60.0, 1e-12));
    }

    #[test]
    fn convention_parse_roundtrip() {
        for c in Convention::ALL {
            assert_eq!(c.to_string().parse::<Convention>().unwrap(), c);
        }
        assert!("sideways/inside".parse::<Convention>().is_err());
    }

    #[test]
    fn wrap_and_diff() {
        assert_eq!(wrap_deg(540.0), 180.0);
        assert_eq!(wrap_deg(-540.0), 180.0);
        assert_eq!(angle_diff_deg(179.0, -179.0), -2.0);
    }
}
