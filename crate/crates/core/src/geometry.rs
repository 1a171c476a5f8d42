//! Coordinate systems, the two rotated sphere frames, the fusion weight map
//! and the look-at camera model.
//!
//! World axes: the head sits at the origin, `+z` points out of the face,
//! `+y` is up and `+x` is the subject's left.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::real::Real;

/// Default radius of the represented spherical region, in scene units.
pub const DEFAULT_SCENE_RADIUS: f64 = 0.5;
/// Camera distance from the origin.
pub const CAMERA_RADIUS: f64 = 2.7;
/// Normalized focal length shared by every camera.
pub const FOCAL: f64 = 4.2647;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Vec3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> Vec3<T> {
    pub const fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> T {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Self {
        let n = self.norm();
        self * (T::one() / n)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn cast<U: Real>(self) -> Vec3<U> {
        Vec3::new(U::c(self.x.f64()), U::c(self.y.f64()), U::c(self.z.f64()))
    }

    pub fn to_array(self) -> [T; 3] {
        [self.x, self.y, self.z]
    }
}

impl<T: Real> Add for Vec3<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Real> Sub for Vec3<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<T: Real> Mul<T> for Vec3<T> {
    type Output = Self;
    fn mul(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }
}

impl<T: Real> Neg for Vec3<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

/// `(r, theta, phi)` with theta measured from the `+z` polar axis and phi
/// the azimuth of `(x, y)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SphericalCoord<T> {
    pub r: T,
    pub theta: T,
    pub phi: T,
}

impl<T: Real> SphericalCoord<T> {
    pub fn new(r: T, theta: T, phi: T) -> Self {
        Self { r, theta, phi }
    }
}

/// Cartesian to spherical. Total: phi is 0 at the origin and on the polar axis.
pub fn cart_to_sph<T: Real>(p: Vec3<T>) -> SphericalCoord<T> {
    let r = p.norm();
    if r == T::zero() {
        return SphericalCoord::new(T::zero(), T::zero(), T::zero());
    }
    let cos_t = (p.z / r).max(-T::one()).min(T::one());
    let theta = cos_t.acos();
    let phi = if p.x == T::zero() && p.y == T::zero() {
        T::zero()
    } else {
        p.y.atan2(p.x)
    };
    SphericalCoord::new(r, theta, phi)
}

pub fn sph_to_cart<T: Real>(s: SphericalCoord<T>) -> Vec3<T> {
    let (st, ct) = s.theta.sin_cos();
    let (sp, cp) = s.phi.sin_cos();
    Vec3::new(s.r * st * cp, s.r * st * sp, s.r * ct)
}

/// Row-major 3x3 matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn from_rows(a: Vec3<f64>, b: Vec3<f64>, c: Vec3<f64>) -> Self {
        Mat3([a.to_array(), b.to_array(), c.to_array()])
    }

    pub fn row(&self, i: usize) -> Vec3<f64> {
        Vec3::new(self.0[i][0], self.0[i][1], self.0[i][2])
    }

    pub fn transpose(&self) -> Self {
        let m = &self.0;
        Mat3([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn mul_mat(&self, o: &Mat3) -> Mat3 {
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.0[i][k] * o.0[k][j]).sum();
            }
        }
        Mat3(out)
    }

    pub fn apply<T: Real>(&self, p: Vec3<T>) -> Vec3<T> {
        let m = |i: usize, j: usize| T::c(self.0[i][j]);
        Vec3::new(
            m(0, 0) * p.x + m(0, 1) * p.y + m(0, 2) * p.z,
            m(1, 0) * p.x + m(1, 1) * p.y + m(1, 2) * p.z,
            m(2, 0) * p.x + m(2, 1) * p.y + m(2, 2) * p.z,
        )
    }

    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Largest absolute entry of `Mᵀ·M − I`.
    pub fn orthonormality_error(&self) -> f64 {
        let g = self.transpose().mul_mat(self);
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g.0[i][j] - target).abs());
            }
        }
        worst
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FrameId {
    /// Unrotated world frame, polar axis `+z`.
    World,
    /// Polar axis on `±y`; seam on the back half-plane `x = 0, z < 0`.
    A,
    /// Polar axis on `±x`; seam on the front half-plane `y = 0, z > 0`.
    B,
}

/// A rotated spherical frame. `rotation` maps world Cartesian coordinates
/// into the frame before the standard spherical transform is applied.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SphereFrame {
    pub id: FrameId,
    pub rotation: Mat3,
}

impl SphereFrame {
    pub fn world() -> Self {
        Self {
            id: FrameId::World,
            rotation: Mat3::IDENTITY,
        }
    }

    /// `(x', y', z') = (z, x, y)`: `theta_A = arccos(y / r)`, `tan phi_A = x / z`.
    pub fn a() -> Self {
        Self {
            id: FrameId::A,
            rotation: Mat3([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]),
        }
    }

    /// `(x', y', z') = (-z, -y, -x)`: `theta_B = arccos(-x / r)`, `tan phi_B = y / z`.
    /// The azimuth origin faces `-z` so that the seam of B opens toward the
    /// face while the seam of A opens toward the back of the head.
    pub fn b() -> Self {
        Self {
            id: FrameId::B,
            rotation: Mat3([[0.0, 0.0, -1.0], [0.0, -1.0, 0.0], [-1.0, 0.0, 0.0]]),
        }
    }

    pub fn from_id(id: FrameId) -> Self {
        match id {
            FrameId::World => Self::world(),
            FrameId::A => Self::a(),
            FrameId::B => Self::b(),
        }
    }

    /// Polar axis of the frame expressed in world coordinates.
    pub fn polar_axis(&self) -> Vec3<f64> {
        self.rotation.row(2)
    }

    pub fn to_frame<T: Real>(&self, p: Vec3<T>) -> Vec3<T> {
        self.rotation.apply(p)
    }

    pub fn to_world<T: Real>(&self, p: Vec3<T>) -> Vec3<T> {
        self.rotation.transpose().apply(p)
    }
}

/// Spherical coordinates of a world point in the given frame.
pub fn frame_coords<T: Real>(frame: &SphereFrame, p: Vec3<T>) -> SphericalCoord<T> {
    cart_to_sph(frame.to_frame(p))
}

/// Cosine weight map: 1 at `(pi/2, 0)`, 0 on the poles and on the seam.
pub fn fusion_weight<T: Real>(theta: T, phi: T) -> T {
    let half = T::c(0.5);
    let polar = (T::one() + (T::c(2.0) * theta - T::c(PI)).cos()) * half;
    let seam = (T::one() + phi.cos()) * half;
    polar * seam
}

/// Normalized pinhole intrinsics; image coordinates span `[0, 1]²`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraIntrinsics(pub Mat3);

impl Default for CameraIntrinsics {
    fn default() -> Self {
        CameraIntrinsics(Mat3([[FOCAL, 0.0, 0.5], [0.0, FOCAL, 0.5], [0.0, 0.0, 1.0]]))
    }
}

impl CameraIntrinsics {
    pub fn focal(&self) -> (f64, f64) {
        (self.0 .0[0][0], self.0 .0[1][1])
    }

    pub fn principal(&self) -> (f64, f64) {
        (self.0 .0[0][2], self.0 .0[1][2])
    }
}

/// World-to-camera rigid transform of a look-at camera.
///
/// Camera axes are right / up / back, so the camera looks down its own `-z`
/// and the origin lands at `(0, 0, -radius)` in camera space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraPose {
    pub extrinsic: [[f64; 4]; 4],
    pub radius: f64,
}

impl CameraPose {
    pub fn rotation(&self) -> Mat3 {
        let e = &self.extrinsic;
        Mat3([
            [e[0][0], e[0][1], e[0][2]],
            [e[1][0], e[1][1], e[1][2]],
            [e[2][0], e[2][1], e[2][2]],
        ])
    }

    pub fn translation(&self) -> Vec3<f64> {
        let e = &self.extrinsic;
        Vec3::new(e[0][3], e[1][3], e[2][3])
    }

    /// Camera center in world coordinates: `-Rᵀ t`.
    pub fn center(&self) -> Vec3<f64> {
        -self.rotation().transpose().apply(self.translation())
    }

    pub fn forward(&self) -> Vec3<f64> {
        -self.rotation().row(2)
    }

    pub fn from_extrinsic(extrinsic: [[f64; 4]; 4]) -> Self {
        let mut pose = CameraPose { extrinsic, radius: 0.0 };
        pose.radius = pose.center().norm();
        pose
    }

    /// Yaw of the camera center about `+y`, zero in front of the face.
    pub fn yaw(&self) -> f64 {
        let c = self.center();
        c.x.atan2(c.z)
    }
}

/// Look-at camera on the sphere of the given radius at world spherical
/// direction `(theta, phi)`. Up is world `+y`, falling back to `+z` when the
/// view direction is parallel to `y`.
pub fn camera_from_view(theta: f64, phi: f64, radius: f64) -> CameraPose {
    let center = sph_to_cart(SphericalCoord::new(radius, theta, phi));
    let forward = (-center).normalized();
    let mut up = Vec3::new(0.0, 1.0, 0.0);
    if forward.cross(up).norm() < 1e-9 {
        up = Vec3::new(0.0, 0.0, 1.0);
    }
    let right = forward.cross(up).normalized();
    let true_up = right.cross(forward);
    let back = -forward;
    let mut extrinsic = [[0.0; 4]; 4];
    for (i, axis) in [right, true_up, back].into_iter().enumerate() {
        extrinsic[i][0] = axis.x;
        extrinsic[i][1] = axis.y;
        extrinsic[i][2] = axis.z;
    }
    extrinsic[2][3] = -radius;
    extrinsic[3][3] = 1.0;
    CameraPose { extrinsic, radius }
}

/// Direction on the unit sphere for a head-centric yaw (about `+y`, zero at
/// `+z`) and pitch (positive looks from above).
pub fn yaw_pitch_direction(yaw: f64, pitch: f64) -> Vec3<f64> {
    Vec3::new(yaw.sin() * pitch.cos(), pitch.sin(), yaw.cos() * pitch.cos())
}

/// Full camera: pose plus intrinsics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub pose: CameraPose,
    pub intrinsics: CameraIntrinsics,
}

impl Camera {
    pub fn new(pose: CameraPose) -> Self {
        Self {
            pose,
            intrinsics: CameraIntrinsics::default(),
        }
    }

    pub fn from_view(theta: f64, phi: f64) -> Self {
        Self::new(camera_from_view(theta, phi, CAMERA_RADIUS))
    }

    /// Camera looking at the origin from head-centric yaw/pitch.
    pub fn from_yaw_pitch(yaw: f64, pitch: f64) -> Self {
        let s = cart_to_sph(yaw_pitch_direction(yaw, pitch));
        Self::from_view(s.theta, s.phi)
    }

    /// World-space ray through normalized image point `(u, v)`; `v` grows downward.
    pub fn ray_through(&self, u: f64, v: f64) -> (Vec3<f64>, Vec3<f64>) {
        let (fx, fy) = self.intrinsics.focal();
        let (cx, cy) = self.intrinsics.principal();
        let d_cam = Vec3::new((u - cx) / fx, -(v - cy) / fy, -1.0);
        let dir = self.pose.rotation().transpose().apply(d_cam).normalized();
        (self.pose.center(), dir)
    }

    /// Projects a world point to normalized image coordinates, if in front.
    pub fn project(&self, p: Vec3<f64>) -> Option<(f64, f64)> {
        let q = self.pose.rotation().apply(p) + self.pose.translation();
        if q.z >= 0.0 {
            return None;
        }
        let depth = -q.z;
        let (fx, fy) = self.intrinsics.focal();
        let (cx, cy) = self.intrinsics.principal();
        Some((fx * q.x / depth + cx, -fy * q.y / depth + cy))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn cart_to_sph_axes() {
        let s = cart_to_sph(Vec3::new(0.0, 0.0, 1.0));
        assert_eq!((s.r, s.theta, s.phi), (1.0, 0.0, 0.0));
        let s = cart_to_sph(Vec3::new(1.0, 0.0, 0.0));
        assert_abs_diff_eq!(s.theta, PI / 2.0);
        assert_eq!(s.phi, 0.0);
        let s = cart_to_sph(Vec3::new(0.0, 1.0, 0.0));
        assert_abs_diff_eq!(s.theta, PI / 2.0);
        assert_abs_diff_eq!(s.phi, PI / 2.0);
        let s = cart_to_sph(Vec3::<f64>::zero());
        assert_eq!((s.r, s.theta, s.phi), (0.0, 0.0, 0.0));
        assert_eq!(cart_to_sph(Vec3::new(0.0, 0.0, -2.0)).phi, 0.0);
    }

    #[test]
    fn sph_to_cart_cases() {
        let p = sph_to_cart(SphericalCoord::new(1.0, PI / 2.0, PI));
        assert_abs_diff_eq!(p.x, -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.y, 0.0, epsilon = 1e-12);
        let p = sph_to_cart(SphericalCoord::new(2.0f64, 0.0, 1.234));
        assert_abs_diff_eq!(p.z, 2.0);
        assert_abs_diff_eq!(p.x.hypot(p.y), 0.0);
        let p = sph_to_cart(SphericalCoord::new(1.0, PI / 2.0, -PI / 2.0));
        assert_abs_diff_eq!(p.y, -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.x, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn frame_poles_and_equator() {
        let a = SphereFrame::a();
        let b = SphereFrame::b();
        assert_abs_diff_eq!(frame_coords(&a, Vec3::new(0.0, 1.0, 0.0)).theta, 0.0);
        assert_abs_diff_eq!(frame_coords(&b, Vec3::new(-1.0, 0.0, 0.0)).theta, 0.0);
        assert_abs_diff_eq!(frame_coords(&a, Vec3::new(0.0, 0.0, 1.0)).theta, PI / 2.0);
        for f in [a, b, SphereFrame::world()] {
            assert!(f.rotation.orthonormality_error() < 1e-12);
            assert_abs_diff_eq!(f.rotation.det(), 1.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(a.polar_axis().dot(b.polar_axis()), 0.0);
    }

    #[test]
    fn seams_open_in_opposite_directions() {
        // A is singular on the back, B on the front.
        let back = Vec3::new(0.0f64, 0.0, -1.0);
        let front = Vec3::new(0.0f64, 0.0, 1.0);
        assert_abs_diff_eq!(frame_coords(&SphereFrame::a(), back).phi.abs(), PI);
        assert_abs_diff_eq!(frame_coords(&SphereFrame::b(), front).phi.abs(), PI);
        assert_abs_diff_eq!(frame_coords(&SphereFrame::a(), front).phi, 0.0);
        assert_abs_diff_eq!(frame_coords(&SphereFrame::b(), back).phi, 0.0);
    }

    #[test]
    fn weight_map_values() {
        assert_eq!(fusion_weight(PI / 2.0, 0.0), 1.0);
        for phi in [-PI, -1.0, 0.0, 2.0, PI] {
            assert_abs_diff_eq!(fusion_weight(0.0, phi), 0.0);
            assert_abs_diff_eq!(fusion_weight(PI, phi), 0.0, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(fusion_weight(PI / 2.0, PI), 0.0);
        assert_abs_diff_eq!(fusion_weight(PI / 2.0, -PI), 0.0);
    }

    #[test]
    fn camera_front_view() {
        let pose = camera_from_view(0.0, 0.0, CAMERA_RADIUS);
        let c = pose.center();
        assert_abs_diff_eq!(c.z, CAMERA_RADIUS, epsilon = 1e-12);
        assert_eq!(pose.translation(), Vec3::new(0.0, 0.0, -CAMERA_RADIUS));
        let f = pose.forward();
        assert_abs_diff_eq!(f.z, -1.0, epsilon = 1e-12);
        let k = CameraIntrinsics::default();
        assert_eq!(k.focal(), (4.2647, 4.2647));
        assert_eq!(k.principal(), (0.5, 0.5));
        assert_eq!(k.0 .0[2], [0.0, 0.0, 1.0]);
    }

    #[test]
    fn camera_side_view_is_on_x() {
        let pose = camera_from_view(PI / 2.0, 0.0, CAMERA_RADIUS);
        let c = pose.center();
        assert_abs_diff_eq!(c.x, CAMERA_RADIUS, epsilon = 1e-12);
        assert_abs_diff_eq!(pose.translation().z, -CAMERA_RADIUS);
    }

    #[test]
    fn camera_pole_fallback() {
        let pose = camera_from_view(PI / 2.0, PI / 2.0, CAMERA_RADIUS);
        assert!(pose.rotation().orthonormality_error() < 1e-12);
        assert_abs_diff_eq!(pose.center().y, CAMERA_RADIUS, epsilon = 1e-12);
    }

    #[test]
    fn project_inverts_ray() {
        let cam = Camera::from_yaw_pitch(0.7, 0.2);
        let (o, d) = cam.ray_through(0.31, 0.62);
        let p = o + d * 2.5;
        let (u, v) = cam.project(p).unwrap();
        assert_abs_diff_eq!(u, 0.31, epsilon = 1e-12);
        assert_abs_diff_eq!(v, 0.62, epsilon = 1e-12);
    }

    #[test]
    fn yaw_pitch_front() {
        let cam = Camera::from_yaw_pitch(0.0, 0.0);
        assert_abs_diff_eq!(cam.pose.center().z, CAMERA_RADIUS, epsilon = 1e-12);
        let cam = Camera::from_yaw_pitch(PI / 2.0, 0.0);
        assert_abs_diff_eq!(cam.pose.yaw(), PI / 2.0, epsilon = 1e-12);
    }
}
