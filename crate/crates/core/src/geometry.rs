//! Rigid poses, rotations and the pinhole camera model.
//!
//! World and robot-base frames coincide. Camera frames follow the usual
//! vision convention: x right, y down, z along the optical axis.

use nalgebra::{Matrix3, Quaternion, Rotation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smallest camera-frame depth considered in front of the camera.
pub const MIN_DEPTH: f64 = 1e-6;

/// Default height of the raise and alignment moves added around keyposes.
pub const DEFAULT_LIFT_HEIGHT: f64 = 0.15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point is behind the camera (camera-frame z = {z})")]
    BehindCamera { z: f64 },
    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("quaternion has zero or non-finite norm")]
    DegenerateQuaternion,
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
}

/// Canonical representative of a rotation: unit norm, `w >= 0`, and when
/// `w == 0` the first nonzero vector component is positive.
pub fn canonicalize(q: Quaternion<f64>) -> Result<UnitQuaternion<f64>, GeometryError> {
    let norm = q.norm();
    if !norm.is_finite() || norm == 0.0 {
        return Err(GeometryError::DegenerateQuaternion);
    }
    // Already-unit inputs are left untouched so canonicalization is
    // bit-exactly idempotent (and survives a JSON round trip).
    let mut q = if (norm - 1.0).abs() <= 4.0 * f64::EPSILON {
        q
    } else {
        q / norm
    };
    let flip = if q.w != 0.0 {
        q.w < 0.0
    } else {
        [q.i, q.j, q.k].into_iter().find(|c| *c != 0.0).is_some_and(|c| c < 0.0)
    };
    if flip {
        q = -q;
    }
    Ok(UnitQuaternion::new_unchecked(q))
}

/// Rotation angle of `q` in degrees, in `[0, 180]`.
pub fn rotation_angle_deg(q: &UnitQuaternion<f64>) -> f64 {
    let v = q.vector().norm();
    (2.0 * v.atan2(q.w.abs())).to_degrees()
}

/// Angle of the relative rotation `reference⁻¹ · other`, in degrees.
pub fn relative_angle_deg(reference: &UnitQuaternion<f64>, other: &UnitQuaternion<f64>) -> f64 {
    // The product of identical rotations keeps rounding noise in its vector part.
    if reference == other {
        return 0.0;
    }
    rotation_angle_deg(&(reference.inverse() * other))
}

/// Intrinsic X-Y-Z Euler angles in degrees: `R = Rx(roll) · Ry(pitch) · Rz(yaw)`.
///
/// This is the single place where the token codec's angle convention lives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EulerXyz {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl EulerXyz {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn to_quaternion(self) -> UnitQuaternion<f64> {
        let rx = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), self.x.to_radians());
        let ry = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), self.y.to_radians());
        let rz = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), self.z.to_radians());
        rx * ry * rz
    }

    /// Extracts angles with `x, z ∈ [-180, 180)` and `y ∈ [-90, 90]`.
    /// At gimbal lock (`|y| = 90`) the z angle is set to zero.
    pub fn from_quaternion(q: &UnitQuaternion<f64>) -> Self {
        let m: Matrix3<f64> = q.to_rotation_matrix().into_inner();
        let sy = m[(0, 2)].clamp(-1.0, 1.0);
        let y = sy.asin();
        let (x, z) = if sy.abs() < 1.0 - 1e-12 {
            ((-m[(1, 2)]).atan2(m[(2, 2)]), (-m[(0, 1)]).atan2(m[(0, 0)]))
        } else {
            (m[(2, 1)].atan2(m[(1, 1)]), 0.0)
        };
        Self {
            x: wrap_deg(x.to_degrees()),
            y: y.to_degrees(),
            z: wrap_deg(z.to_degrees()),
        }
    }
}

/// Wraps an angle in degrees into `[-180, 180)`.
pub fn wrap_deg(a: f64) -> f64 {
    let w = (a + 180.0).rem_euclid(360.0) - 180.0;
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if w >= 180.0 {
        w - 360.0
    } else {
        w
    }
}

/// A rigid transform / 6-DoF pose. Positions are in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "PoseRepr", try_from = "PoseRepr")]
pub struct Pose6D {
    position: Vector3<f64>,
    orientation: UnitQuaternion<f64>,
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    position: [f64; 3],
    /// (w, x, y, z)
    orientation: [f64; 4],
}

impl From<Pose6D> for PoseRepr {
    fn from(p: Pose6D) -> Self {
        let q = p.orientation.quaternion();
        PoseRepr {
            position: [p.position.x, p.position.y, p.position.z],
            orientation: [q.w, q.i, q.j, q.k],
        }
    }
}

impl TryFrom<PoseRepr> for Pose6D {
    type Error = GeometryError;

    fn try_from(r: PoseRepr) -> Result<Self, Self::Error> {
        Pose6D::from_parts(r.position, r.orientation)
    }
}

impl Pose6D {
    pub fn new(position: Vector3<f64>, orientation: UnitQuaternion<f64>) -> Self {
        let orientation = canonicalize(*orientation.quaternion()).expect("unit quaternion has nonzero norm");
        Self { position, orientation }
    }

    pub fn identity() -> Self {
        Self::new(Vector3::zeros(), UnitQuaternion::identity())
    }

    pub fn from_translation(position: Vector3<f64>) -> Self {
        Self::new(position, UnitQuaternion::identity())
    }

    /// Builds a pose from `[x, y, z]` and a `[w, x, y, z]` quaternion, which is
    /// normalized and canonicalized.
    pub fn from_parts(position: [f64; 3], wxyz: [f64; 4]) -> Result<Self, GeometryError> {
        let q = canonicalize(Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]))?;
        Ok(Self {
            position: Vector3::from(position),
            orientation: q,
        })
    }

    pub fn position(&self) -> &Vector3<f64> {
        &self.position
    }

    pub fn orientation(&self) -> &UnitQuaternion<f64> {
        &self.orientation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.orientation.to_rotation_matrix().into_inner()
    }

    pub fn with_position(&self, position: Vector3<f64>) -> Self {
        Self {
            position,
            orientation: self.orientation,
        }
    }

    pub fn translated(&self, delta: Vector3<f64>) -> Self {
        self.with_position(self.position + delta)
    }

    /// Maps a point expressed in this pose's local frame to the parent frame.
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.orientation * p + self.position
    }

    pub fn inverse(&self) -> Self {
        let inv = self.orientation.inverse();
        Self::new(-(inv * self.position), inv)
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose6D) -> Self {
        Self::new(
            self.orientation * other.position + self.position,
            self.orientation * other.orientation,
        )
    }

    /// Linear interpolation of position and slerp of orientation, `t ∈ [0, 1]`.
    pub fn interpolate(&self, other: &Pose6D, t: f64) -> Self {
        let position = self.position.lerp(&other.position, t);
        let orientation = self
            .orientation
            .try_slerp(&other.orientation, t, 1e-12)
            .unwrap_or(self.orientation);
        Self::new(position, orientation)
    }
}

/// Pinhole intrinsics plus the world-to-camera extrinsic transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraRepr", into = "CameraRepr")]
pub struct CameraModel {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
    extrinsic: Pose6D,
}

#[derive(Serialize, Deserialize)]
struct CameraRepr {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
    extrinsic: Pose6D,
}

impl From<CameraModel> for CameraRepr {
    fn from(c: CameraModel) -> Self {
        CameraRepr {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
            extrinsic: c.extrinsic,
        }
    }
}

impl TryFrom<CameraRepr> for CameraModel {
    type Error = GeometryError;

    fn try_from(r: CameraRepr) -> Result<Self, Self::Error> {
        CameraModel::new(r.fx, r.fy, r.cx, r.cy, r.width, r.height, r.extrinsic)
    }
}

/// A pose expressed as normalized image coordinates, camera depth and
/// camera-frame orientation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageAction {
    pub u: f64,
    pub v: f64,
    /// Camera-frame z, meters.
    pub depth: f64,
    pub orientation: UnitQuaternion<f64>,
}

impl ImageAction {
    pub fn in_frame(&self) -> bool {
        (0.0..=1.0).contains(&self.u) && (0.0..=1.0).contains(&self.v)
    }
}

impl CameraModel {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
        extrinsic: Pose6D,
    ) -> Result<Self, GeometryError> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(GeometryError::InvalidCamera(format!(
                "focal lengths must be positive (fx={fx}, fy={fy})"
            )));
        }
        if !(cx > 0.0 && cx < width as f64) || !(cy > 0.0 && cy < height as f64) {
            return Err(GeometryError::InvalidCamera(format!(
                "principal point ({cx}, {cy}) outside {width}x{height} image"
            )));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            extrinsic,
        })
    }

    /// Camera at `eye` looking at `target` with world +z as up, square pixels
    /// and a centered principal point.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        fov_y_deg: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        let forward = target - eye;
        let forward = Unit::try_new(forward, 1e-12)
            .ok_or_else(|| GeometryError::InvalidCamera("eye coincides with target".into()))?;
        let right = Unit::try_new(forward.cross(&Vector3::z()), 1e-9)
            .ok_or_else(|| GeometryError::InvalidCamera("viewing direction parallel to up axis".into()))?;
        let down = forward.cross(&right);
        // Columns are the camera axes in world coordinates.
        let cam_to_world = Matrix3::from_columns(&[right.into_inner(), down, forward.into_inner()]);
        let world_to_cam = Rotation3::from_matrix_unchecked(cam_to_world.transpose());
        let q = UnitQuaternion::from_rotation_matrix(&world_to_cam);
        let extrinsic = Pose6D::new(-(q * eye), q);
        let fy = (height as f64 / 2.0) / (fov_y_deg.to_radians() / 2.0).tan();
        Self::new(
            fy,
            fy,
            width as f64 / 2.0,
            height as f64 / 2.0,
            width,
            height,
            extrinsic,
        )
    }

    pub fn fx(&self) -> f64 {
        self.fx
    }
    pub fn fy(&self) -> f64 {
        self.fy
    }
    pub fn cx(&self) -> f64 {
        self.cx
    }
    pub fn cy(&self) -> f64 {
        self.cy
    }
    pub fn width(&self) -> u32 {
        self.width
    }
    pub fn height(&self) -> u32 {
        self.height
    }
    pub fn extrinsic(&self) -> &Pose6D {
        &self.extrinsic
    }

    /// Vertical field of view in degrees.
    pub fn fov_y_deg(&self) -> f64 {
        (2.0 * (self.height as f64 / 2.0 / self.fy).atan()).to_degrees()
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        self.extrinsic.inverse().position
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.extrinsic.transform_point(p)
    }

    pub fn camera_to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.extrinsic.orientation.inverse() * (p - self.extrinsic.position)
    }

    /// Pixel coordinates (continuous, top-left corner at 0) and depth of a world point.
    pub fn project_point(&self, p: &Vector3<f64>) -> Result<(f64, f64, f64), GeometryError> {
        let c = self.world_to_camera(p);
        if c.z <= MIN_DEPTH {
            return Err(GeometryError::BehindCamera { z: c.z });
        }
        Ok((self.fx * c.x / c.z + self.cx, self.fy * c.y / c.z + self.cy, c.z))
    }

    /// World point seen at pixel `(x, y)` at camera depth `depth`.
    pub fn unproject_pixel(&self, x: f64, y: f64, depth: f64) -> Vector3<f64> {
        let c = Vector3::new((x - self.cx) * depth / self.fx, (y - self.cy) * depth / self.fy, depth);
        self.camera_to_world(&c)
    }

    /// World-frame ray direction (unit) through pixel `(x, y)`.
    pub fn pixel_ray(&self, x: f64, y: f64) -> Vector3<f64> {
        let c = Vector3::new((x - self.cx) / self.fx, (y - self.cy) / self.fy, 1.0);
        (self.extrinsic.orientation.inverse() * c).normalize()
    }

    pub fn project(&self, pose: &Pose6D) -> Result<ImageAction, GeometryError> {
        let (px, py, depth) = self.project_point(&pose.position)?;
        Ok(ImageAction {
            u: px / self.width as f64,
            v: py / self.height as f64,
            depth,
            orientation: self.extrinsic.orientation * pose.orientation,
        })
    }

    pub fn unproject(&self, action: &ImageAction) -> Result<Pose6D, GeometryError> {
        if !(action.depth > 0.0) {
            return Err(GeometryError::NonPositiveDepth(action.depth));
        }
        let p = self.unproject_pixel(
            action.u * self.width as f64,
            action.v * self.height as f64,
            action.depth,
        );
        Ok(Pose6D::new(
            p,
            self.extrinsic.orientation.inverse() * action.orientation,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gripper {
    Grasp,
    Release,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypose {
    pub pose: Pose6D,
    pub gripper: Gripper,
}

/// A pick-and-place trajectory: one grasp keypose followed by one release.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Keypose>", into = "Vec<Keypose>")]
pub struct Trajectory {
    keyposes: [Keypose; 2],
}

impl Trajectory {
    pub fn new(grasp: Pose6D, release: Pose6D) -> Self {
        Self {
            keyposes: [
                Keypose {
                    pose: grasp,
                    gripper: Gripper::Grasp,
                },
                Keypose {
                    pose: release,
                    gripper: Gripper::Release,
                },
            ],
        }
    }

    pub fn from_keyposes(keyposes: Vec<Keypose>) -> Result<Self, GeometryError> {
        match keyposes.as_slice() {
            [g, r] if g.gripper == Gripper::Grasp && r.gripper == Gripper::Release => Ok(Self::new(g.pose, r.pose)),
            [_, _] => Err(GeometryError::InvalidTrajectory(
                "keyposes must be ordered grasp then release".into(),
            )),
            other => Err(GeometryError::InvalidTrajectory(format!(
                "expected 2 keyposes, got {}",
                other.len()
            ))),
        }
    }

    pub fn keyposes(&self) -> &[Keypose; 2] {
        &self.keyposes
    }

    pub fn grasp(&self) -> &Pose6D {
        &self.keyposes[0].pose
    }

    pub fn release(&self) -> &Pose6D {
        &self.keyposes[1].pose
    }

    pub fn poses(&self) -> [Pose6D; 2] {
        [self.keyposes[0].pose, self.keyposes[1].pose]
    }

    /// Dense waypoints for execution: pre-grasp, grasp, lifted grasp,
    /// aligned above release, release. Only the move from lifted grasp to the
    /// aligned pose changes orientation.
    pub fn expand_waypoints(&self, lift_height: f64) -> Vec<Pose6D> {
        let up = Vector3::new(0.0, 0.0, lift_height);
        let grasp = *self.grasp();
        let release = *self.release();
        vec![
            grasp.translated(up),
            grasp,
            grasp.translated(up),
            release.translated(up),
            release,
        ]
    }
}

impl TryFrom<Vec<Keypose>> for Trajectory {
    type Error = GeometryError;

    fn try_from(v: Vec<Keypose>) -> Result<Self, Self::Error> {
        Self::from_keyposes(v)
    }
}

impl From<Trajectory> for Vec<Keypose> {
    fn from(t: Trajectory) -> Self {
        t.keyposes.to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn test_camera() -> CameraModel {
        CameraModel::new(500.0, 500.0, 320.0, 240.0, 640, 480, Pose6D::identity()).unwrap()
    }

    /// Independent pinhole projection written straight from the matrix form.
    fn oracle_project(cam: &CameraModel, p: [f64; 3]) -> (f64, f64, f64) {
        let r = cam.extrinsic().rotation_matrix();
        let t = cam.extrinsic().position();
        let mut c = [0.0; 3];
        for i in 0..3 {
            c[i] = r[(i, 0)] * p[0] + r[(i, 1)] * p[1] + r[(i, 2)] * p[2] + t[i];
        }
        let u = (cam.fx() * c[0] + cam.cx() * c[2]) / c[2];
        let v = (cam.fy() * c[1] + cam.cy() * c[2]) / c[2];
        (u / cam.width() as f64, v / cam.height() as f64, c[2])
    }

    #[test]
    fn optical_axis_projects_to_principal_point() {
        let cam = test_camera();
        let a = cam
            .project(&Pose6D::from_translation(Vector3::new(0.0, 0.0, 1.0)))
            .unwrap();
        assert_eq!(a.u, 320.0 / 640.0);
        assert_eq!(a.v, 240.0 / 480.0);
        assert_eq!(a.depth, 1.0);
    }

    #[test]
    fn off_axis_point() {
        let cam = test_camera();
        let a = cam
            .project(&Pose6D::from_translation(Vector3::new(0.1, 0.0, 1.0)))
            .unwrap();
        assert_eq!(a.u, 0.578125);
        let (u, v, d) = oracle_project(&cam, [0.1, 0.0, 1.0]);
        assert!((a.u - u).abs() < 1e-15 && (a.v - v).abs() < 1e-15 && (a.depth - d).abs() < 1e-15);
    }

    #[test]
    fn behind_camera() {
        let cam = test_camera();
        let err = cam
            .project(&Pose6D::from_translation(Vector3::new(0.0, 0.0, -0.5)))
            .unwrap_err();
        assert!(matches!(err, GeometryError::BehindCamera { .. }));
    }

    #[test]
    fn out_of_frame_is_flag_not_error() {
        let cam = test_camera();
        let a = cam
            .project(&Pose6D::from_translation(Vector3::new(5.0, 0.0, 1.0)))
            .unwrap();
        assert!(!a.in_frame());
    }

    #[test]
    fn unproject_principal_point() {
        let cam = test_camera();
        let p = cam
            .unproject(&ImageAction {
                u: 0.5,
                v: 0.5,
                depth: 2.0,
                orientation: UnitQuaternion::identity(),
            })
            .unwrap();
        assert_eq!(*p.position(), Vector3::new(0.0, 0.0, 2.0));
    }

    #[test]
    fn unproject_zero_depth() {
        let cam = test_camera();
        let err = cam
            .unproject(&ImageAction {
                u: 0.5,
                v: 0.5,
                depth: 0.0,
                orientation: UnitQuaternion::identity(),
            })
            .unwrap_err();
        assert_eq!(err, GeometryError::NonPositiveDepth(0.0));
    }

    #[test]
    fn camera_rejects_bad_intrinsics() {
        assert!(CameraModel::new(0.0, 1.0, 1.0, 1.0, 4, 4, Pose6D::identity()).is_err());
        assert!(CameraModel::new(1.0, 1.0, 4.0, 1.0, 4, 4, Pose6D::identity()).is_err());
    }

    #[test]
    fn look_at_centers_target() {
        let eye = Vector3::new(1.0, 0.3, 0.8);
        let target = Vector3::new(0.35, 0.0, 0.0);
        let cam = CameraModel::look_at(eye, target, 55.0, 320, 240).unwrap();
        let (x, y, d) = cam.project_point(&target).unwrap();
        assert!((x - 160.0).abs() < 1e-9 && (y - 120.0).abs() < 1e-9);
        assert!((d - (target - eye).norm()).abs() < 1e-12);
        assert!((cam.center() - eye).norm() < 1e-12);
        assert!((cam.fov_y_deg() - 55.0).abs() < 1e-9);
        // World up appears as image up (smaller v).
        let (_, y_up, _) = cam.project_point(&(target + Vector3::z() * 0.05)).unwrap();
        assert!(y_up < y);
    }

    #[test]
    fn canonical_sign_rules() {
        let q = canonicalize(Quaternion::new(-0.5, 0.5, 0.5, 0.5)).unwrap();
        assert!(q.w > 0.0);
        let q = canonicalize(Quaternion::new(0.0, 0.0, -1.0, 0.0)).unwrap();
        assert_eq!((q.i, q.j, q.k), (0.0, 1.0, 0.0));
        assert!(canonicalize(Quaternion::new(0.0, 0.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn euler_axes() {
        let q = EulerXyz::new(0.0, 0.0, 90.0).to_quaternion();
        let x = q * Vector3::x();
        assert!((x - Vector3::y()).norm() < 1e-12);
        let e = EulerXyz::new(30.0, -40.0, 170.0);
        let back = EulerXyz::from_quaternion(&e.to_quaternion());
        assert!((back.x - 30.0).abs() < 1e-9);
        assert!((back.y + 40.0).abs() < 1e-9);
        assert!((back.z - 170.0).abs() < 1e-9);
    }

    #[test]
    fn euler_matches_matrix_product() {
        let (a, b, c) = (0.3_f64, -0.7_f64, 2.1_f64);
        let rx = Rotation3::from_axis_angle(&Vector3::x_axis(), a);
        let ry = Rotation3::from_axis_angle(&Vector3::y_axis(), b);
        let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), c);
        let expected = (rx * ry * rz).into_inner();
        let got = EulerXyz::new(a.to_degrees(), b.to_degrees(), c.to_degrees())
            .to_quaternion()
            .to_rotation_matrix()
            .into_inner();
        assert!((expected - got).abs().max() < 1e-12);
    }

    #[test]
    fn wrap_deg_range() {
        assert_eq!(wrap_deg(180.0), -180.0);
        assert_eq!(wrap_deg(-180.0), -180.0);
        assert_eq!(wrap_deg(540.0), -180.0);
        assert_eq!(wrap_deg(-1e-20), 0.0);
        assert!(wrap_deg(-1e-17) < 180.0);
    }

    #[test]
    fn waypoints_basic() {
        let t = Trajectory::new(
            Pose6D::identity(),
            Pose6D::from_translation(Vector3::new(0.3, 0.0, 0.0)),
        );
        let w = t.expand_waypoints(DEFAULT_LIFT_HEIGHT);
        assert_eq!(w.len(), 5);
        for i in [0, 2, 3] {
            assert_eq!(w[i].position().z, 0.15);
        }
        assert_eq!(w[3].position().x, 0.3);
    }

    #[test]
    fn waypoints_degenerate() {
        let p = Pose6D::from_translation(Vector3::new(0.1, 0.2, 0.3));
        let w = Trajectory::new(p, p).expand_waypoints(0.1);
        assert_eq!(w.len(), 5);
        assert_eq!(w[1], w[4]);
    }

    #[test]
    fn trajectory_validation() {
        let kp = |g| Keypose {
            pose: Pose6D::identity(),
            gripper: g,
        };
        assert!(Trajectory::from_keyposes(vec![kp(Gripper::Grasp)]).is_err());
        assert!(Trajectory::from_keyposes(vec![kp(Gripper::Release), kp(Gripper::Grasp)]).is_err());
        assert!(Trajectory::from_keyposes(vec![kp(Gripper::Grasp), kp(Gripper::Release)]).is_ok());
    }

    #[test]
    fn pose_json_full_precision() {
        let p = Pose6D::from_parts([0.1, 1.0 / 3.0, -2.5e-7], [0.9, 0.1, -0.2, 0.3]).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        let back: Pose6D = serde_json::from_str(&s).unwrap();
        assert_eq!(p, back);
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["position"].as_array().unwrap().len(), 3);
        assert_eq!(v["orientation"].as_array().unwrap().len(), 4);
    }

    fn arb_quat() -> impl Strategy<Value = Quaternion<f64>> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
            .prop_filter("nonzero", |(w, x, y, z)| w * w + x * x + y * y + z * z > 1e-3)
            .prop_map(|(w, x, y, z)| Quaternion::new(w, x, y, z))
    }

    fn arb_camera() -> impl Strategy<Value = CameraModel> {
        ((-1.0..1.0f64, -1.0..1.0f64, 0.5..1.5f64), 30.0..80.0f64).prop_map(|((x, y, z), fov)| {
            CameraModel::look_at(Vector3::new(x, y, z), Vector3::new(0.35, 0.0, 0.0), fov, 640, 480).unwrap()
        })
    }

    proptest! {
        #[test]
        fn canonicalization_idempotent_and_rotation_preserving(q in arb_quat()) {
            let c = canonicalize(q).unwrap();
            let c2 = canonicalize(*c.quaternion()).unwrap();
            prop_assert_eq!(c, c2);
            prop_assert!((c.norm() - 1.0).abs() < 1e-9);
            let r_orig = UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner();
            let r_canon = c.to_rotation_matrix().into_inner();
            prop_assert!((r_orig - r_canon).abs().max() < 1e-12);
        }

        #[test]
        fn relative_angle_properties(a in arb_quat(), b in arb_quat()) {
            let a = canonicalize(a).unwrap();
            let b = canonicalize(b).unwrap();
            let ab = relative_angle_deg(&a, &b);
            prop_assert!((0.0..=180.0).contains(&ab));
            prop_assert!((ab - relative_angle_deg(&b, &a)).abs() < 1e-9);
            prop_assert!(relative_angle_deg(&a, &a) < 1e-6);
        }

        #[test]
        fn project_unproject_roundtrip(
            cam in arb_camera(),
            u in 0.0..1.0f64, v in 0.0..1.0f64, d in 0.2..2.0f64, q in arb_quat(),
        ) {
            let a = ImageAction { u, v, depth: d, orientation: canonicalize(q).unwrap() };
            let pose = cam.unproject(&a).unwrap();
            let back = cam.project(&pose).unwrap();
            prop_assert!((back.u - u).abs() < 1e-9 * u.max(1.0));
            prop_assert!((back.v - v).abs() < 1e-9 * v.max(1.0));
            prop_assert!((back.depth - d).abs() < 1e-9 * d);
            prop_assert!(relative_angle_deg(&back.orientation, &a.orientation) < 1e-6);
            let again = cam.unproject(&back).unwrap();
            prop_assert!((again.position() - pose.position()).norm() < 1e-9);
        }

        #[test]
        fn waypoint_endpoints_exact(
            g in (-0.5..0.5f64, -0.5..0.5f64, 0.0..0.3f64), r in (-0.5..0.5f64, -0.5..0.5f64, 0.0..0.3f64),
            qg in arb_quat(), qr in arb_quat(), lift in 0.01..0.3f64,
        ) {
            let grasp = Pose6D::new(Vector3::new(g.0, g.1, g.2), canonicalize(qg).unwrap());
            let release = Pose6D::new(Vector3::new(r.0, r.1, r.2), canonicalize(qr).unwrap());
            let w = Trajectory::new(grasp, release).expand_waypoints(lift);
            prop_assert_eq!(w[1], grasp);
            prop_assert_eq!(w[4], release);
            prop_assert_eq!(w[3].orientation(), release.orientation());
            prop_assert_eq!(w[2].orientation(), grasp.orientation());
        }
    }
}
