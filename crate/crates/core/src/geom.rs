//! Camera model, rigid transforms and the composition algebra of the factored
//! representation (scale, pose, rays, ray depth → pointmaps).
//!
//! Conventions: camera frame is x-right, y-down, z-forward. Pixel `(u, v)` has
//! its center at continuous image coordinate `(u + 0.5, v + 0.5)`. Poses are
//! camera-to-world and the world frame is the first view's camera frame.
//! Invalid pixels carry NaN in the value grids; the boolean mask is authoritative.

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ensure_same_shape, Grid};

pub type Vec3 = Vector3<f64>;
pub type Vec2 = Vector2<f64>;

pub(crate) const NAN3: Vec3 = Vector3::new(f64::NAN, f64::NAN, f64::NAN);

/// Tolerance on `|‖q‖ - 1|` accepted when building a [`Pose`].
pub const QUAT_UNIT_TOL: f64 = 1e-6;

/// Pinhole intrinsics in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Square pixels with the principal point at the image center.
    pub fn centered(width: usize, height: usize, focal: f64) -> Result<Self> {
        Self::new(
            focal,
            focal,
            width as f64 / 2.0,
            height as f64 / 2.0,
            width,
            height,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fx.is_finite() && self.fy > 0.0 && self.fy.is_finite()) {
            return Err(Error::InvalidIntrinsics(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidIntrinsics("empty image".into()));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return Err(Error::InvalidIntrinsics(format!(
                "cx={} outside [0, {})",
                self.cx, self.width
            )));
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(Error::InvalidIntrinsics(format!(
                "cy={} outside [0, {})",
                self.cy, self.height
            )));
        }
        Ok(())
    }

    /// Unit ray through pixel-index coordinates `(u, v)` (integers hit pixel centers).
    pub fn ray(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u + 0.5 - self.cx) / self.fx, (v + 0.5 - self.cy) / self.fy, 1.0).normalize()
    }

    pub fn unproject(&self, u: f64, v: f64, ray_depth: f64) -> Vec3 {
        self.ray(u, v) * ray_depth
    }

    /// Pixel-index coordinates of a camera-frame point, `None` unless `z > 0`.
    pub fn project_point(&self, p: &Vec3) -> Option<Vec2> {
        if p.z > 0.0 && p.iter().all(|c| c.is_finite()) {
            Some(Vec2::new(
                self.fx * p.x / p.z + self.cx - 0.5,
                self.fy * p.y / p.z + self.cy - 0.5,
            ))
        } else {
            None
        }
    }
}

/// Quaternion `w + xi + yj + zk` (Hamilton convention).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quat {
    pub const IDENTITY: Quat = Quat {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::IDENTITY;
        }
        let (s, c) = (angle / 2.0).sin_cos();
        let a = axis / n * s;
        Self::new(c, a.x, a.y, a.z)
    }

    /// Rotation by the rotation vector `omega` (axis times angle).
    pub fn from_rotation_vector(omega: &Vec3) -> Self {
        Self::from_axis_angle(omega, omega.norm())
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm();
        Self::new(self.w / n, self.x / n, self.y / n, self.z / n)
    }

    pub fn conjugate(&self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn neg(&self) -> Self {
        Self::new(-self.w, -self.x, -self.y, -self.z)
    }

    /// Sign representative with `w ≥ 0`.
    pub fn canonical(&self) -> Self {
        if self.w < 0.0 {
            self.neg()
        } else {
            *self
        }
    }

    pub fn mul(&self, o: &Quat) -> Quat {
        Quat::new(
            self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        )
    }

    fn vector(&self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z)
    }

    /// Rotates `v`; assumes a unit quaternion.
    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        let u = self.vector();
        let uv = u.cross(v);
        v + 2.0 * (self.w * uv + u.cross(&uv))
    }

    pub fn to_matrix(&self) -> Matrix3<f64> {
        quat_to_matrix(self)
    }
}

pub fn quat_to_matrix(q: &Quat) -> Matrix3<f64> {
    let (w, x, y, z) = (q.w, q.x, q.y, q.z);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Shepperd's method; the result is unit and canonicalized to `w ≥ 0`.
pub fn matrix_to_quat(m: &Matrix3<f64>) -> Quat {
    let trace = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
    let q = if trace > m[(0, 0)] && trace > m[(1, 1)] && trace > m[(2, 2)] {
        let s = (1.0 + trace).sqrt() * 2.0;
        Quat::new(
            0.25 * s,
            (m[(2, 1)] - m[(1, 2)]) / s,
            (m[(0, 2)] - m[(2, 0)]) / s,
            (m[(1, 0)] - m[(0, 1)]) / s,
        )
    } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
        let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
        Quat::new(
            (m[(2, 1)] - m[(1, 2)]) / s,
            0.25 * s,
            (m[(0, 1)] + m[(1, 0)]) / s,
            (m[(0, 2)] + m[(2, 0)]) / s,
        )
    } else if m[(1, 1)] > m[(2, 2)] {
        let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
        Quat::new(
            (m[(0, 2)] - m[(2, 0)]) / s,
            (m[(0, 1)] + m[(1, 0)]) / s,
            0.25 * s,
            (m[(1, 2)] + m[(2, 1)]) / s,
        )
    } else {
        let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
        Quat::new(
            (m[(1, 0)] - m[(0, 1)]) / s,
            (m[(0, 2)] + m[(2, 0)]) / s,
            (m[(1, 2)] + m[(2, 1)]) / s,
            0.25 * s,
        )
    };
    q.normalized().canonical()
}

/// Rigid camera-to-world transform. The rotation is kept unit and `w ≥ 0`.
/// Serialized as `[qw, qx, qy, qz, tx, ty, tz]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 7]", into = "[f64; 7]")]
pub struct Pose {
    rotation: Quat,
    translation: Vec3,
}

impl From<Pose> for [f64; 7] {
    fn from(p: Pose) -> Self {
        p.to_array()
    }
}

impl TryFrom<[f64; 7]> for Pose {
    type Error = Error;

    fn try_from(a: [f64; 7]) -> Result<Self> {
        Pose::from_array(a)
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Quat::IDENTITY,
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Quat, translation: Vec3) -> Result<Self> {
        let norm = rotation.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > QUAT_UNIT_TOL {
            return Err(Error::NonUnitQuaternion { norm });
        }
        Ok(Self {
            rotation: rotation.normalized().canonical(),
            translation,
        })
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self {
            rotation: Quat::IDENTITY,
            translation: t,
        }
    }

    pub fn rotation(&self) -> Quat {
        self.rotation
    }

    pub fn translation(&self) -> Vec3 {
        self.translation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        quat_to_matrix(&self.rotation)
    }

    /// `(qw, qx, qy, qz, tx, ty, tz)`.
    pub fn to_array(&self) -> [f64; 7] {
        let q = self.rotation;
        let t = self.translation;
        [q.w, q.x, q.y, q.z, t.x, t.y, t.z]
    }

    pub fn from_array(a: [f64; 7]) -> Result<Self> {
        Self::new(
            Quat::new(a[0], a[1], a[2], a[3]),
            Vec3::new(a[4], a[5], a[6]),
        )
    }

    #[inline]
    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation.rotate(p) + self.translation
    }

    #[inline]
    pub fn rotate_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation.rotate(v)
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.conjugate();
        Pose {
            rotation: inv.canonical(),
            translation: -inv.rotate(&self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation.mul(&other.rotation).normalized().canonical(),
            translation: self.rotation.rotate(&other.translation) + self.translation,
        }
    }

    /// Largest absolute deviation of the 7-vector from the identity pose,
    /// taking the quaternion sign ambiguity into account.
    pub fn deviation_from_identity(&self) -> f64 {
        let q = self.rotation.canonical();
        let t = self.translation;
        [q.w - 1.0, q.x, q.y, q.z, t.x, t.y, t.z]
            .iter()
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

pub fn inverse_pose(t: &Pose) -> Pose {
    t.inverse()
}

pub fn compose_pose(t1: &Pose, t2: &Pose) -> Pose {
    t1.compose(t2)
}

/// Positive scalar converting scale-normalized quantities to meters.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct MetricScale(f64);

impl MetricScale {
    pub fn new(s: f64) -> Result<Self> {
        if s > 0.0 && s.is_finite() {
            Ok(Self(s))
        } else {
            Err(Error::InvalidScale(s))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Per-pixel camera-frame ray directions.
#[derive(Clone, Debug, PartialEq)]
pub struct RayMap {
    pub dirs: Grid<Vec3>,
}

/// Distance along each pixel ray, with validity.
#[derive(Clone, Debug, PartialEq)]
pub struct RayDepthMap {
    pub depth: Grid<f64>,
    pub valid: Grid<bool>,
}

impl RayDepthMap {
    pub fn new(depth: Grid<f64>, valid: Grid<bool>) -> Result<Self> {
        ensure_same_shape(depth.shape(), valid.shape())?;
        let mut depth = depth;
        for (d, ok) in depth.as_mut_slice().iter_mut().zip(valid.iter()) {
            if !ok {
                *d = f64::NAN;
            }
        }
        Ok(Self { depth, valid })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.depth.shape()
    }
}

/// Per-pixel 3D points (world or camera frame depending on context).
#[derive(Clone, Debug, PartialEq)]
pub struct Pointmap {
    pub pts: Grid<Vec3>,
    pub valid: Grid<bool>,
}

impl Pointmap {
    /// Builds a pointmap, writing the NaN sentinel into invalid pixels.
    pub fn new(pts: Grid<Vec3>, valid: Grid<bool>) -> Result<Self> {
        ensure_same_shape(pts.shape(), valid.shape())?;
        let mut pts = pts;
        for (p, ok) in pts.as_mut_slice().iter_mut().zip(valid.iter()) {
            if !ok {
                *p = NAN3;
            }
        }
        Ok(Self { pts, valid })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.pts.shape()
    }

    pub fn get(&self, u: usize, v: usize) -> Option<Vec3> {
        let i = self.pts.index(u, v);
        self.valid.as_slice()[i].then(|| self.pts.as_slice()[i])
    }

    pub fn scaled(&self, factor: f64) -> Pointmap {
        Pointmap {
            pts: self.pts.map(|p| p * factor),
            valid: self.valid.clone(),
        }
    }
}

/// Per-pixel 3D motion from view 0's surface points to their positions at view t.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneFlowField {
    pub flow: Grid<Vec3>,
    pub valid: Grid<bool>,
}

impl SceneFlowField {
    pub fn new(flow: Grid<Vec3>, valid: Grid<bool>) -> Result<Self> {
        let Pointmap { pts, valid } = Pointmap::new(flow, valid)?;
        Ok(Self { flow: pts, valid })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            flow: Grid::filled(width, height, Vec3::zeros()),
            valid: Grid::filled(width, height, true),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.flow.shape()
    }

    pub fn get(&self, u: usize, v: usize) -> Option<Vec3> {
        let i = self.flow.index(u, v);
        self.valid.as_slice()[i].then(|| self.flow.as_slice()[i])
    }

    pub fn scaled(&self, factor: f64) -> SceneFlowField {
        SceneFlowField {
            flow: self.flow.map(|f| f * factor),
            valid: self.valid.clone(),
        }
    }
}

pub fn rays_from_intrinsics(k: &Intrinsics) -> Result<RayMap> {
    k.validate()?;
    Ok(RayMap {
        dirs: Grid::from_fn(k.width, k.height, |u, v| k.ray(u as f64, v as f64)),
    })
}

/// `G = s · (rot(q) · (R ⊙ D) + t)`.
pub fn compose_pointmap(s: MetricScale, pose: &Pose, rays: &RayMap, depth: &RayDepthMap) -> Result<Pointmap> {
    ensure_same_shape(rays.dirs.shape(), depth.shape())?;
    let s = s.value();
    let pts = rays
        .dirs
        .zip_map(&depth.depth, |r, d| s * pose.transform_point(&(r * *d)))?;
    Pointmap::new(pts, depth.valid.clone())
}

/// Metric allocentric flow `M = s · F`.
pub fn recover_metric_flow(s: MetricScale, flow: &SceneFlowField) -> SceneFlowField {
    flow.scaled(s.value())
}

/// Pointmap after motion, `G' = G + M`; valid where both inputs are valid.
pub fn apply_motion(points: &Pointmap, motion: &SceneFlowField) -> Result<Pointmap> {
    let pts = points.pts.zip_map(&motion.flow, |p, m| p + m)?;
    let valid = points.valid.and(&motion.valid)?;
    Pointmap::new(pts, valid)
}

pub fn transform_points(pose: &Pose, points: &Pointmap) -> Pointmap {
    Pointmap {
        pts: points.pts.map(|p| pose.transform_point(p)),
        valid: points.valid.clone(),
    }
}

/// Inverse of [`compose_pointmap`] at unit scale. Pixels whose camera-frame
/// point is at the origin or not in front of the camera come back invalid.
pub fn decompose_pointmap(points: &Pointmap, pose: &Pose) -> (RayMap, RayDepthMap) {
    let world_to_cam = pose.inverse();
    let (w, h) = points.shape();
    let mut dirs = Vec::with_capacity(w * h);
    let mut depth = Vec::with_capacity(w * h);
    let mut valid = Vec::with_capacity(w * h);
    for (p, ok) in points.pts.iter().zip(points.valid.iter()) {
        let pc = world_to_cam.transform_point(p);
        let n = pc.norm();
        if *ok && n.is_finite() && n > f64::MIN_POSITIVE && pc.z > 0.0 {
            dirs.push(pc / n);
            depth.push(n);
            valid.push(true);
        } else {
            dirs.push(NAN3);
            depth.push(f64::NAN);
            valid.push(false);
        }
    }
    (
        RayMap {
            dirs: Grid::from_vec(w, h, dirs).expect("shape preserved"),
        },
        RayDepthMap {
            depth: Grid::from_vec(w, h, depth).expect("shape preserved"),
            valid: Grid::from_vec(w, h, valid).expect("shape preserved"),
        },
    )
}

/// Projects camera-frame points; returns pixel-index coordinates and the
/// front-of-camera mask (`z > 0`). Masked-out pixels carry NaN.
pub fn project(k: &Intrinsics, points_cam: &Grid<Vec3>) -> (Grid<Vec2>, Grid<bool>) {
    let nan2 = Vec2::new(f64::NAN, f64::NAN);
    let uv = points_cam.map(|p| k.project_point(p).unwrap_or(nan2));
    let mask = points_cam.map(|p| k.project_point(p).is_some());
    (uv, mask)
}

/// z-depth (forward-axis coordinate) from ray depth: `z = d · dir_z`.
pub fn ray_depth_to_z_depth(rays: &RayMap, depth: &RayDepthMap) -> Result<Grid<f64>> {
    ensure_same_shape(rays.dirs.shape(), depth.shape())?;
    let mut z = rays.dirs.zip_map(&depth.depth, |r, d| r.z * d)?;
    for (zv, ok) in z.as_mut_slice().iter_mut().zip(depth.valid.iter()) {
        if !ok {
            *zv = f64::NAN;
        }
    }
    Ok(z)
}
