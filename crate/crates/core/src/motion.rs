//! Scene-motion parameterizations and the conversions between them:
//! allocentric flow, egocentric flow, pointmaps after motion, and 2D optical
//! flow backprojected through pointmaps. Also Doppler simulation and
//! motion-mask extraction.

use crate::error::Result;
use crate::geom::{apply_motion, Pointmap, Pose, SceneFlowField, Vec2, Vec3, NAN3};
use crate::grid::{ensure_same_shape, Grid};

/// Pixel displacement from view 0 to view t, valid where the point is covisible.
#[derive(Clone, Debug, PartialEq)]
pub struct OpticalFlowField {
    pub uv: Grid<Vec2>,
    pub valid: Grid<bool>,
}

impl OpticalFlowField {
    pub fn new(uv: Grid<Vec2>, valid: Grid<bool>) -> Result<Self> {
        ensure_same_shape(uv.shape(), valid.shape())?;
        let mut uv = uv;
        for (f, ok) in uv.as_mut_slice().iter_mut().zip(valid.iter()) {
            if !ok {
                *f = Vec2::new(f64::NAN, f64::NAN);
            }
        }
        Ok(Self { uv, valid })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.uv.shape()
    }
}

/// Radial velocity per pixel in meters per frame interval; positive = receding.
#[derive(Clone, Debug, PartialEq)]
pub struct DopplerMap {
    pub vr: Grid<f64>,
    pub valid: Grid<bool>,
}

impl DopplerMap {
    pub fn shape(&self) -> (usize, usize) {
        self.vr.shape()
    }
}

/// Egocentric flow (camera-t frame) to allocentric flow (world frame).
///
/// `F_allo = T_t(T_t⁻¹(G0) + F_ego) − G0`, which is the rotation of `F_ego`
/// into the world frame; it is evaluated in that closed form. Pixels without
/// view-0 geometry are masked out.
pub fn ego_to_allo(ego: &SceneFlowField, g0_world: &Pointmap, cam_t: &Pose) -> Result<SceneFlowField> {
    rotate_flow(ego, g0_world, cam_t)
}

/// Exact inverse of [`ego_to_allo`].
pub fn allo_to_ego(allo: &SceneFlowField, g0_world: &Pointmap, cam_t: &Pose) -> Result<SceneFlowField> {
    rotate_flow(allo, g0_world, &cam_t.inverse())
}

fn rotate_flow(flow: &SceneFlowField, g0: &Pointmap, pose: &Pose) -> Result<SceneFlowField> {
    ensure_same_shape(flow.shape(), g0.shape())?;
    let valid = flow.valid.and(&g0.valid)?;
    let rotated = flow.flow.map(|f| pose.rotate_vector(f));
    SceneFlowField::new(rotated, valid)
}

/// Allocentric flow from pixel-aligned world-frame pointmaps at times 0 and t.
pub fn points_to_flow(p0: &Pointmap, pt: &Pointmap) -> Result<SceneFlowField> {
    let flow = pt.pts.zip_map(&p0.pts, |b, a| b - a)?;
    let valid = p0.valid.and(&pt.valid)?;
    SceneFlowField::new(flow, valid)
}

/// Pointmap after motion; same contract as [`apply_motion`].
pub fn flow_to_points(p0: &Pointmap, flow: &SceneFlowField) -> Result<Pointmap> {
    apply_motion(p0, flow)
}

/// Bilinear sample of a pointmap at pixel-index coordinates `(x, y)`.
///
/// Only corners with nonzero weight form the footprint; any footprint corner
/// outside the image or invalid makes the sample invalid.
pub fn sample_bilinear(points: &Pointmap, x: f64, y: f64) -> Option<Vec3> {
    if !(x.is_finite() && y.is_finite()) {
        return None;
    }
    let (w, h) = points.shape();
    let (x0, y0) = (x.floor(), y.floor());
    let (ax, ay) = (x - x0, y - y0);
    let (x0, y0) = (x0 as i64, y0 as i64);
    let corners = [
        (x0, y0, (1.0 - ax) * (1.0 - ay)),
        (x0 + 1, y0, ax * (1.0 - ay)),
        (x0, y0 + 1, (1.0 - ax) * ay),
        (x0 + 1, y0 + 1, ax * ay),
    ];
    let mut acc = Vec3::zeros();
    for (cx, cy, weight) in corners {
        if weight == 0.0 {
            continue;
        }
        if cx < 0 || cy < 0 || cx >= w as i64 || cy >= h as i64 {
            return None;
        }
        let p = points.get(cx as usize, cy as usize)?;
        acc += weight * p;
    }
    Some(acc)
}

/// Covisible scene flow from 2D optical flow: `F(u) = Gt(u + of(u)) − G0(u)`.
pub fn backproject_2d_flow(of: &OpticalFlowField, g0: &Pointmap, gt: &Pointmap) -> Result<SceneFlowField> {
    ensure_same_shape(of.shape(), g0.shape())?;
    let (w, h) = g0.shape();
    let mut flow = Vec::with_capacity(w * h);
    let mut valid = Vec::with_capacity(w * h);
    for v in 0..h {
        for u in 0..w {
            let sampled = match (*of.valid.get(u, v), g0.get(u, v)) {
                (true, Some(p0)) => {
                    let d = of.uv.get(u, v);
                    sample_bilinear(gt, u as f64 + d.x, v as f64 + d.y).map(|pt| pt - p0)
                }
                _ => None,
            };
            flow.push(sampled.unwrap_or(NAN3));
            valid.push(sampled.is_some());
        }
    }
    SceneFlowField::new(Grid::from_vec(w, h, flow)?, Grid::from_vec(w, h, valid)?)
}

/// Radial component of egocentric motion: `v_r = p·v / ‖p‖` in the sensor frame.
pub fn simulate_doppler(points_cam: &Pointmap, ego: &SceneFlowField) -> Result<DopplerMap> {
    ensure_same_shape(points_cam.shape(), ego.shape())?;
    let (w, h) = points_cam.shape();
    let mut vr = Vec::with_capacity(w * h);
    let mut valid = Vec::with_capacity(w * h);
    for i in 0..w * h {
        let p = points_cam.pts.as_slice()[i];
        let f = ego.flow.as_slice()[i];
        let ok_in = points_cam.valid.as_slice()[i] && ego.valid.as_slice()[i];
        let range = (p.x * p.x + p.y * p.y + p.z * p.z).sqrt();
        if ok_in && range > 0.0 && range.is_finite() {
            vr.push(radial_velocity(&p, &f));
            valid.push(true);
        } else {
            vr.push(f64::NAN);
            valid.push(false);
        }
    }
    Ok(DopplerMap {
        vr: Grid::from_vec(w, h, vr)?,
        valid: Grid::from_vec(w, h, valid)?,
    })
}

#[inline]
pub fn radial_velocity(p: &Vec3, v: &Vec3) -> f64 {
    (p.x * v.x + p.y * v.y + p.z * v.z) / (p.x * p.x + p.y * p.y + p.z * p.z).sqrt()
}

/// Dynamic pixels: `‖F‖ > θ` and valid.
pub fn motion_mask_from_flow(flow: &SceneFlowField, theta: f64) -> Grid<bool> {
    flow.flow
        .zip_map(&flow.valid, |f, ok| *ok && f.norm() > theta)
        .expect("flow and mask share a shape")
}
