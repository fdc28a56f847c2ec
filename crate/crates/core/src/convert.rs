//! Conversion of a sequence's motion between the four parameterizations, using
//! the sequence's own geometry (rays, depths, poses).

use crate::error::{Error, Result};
use crate::geom::{Pointmap, SceneFlowField, Vec2, Vec3};
use crate::grid::Grid;
use crate::motion::{
    allo_to_ego, backproject_2d_flow, ego_to_allo, flow_to_points, points_to_flow, sample_bilinear, OpticalFlowField,
};
use crate::sequence::{MotionRepr, SceneSequence, ViewBundle};

/// Distance, relative to range, between a reprojected point and the target
/// view's interpolated surface below which the point counts as visible.
pub const COVISIBILITY_REL_TOL: f64 = 1e-2;

/// Allocentric flow of every view, reconstructed from whatever representation
/// the sequence stores. Views with no motion grid yield `None`.
pub fn allocentric_flows(seq: &SceneSequence) -> Result<Vec<Option<SceneFlowField>>> {
    let g0 = seq.pointmap(0);
    seq.views
        .iter()
        .map(|view| -> Result<Option<SceneFlowField>> {
            Ok(match seq.motion_repr {
                MotionRepr::Allo => view.scene_flow.clone(),
                MotionRepr::Ego => match &view.scene_flow {
                    Some(ego) => Some(ego_to_allo(ego, &g0, &view.pose)?),
                    None => None,
                },
                MotionRepr::Points => match &view.scene_flow {
                    Some(moved) => {
                        let pt = Pointmap {
                            pts: moved.flow.clone(),
                            valid: moved.valid.clone(),
                        };
                        Some(points_to_flow(&g0, &pt)?)
                    }
                    None => None,
                },
                MotionRepr::Flow2d => match &view.optical_flow {
                    Some(of) => Some(backproject_2d_flow(of, &g0, &view.pointmap())?),
                    None => None,
                },
            })
        })
        .collect()
}

/// Returns a copy of `seq` whose motion is expressed in `to`.
pub fn convert_motion(seq: &SceneSequence, to: MotionRepr) -> Result<SceneSequence> {
    let allo = allocentric_flows(seq)?;
    if allo.iter().all(Option::is_none) {
        return Err(Error::MissingGrid {
            view: 0,
            grid: if seq.motion_repr == MotionRepr::Flow2d {
                "optical_flow"
            } else {
                "scene_flow"
            },
        });
    }
    let g0 = seq.pointmap(0);
    let mut out = seq.clone();
    out.motion_repr = to;
    for (view, flow) in out.views.iter_mut().zip(allo) {
        let Some(flow) = flow else {
            view.scene_flow = None;
            continue;
        };
        match to {
            MotionRepr::Allo => view.scene_flow = Some(flow),
            MotionRepr::Ego => view.scene_flow = Some(allo_to_ego(&flow, &g0, &view.pose)?),
            MotionRepr::Points => {
                let moved = flow_to_points(&g0, &flow)?;
                view.scene_flow = Some(SceneFlowField {
                    flow: moved.pts,
                    valid: moved.valid,
                });
            }
            MotionRepr::Flow2d => {
                view.optical_flow = Some(project_flow(&g0, &flow, view)?);
                view.scene_flow = None;
            }
        }
    }
    Ok(out)
}

/// Optical flow induced by moving view-0 points into view `view`. Valid only
/// where the moved point lands inside the image and agrees with the target
/// view's surface there (not occluded).
fn project_flow(g0: &Pointmap, flow: &SceneFlowField, view: &ViewBundle) -> Result<OpticalFlowField> {
    let (w, h) = g0.shape();
    let to_cam = view.pose.inverse();
    let target_points = view.pointmap();
    let k = &view.intrinsics;
    let mut uv = Vec::with_capacity(w * h);
    let mut valid = Vec::with_capacity(w * h);
    for v in 0..h {
        for u in 0..w {
            let target = match (g0.get(u, v), flow.get(u, v)) {
                (Some(p), Some(f)) => {
                    let moved = p + f;
                    let cam: Vec3 = to_cam.transform_point(&moved);
                    k.project_point(&cam).filter(|px| {
                        sample_bilinear(&target_points, px.x, px.y)
                            .is_some_and(|surface| (surface - moved).norm() <= COVISIBILITY_REL_TOL * cam.norm())
                    })
                }
                _ => None,
            };
            match target {
                Some(px) => {
                    uv.push(Vec2::new(px.x - u as f64, px.y - v as f64));
                    valid.push(true);
                }
                None => {
                    uv.push(Vec2::new(f64::NAN, f64::NAN));
                    valid.push(false);
                }
            }
        }
    }
    OpticalFlowField::new(Grid::from_vec(w, h, uv)?, Grid::from_vec(w, h, valid)?)
}
