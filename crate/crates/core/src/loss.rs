//! Training losses over the factored representation, with analytic gradients
//! with respect to the predicted quantities.
//!
//! Reduction: per-pixel terms are averaged over the valid pixels of a view and
//! the per-view means are summed. Views without valid pixels contribute 0.
//! Length-valued quantities are divided by a scene scale (`z` for ground truth,
//! `z_hat` for predictions) before comparison, which makes those losses
//! invariant to a global rescale of the prediction.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::convert::allocentric_flows;
use crate::error::{Error, Result};
use crate::geom::{Quat, Vec3};
use crate::grid::{ensure_same_shape, Grid};
use crate::motion::motion_mask_from_flow;
use crate::sequence::SceneSequence;

/// Probability clamp used inside the logarithms of the mask loss.
pub const BCE_EPS: f64 = 1e-12;

/// Default upweighting of dynamic pixels in the scene-flow loss.
pub const DYNAMIC_WEIGHT: f64 = 10.0;

/// A loss value and its gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Loss<G> {
    pub value: f64,
    pub grad: G,
}

/// Gradient of a scale-normalized loss: w.r.t. the prediction and w.r.t. `z_hat`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaledGrad<G> {
    pub pred: G,
    pub z_hat: f64,
}

/// Gradient of the scale loss. `z_hat` sits behind a stop-gradient and is always 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaleGrad {
    pub s: f64,
    pub z_hat: f64,
}

/// Mean norm of the valid points over all views, measured from the world origin.
pub fn scene_scale<'a>(views: impl IntoIterator<Item = (&'a Grid<Vec3>, &'a Grid<bool>)>) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (pts, valid) in views {
        ensure_same_shape(pts.shape(), valid.shape())?;
        for (p, ok) in pts.iter().zip(valid.iter()) {
            if *ok {
                sum += p.norm();
                count += 1;
            }
        }
    }
    if count == 0 || !(sum > 0.0) || !sum.is_finite() {
        return Err(Error::DegenerateScale);
    }
    Ok(sum / count as f64)
}

/// `f_log(x) = x / ‖x‖ · log(1 + ‖x‖)`, with `f_log(0) = 0`.
pub fn f_log(x: &Vec3) -> Vec3 {
    x * log_gain(x.norm())
}

/// Scalar `f_log` (a 1-vector): `sign(d) · log(1 + |d|)`.
pub fn f_log_scalar(d: f64) -> f64 {
    d.signum() * d.abs().ln_1p()
}

// log(1 + r) / r, continuous at 0
fn log_gain(r: f64) -> f64 {
    if r < 1e-4 {
        1.0 - r / 2.0 + r * r / 3.0 - r * r * r / 4.0
    } else {
        r.ln_1p() / r
    }
}

/// Jacobian of [`f_log`]; tends to the identity at the origin.
pub fn f_log_jacobian(x: &Vec3) -> Matrix3<f64> {
    let r = x.norm();
    let g = log_gain(r);
    // g'(r) / r
    let dg_over_r = if r < 1e-4 {
        if r == 0.0 {
            0.0
        } else {
            (-0.5 + 2.0 * r / 3.0 - 0.75 * r * r) / r
        }
    } else {
        (r / (1.0 + r) - r.ln_1p()) / (r * r * r)
    };
    Matrix3::identity() * g + x * x.transpose() * dg_over_r
}

/// `‖f_log(a) − f_log(b)‖` and its gradient with respect to `b`.
fn log_residual(a: &Vec3, b: &Vec3) -> (f64, Vec3) {
    let r = f_log(b) - f_log(a);
    let e = r.norm();
    if e == 0.0 {
        return (0.0, Vec3::zeros());
    }
    // the Jacobian is symmetric
    (e, f_log_jacobian(b) * (r / e))
}

fn log_residual_scalar(a: f64, b: f64) -> (f64, f64) {
    let r = f_log_scalar(b) - f_log_scalar(a);
    if r == 0.0 {
        return (0.0, 0.0);
    }
    (r.abs(), r.signum() / (1.0 + b.abs()))
}

fn check_views<A, B>(gt: &[Grid<A>], pred: &[Grid<B>], valid: &[Grid<bool>]) -> Result<()> {
    if gt.len() != pred.len() || gt.len() != valid.len() {
        return Err(Error::InvalidConfig(format!(
            "view count mismatch: gt {}, pred {}, masks {}",
            gt.len(),
            pred.len(),
            valid.len()
        )));
    }
    for ((g, p), m) in gt.iter().zip(pred).zip(valid) {
        ensure_same_shape(g.shape(), p.shape())?;
        ensure_same_shape(g.shape(), m.shape())?;
    }
    Ok(())
}

/// `Σ_views mean_valid ‖R − R̃‖`; gradient w.r.t. `R̃`.
pub fn loss_rays(gt: &[Grid<Vec3>], pred: &[Grid<Vec3>], valid: &[Grid<bool>]) -> Result<Loss<Vec<Grid<Vec3>>>> {
    check_views(gt, pred, valid)?;
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(gt.len());
    for ((g, p), m) in gt.iter().zip(pred).zip(valid) {
        let n = m.count();
        let mut grad = Grid::filled(g.width(), g.height(), Vec3::zeros());
        if n > 0 {
            let inv_n = 1.0 / n as f64;
            let mut sum = 0.0;
            for i in 0..g.len() {
                if !m.as_slice()[i] {
                    continue;
                }
                let r = p.as_slice()[i] - g.as_slice()[i];
                let e = r.norm();
                sum += e;
                if e > 0.0 {
                    grad.as_mut_slice()[i] = r / e * inv_n;
                }
            }
            value += sum * inv_n;
        }
        grads.push(grad);
    }
    Ok(Loss { value, grad: grads })
}

/// `min(‖q − q̃‖, ‖q + q̃‖)` for a single view; ties take the `q − q̃` branch.
pub fn rotation_distance(q: &Quat, q_pred: &Quat) -> (f64, Quat) {
    let minus = [q_pred.w - q.w, q_pred.x - q.x, q_pred.y - q.y, q_pred.z - q.z];
    let plus = [q_pred.w + q.w, q_pred.x + q.x, q_pred.y + q.y, q_pred.z + q.z];
    let norm = |a: &[f64; 4]| (a[0] * a[0] + a[1] * a[1] + a[2] * a[2] + a[3] * a[3]).sqrt();
    let (d_minus, d_plus) = (norm(&minus), norm(&plus));
    let (d, r) = if d_minus <= d_plus { (d_minus, minus) } else { (d_plus, plus) };
    if d == 0.0 {
        return (0.0, Quat::new(0.0, 0.0, 0.0, 0.0));
    }
    (d, Quat::new(r[0] / d, r[1] / d, r[2] / d, r[3] / d))
}

/// Sign-ambiguity-resolved quaternion distance summed over views; gradient w.r.t. `q̃`.
pub fn loss_rotation(gt: &[Quat], pred: &[Quat]) -> Result<Loss<Vec<Quat>>> {
    if gt.len() != pred.len() {
        return Err(Error::InvalidConfig("rotation view count mismatch".into()));
    }
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(gt.len());
    for (q, qp) in gt.iter().zip(pred) {
        let (d, g) = rotation_distance(q, qp);
        value += d;
        grad.push(g);
    }
    Ok(Loss { value, grad })
}

/// `Σ_i ‖t_i / z − t̃_i / ẑ‖`.
pub fn loss_translation(gt: &[Vec3], pred: &[Vec3], z: f64, z_hat: f64) -> Result<Loss<ScaledGrad<Vec<Vec3>>>> {
    if gt.len() != pred.len() {
        return Err(Error::InvalidConfig("translation view count mismatch".into()));
    }
    check_scales(z, z_hat)?;
    let mut value = 0.0;
    let mut grad_z_hat = 0.0;
    let mut grads = Vec::with_capacity(gt.len());
    for (t, tp) in gt.iter().zip(pred) {
        let a = t / z;
        let b = tp / z_hat;
        let r = b - a;
        let e = r.norm();
        value += e;
        if e > 0.0 {
            let gb = r / e;
            grads.push(gb / z_hat);
            grad_z_hat -= gb.dot(tp) / (z_hat * z_hat);
        } else {
            grads.push(Vec3::zeros());
        }
    }
    Ok(Loss {
        value,
        grad: ScaledGrad {
            pred: grads,
            z_hat: grad_z_hat,
        },
    })
}

fn check_scales(z: f64, z_hat: f64) -> Result<()> {
    if z > 0.0 && z.is_finite() && z_hat > 0.0 && z_hat.is_finite() {
        Ok(())
    } else {
        Err(Error::DegenerateScale)
    }
}

/// Shared kernel of the pointmap and scene-flow losses: per-pixel
/// `w · ‖f_log(X/z) − f_log(X̃/ẑ)‖`, mean over valid pixels, summed over views.
fn weighted_log_loss(
    gt: &[Grid<Vec3>],
    pred: &[Grid<Vec3>],
    valid: &[Grid<bool>],
    weight: impl Fn(usize, usize) -> f64,
    z: f64,
    z_hat: f64,
) -> Result<Loss<ScaledGrad<Vec<Grid<Vec3>>>>> {
    check_views(gt, pred, valid)?;
    check_scales(z, z_hat)?;
    let mut value = 0.0;
    let mut grad_z_hat = 0.0;
    let mut grads = Vec::with_capacity(gt.len());
    for (view, ((g, p), m)) in gt.iter().zip(pred).zip(valid).enumerate() {
        let n = m.count();
        let mut grad = Grid::filled(g.width(), g.height(), Vec3::zeros());
        if n > 0 {
            let inv_n = 1.0 / n as f64;
            let mut sum = 0.0;
            for i in 0..g.len() {
                if !m.as_slice()[i] {
                    continue;
                }
                let w = weight(view, i);
                let xp = p.as_slice()[i];
                let (e, gb) = log_residual(&(g.as_slice()[i] / z), &(xp / z_hat));
                sum += w * e;
                let gb = gb * (w * inv_n);
                grad.as_mut_slice()[i] = gb / z_hat;
                grad_z_hat -= gb.dot(&xp) / (z_hat * z_hat);
            }
            value += sum * inv_n;
        }
        grads.push(grad);
    }
    Ok(Loss {
        value,
        grad: ScaledGrad {
            pred: grads,
            z_hat: grad_z_hat,
        },
    })
}

/// Log-space, scale-normalized depth loss (depths as 1-vectors).
pub fn loss_depth(
    gt: &[Grid<f64>],
    pred: &[Grid<f64>],
    valid: &[Grid<bool>],
    z: f64,
    z_hat: f64,
) -> Result<Loss<ScaledGrad<Vec<Grid<f64>>>>> {
    check_views(gt, pred, valid)?;
    check_scales(z, z_hat)?;
    let mut value = 0.0;
    let mut grad_z_hat = 0.0;
    let mut grads = Vec::with_capacity(gt.len());
    for ((g, p), m) in gt.iter().zip(pred).zip(valid) {
        let n = m.count();
        let mut grad = Grid::filled(g.width(), g.height(), 0.0);
        if n > 0 {
            let inv_n = 1.0 / n as f64;
            let mut sum = 0.0;
            for i in 0..g.len() {
                if !m.as_slice()[i] {
                    continue;
                }
                let dp = p.as_slice()[i];
                let (e, gb) = log_residual_scalar(g.as_slice()[i] / z, dp / z_hat);
                sum += e;
                let gb = gb * inv_n;
                grad.as_mut_slice()[i] = gb / z_hat;
                grad_z_hat -= gb * dp / (z_hat * z_hat);
            }
            value += sum * inv_n;
        }
        grads.push(grad);
    }
    Ok(Loss {
        value,
        grad: ScaledGrad {
            pred: grads,
            z_hat: grad_z_hat,
        },
    })
}

/// Log-space, scale-normalized pointmap loss.
pub fn loss_pointmap(
    gt: &[Grid<Vec3>],
    pred: &[Grid<Vec3>],
    valid: &[Grid<bool>],
    z: f64,
    z_hat: f64,
) -> Result<Loss<ScaledGrad<Vec<Grid<Vec3>>>>> {
    weighted_log_loss(gt, pred, valid, |_, _| 1.0, z, z_hat)
}

/// Log-space, scale-normalized scene-flow loss with dynamic pixels weighted by
/// `w_dyn` and static ones by 1. The weighted terms are averaged over the
/// valid pixel count.
pub fn loss_sceneflow(
    gt: &[Grid<Vec3>],
    pred: &[Grid<Vec3>],
    valid: &[Grid<bool>],
    motion_mask: &[Grid<bool>],
    z: f64,
    z_hat: f64,
    w_dyn: f64,
) -> Result<Loss<ScaledGrad<Vec<Grid<Vec3>>>>> {
    if motion_mask.len() != gt.len() {
        return Err(Error::InvalidConfig("motion mask view count mismatch".into()));
    }
    for (g, m) in gt.iter().zip(motion_mask) {
        ensure_same_shape(g.shape(), m.shape())?;
    }
    weighted_log_loss(
        gt,
        pred,
        valid,
        |view, i| {
            if motion_mask[view].as_slice()[i] {
                w_dyn
            } else {
                1.0
            }
        },
        z,
        z_hat,
    )
}

/// `|f_log(z) − f_log(s̃ · sg(ẑ))|`. The gradient w.r.t. `ẑ` is zero by contract.
pub fn loss_scale(z: f64, z_hat: f64, s_pred: f64) -> Loss<ScaleGrad> {
    let (value, gb) = log_residual_scalar(z, s_pred * z_hat);
    Loss {
        value,
        grad: ScaleGrad {
            s: gb * z_hat,
            z_hat: 0.0,
        },
    }
}

/// Mean binary cross-entropy between confidence and ground-truth validity,
/// summed over views; gradient w.r.t. the confidences.
pub fn loss_mask(conf: &[Grid<f64>], valid_gt: &[Grid<bool>]) -> Result<Loss<Vec<Grid<f64>>>> {
    if conf.len() != valid_gt.len() {
        return Err(Error::InvalidConfig("mask view count mismatch".into()));
    }
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(conf.len());
    for (c, y) in conf.iter().zip(valid_gt) {
        ensure_same_shape(c.shape(), y.shape())?;
        let mut grad = Grid::filled(c.width(), c.height(), 0.0);
        if !c.is_empty() {
            let inv_n = 1.0 / c.len() as f64;
            let mut sum = 0.0;
            for i in 0..c.len() {
                let p = c.as_slice()[i];
                let g = &mut grad.as_mut_slice()[i];
                if y.as_slice()[i] {
                    sum -= p.max(BCE_EPS).ln();
                    if p > BCE_EPS {
                        *g = -inv_n / p;
                    }
                } else {
                    sum -= (1.0 - p).max(BCE_EPS).ln();
                    if 1.0 - p > BCE_EPS {
                        *g = inv_n / (1.0 - p);
                    }
                }
            }
            value += sum * inv_n;
        }
        grads.push(grad);
    }
    Ok(Loss { value, grad: grads })
}

/// Per-term weights of [`total_loss`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub rays: f64,
    pub rotation: f64,
    pub translation: f64,
    pub depth: f64,
    pub pointmap: f64,
    pub scene_flow: f64,
    pub scale: f64,
    pub mask: f64,
}

impl Default for LossWeights {
    /// 1 on the six terms of the final training objective, 0 on the pointmap
    /// and scale terms.
    fn default() -> Self {
        Self {
            rays: 1.0,
            rotation: 1.0,
            translation: 1.0,
            depth: 1.0,
            pointmap: 0.0,
            scene_flow: 1.0,
            scale: 0.0,
            mask: 1.0,
        }
    }
}

impl LossWeights {
    /// Parses `name=value` pairs separated by commas; unnamed terms keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut w = Self::default();
        for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (name, value) = item
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("weight `{item}` is not name=value")))?;
            let value: f64 = value
                .trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("weight `{item}` has a bad value")))?;
            if !(value >= 0.0 && value.is_finite()) {
                return Err(Error::InvalidConfig(format!("weight `{item}` must be nonnegative")));
            }
            let slot = match name.trim() {
                "rays" => &mut w.rays,
                "rotation" | "rot" => &mut w.rotation,
                "translation" | "trans" => &mut w.translation,
                "depth" => &mut w.depth,
                "pointmap" | "pm" => &mut w.pointmap,
                "scene_flow" | "sf" => &mut w.scene_flow,
                "scale" => &mut w.scale,
                "mask" => &mut w.mask,
                other => return Err(Error::InvalidConfig(format!("unknown loss term `{other}`"))),
            };
            *slot = value;
        }
        Ok(w)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub weights: LossWeights,
    pub dynamic_weight: f64,
    /// Metric flow magnitude (meters) above which a ground-truth pixel is dynamic.
    pub motion_theta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            dynamic_weight: DYNAMIC_WEIGHT,
            motion_theta: crate::metrics::DEFAULT_MOTION_THETA,
        }
    }
}

/// Every loss term plus the weighted total.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub rays: f64,
    pub rotation: f64,
    pub translation: f64,
    pub depth: f64,
    pub pointmap: f64,
    pub scene_flow: f64,
    pub scale: f64,
    pub mask: f64,
    pub total: f64,
    /// Ground-truth scene scale in scale-normalized units.
    pub z: f64,
    /// Predicted scene scale.
    pub z_hat: f64,
    pub weights: LossWeights,
}

impl LossReport {
    fn weighted_total(&self, w: &LossWeights) -> f64 {
        w.rays * self.rays
            + w.rotation * self.rotation
            + w.translation * self.translation
            + w.depth * self.depth
            + w.pointmap * self.pointmap
            + w.scene_flow * self.scene_flow
            + w.scale * self.scale
            + w.mask * self.mask
    }
}

/// Evaluates all loss terms of a predicted sequence against ground truth.
///
/// Pixels enter the geometric terms where both ground truth and prediction are
/// valid. A prediction without a confidence grid is scored on its hard validity
/// mask. The scale term compares the metric ground-truth scale `z · s` with
/// `s̃ · ẑ`.
pub fn total_loss(pred: &SceneSequence, gt: &SceneSequence, cfg: &LossConfig) -> Result<LossReport> {
    if pred.len() != gt.len() {
        return Err(Error::InvalidConfig(format!(
            "prediction has {} views, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    ensure_same_shape(gt.shape(), pred.shape())?;
    let n = gt.len();
    let gt_pts: Vec<_> = (0..n).map(|i| gt.pointmap(i)).collect();
    let pred_pts: Vec<_> = (0..n).map(|i| pred.pointmap(i)).collect();
    let joint: Vec<Grid<bool>> = (0..n)
        .map(|i| gt.views[i].ray_depth.valid.and(&pred.views[i].ray_depth.valid))
        .collect::<Result<_>>()?;

    let z = scene_scale(gt_pts.iter().map(|p| &p.pts).zip(joint.iter()))?;
    let z_hat = scene_scale(pred_pts.iter().map(|p| &p.pts).zip(joint.iter()))?;

    let rays = loss_rays(
        &gt.views.iter().map(|v| v.rays.dirs.clone()).collect::<Vec<_>>(),
        &pred.views.iter().map(|v| v.rays.dirs.clone()).collect::<Vec<_>>(),
        &joint,
    )?
    .value;
    let rotation = loss_rotation(
        &gt.views.iter().map(|v| v.pose.rotation()).collect::<Vec<_>>(),
        &pred.views.iter().map(|v| v.pose.rotation()).collect::<Vec<_>>(),
    )?
    .value;
    let translation = loss_translation(
        &gt.views.iter().map(|v| v.pose.translation()).collect::<Vec<_>>(),
        &pred.views.iter().map(|v| v.pose.translation()).collect::<Vec<_>>(),
        z,
        z_hat,
    )?
    .value;
    let depth = loss_depth(
        &gt.views.iter().map(|v| v.ray_depth.depth.clone()).collect::<Vec<_>>(),
        &pred.views.iter().map(|v| v.ray_depth.depth.clone()).collect::<Vec<_>>(),
        &joint,
        z,
        z_hat,
    )?
    .value;
    let pointmap = loss_pointmap(
        &gt_pts.iter().map(|p| p.pts.clone()).collect::<Vec<_>>(),
        &pred_pts.iter().map(|p| p.pts.clone()).collect::<Vec<_>>(),
        &joint,
        z,
        z_hat,
    )?
    .value;

    let gt_flows = allocentric_flows(gt)?;
    let pred_flows = allocentric_flows(pred)?;
    let (mut sf_gt, mut sf_pred, mut sf_valid, mut sf_dyn) = (vec![], vec![], vec![], vec![]);
    for (g, p) in gt_flows.iter().zip(&pred_flows) {
        if let (Some(g), Some(p)) = (g, p) {
            sf_valid.push(g.valid.and(&p.valid)?);
            sf_dyn.push(motion_mask_from_flow(&g.scaled(gt.scale.value()), cfg.motion_theta));
            sf_gt.push(g.flow.clone());
            sf_pred.push(p.flow.clone());
        }
    }
    let scene_flow = if sf_gt.is_empty() {
        0.0
    } else {
        loss_sceneflow(&sf_gt, &sf_pred, &sf_valid, &sf_dyn, z, z_hat, cfg.dynamic_weight)?.value
    };

    let scale = loss_scale(z * gt.scale.value(), z_hat, pred.scale.value()).value;

    let conf: Vec<Grid<f64>> = pred
        .views
        .iter()
        .map(|v| {
            v.confidence
                .clone()
                .unwrap_or_else(|| v.ray_depth.valid.map(|&ok| if ok { 1.0 } else { 0.0 }))
        })
        .collect();
    let valid_gt: Vec<Grid<bool>> = gt.views.iter().map(|v| v.ray_depth.valid.clone()).collect();
    let mask = loss_mask(&conf, &valid_gt)?.value;

    let mut report = LossReport {
        rays,
        rotation,
        translation,
        depth,
        pointmap,
        scene_flow,
        scale,
        mask,
        total: 0.0,
        z,
        z_hat,
        weights: cfg.weights,
    };
    report.total = report.weighted_total(&cfg.weights);
    Ok(report)
}
