//! Central finite-difference verification of the analytic loss gradients.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Quat, Vec3};
use crate::grid::Grid;
use crate::loss::{
    loss_depth, loss_mask, loss_pointmap, loss_rays, loss_rotation, loss_scale, loss_sceneflow, loss_translation,
};

pub const DEFAULT_STEP: f64 = 1e-6;
pub const DEFAULT_TOL: f64 = 1e-5;
pub const DEFAULT_SAMPLES: usize = 100;

/// Floor of the relative-error denominator.
const REL_FLOOR: f64 = 1e-8;

/// A differentiable function of a flat parameter vector.
pub trait GradCase: Send + Sync {
    fn params(&self) -> Vec<f64>;

    /// Value and analytic gradient at `params`.
    fn eval(&self, params: &[f64]) -> (f64, Vec<f64>);

    /// Coordinates behind a stop-gradient: their analytic gradient must be
    /// exactly zero and they are excluded from the finite-difference comparison.
    fn stop_gradient(&self) -> Vec<usize> {
        Vec::new()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossId {
    Rays,
    Rotation,
    Translation,
    Depth,
    Pointmap,
    SceneFlow,
    Scale,
    Mask,
}

impl LossId {
    pub const ALL: [LossId; 8] = [
        LossId::Rays,
        LossId::Rotation,
        LossId::Translation,
        LossId::Depth,
        LossId::Pointmap,
        LossId::SceneFlow,
        LossId::Scale,
        LossId::Mask,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            LossId::Rays => "rays",
            LossId::Rotation => "rotation",
            LossId::Translation => "translation",
            LossId::Depth => "depth",
            LossId::Pointmap => "pointmap",
            LossId::SceneFlow => "scene_flow",
            LossId::Scale => "scale",
            LossId::Mask => "mask",
        }
    }
}

impl fmt::Display for LossId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossId::ALL
            .into_iter()
            .find(|id| id.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown loss `{s}`")))
    }
}

/// Outcome of checking one loss over one or more sample points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub loss: String,
    pub samples: usize,
    pub coordinates_checked: usize,
    pub max_rel_error: f64,
    pub step: f64,
    pub tol: f64,
    /// `Some(true)` when every stop-gradient coordinate reported exactly zero.
    pub stop_gradient_zero: Option<bool>,
    pub pass: bool,
}

/// Relative error `|a − n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / REL_FLOOR.max(analytic.abs() + numeric.abs())
}

/// Central differences `(f(x+h) − f(x−h)) / 2h` for every coordinate.
pub fn numerical_gradient(f: impl Fn(&[f64]) -> f64 + Sync, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .into_par_iter()
        .map(|i| {
            let mut p = x.to_vec();
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Checks one [`GradCase`] at its own parameters.
pub fn grad_check(name: &str, case: &dyn GradCase, h: f64, tol: f64) -> GradCheckReport {
    let x = case.params();
    let (_, analytic) = case.eval(&x);
    let numeric = numerical_gradient(|p| case.eval(p).0, &x, h);
    let stop = case.stop_gradient();
    let mut max_rel: f64 = 0.0;
    let mut checked = 0;
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        if stop.contains(&i) {
            continue;
        }
        checked += 1;
        let e = relative_error(*a, *n);
        // NaN must fail
        max_rel = if e.is_nan() { f64::INFINITY } else { max_rel.max(e) };
    }
    let stop_gradient_zero = (!stop.is_empty()).then(|| stop.iter().all(|&i| analytic[i] == 0.0));
    GradCheckReport {
        loss: name.to_string(),
        samples: 1,
        coordinates_checked: checked,
        max_rel_error: max_rel,
        step: h,
        tol,
        stop_gradient_zero,
        pass: max_rel < tol && stop_gradient_zero != Some(false),
    }
}

/// Checks `loss` at `samples` random points drawn from `seed`.
pub fn grad_check_loss(loss: LossId, seed: u64, samples: usize, h: f64, tol: f64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (loss as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut merged = GradCheckReport {
        loss: loss.name().to_string(),
        samples: 0,
        coordinates_checked: 0,
        max_rel_error: 0.0,
        step: h,
        tol,
        stop_gradient_zero: None,
        pass: true,
    };
    for _ in 0..samples {
        let case = random_case(loss, &mut rng);
        let r = grad_check(loss.name(), case.as_ref(), h, tol);
        merged.samples += 1;
        merged.coordinates_checked += r.coordinates_checked;
        merged.max_rel_error = merged.max_rel_error.max(r.max_rel_error);
        merged.stop_gradient_zero = match (merged.stop_gradient_zero, r.stop_gradient_zero) {
            (None, x) => x,
            (Some(a), Some(b)) => Some(a && b),
            (a, None) => a,
        };
        merged.pass &= r.pass;
    }
    merged
}

/// Draws a random input for `loss`, away from its non-smooth set: per-pixel
/// residuals are bounded away from zero, log-space arguments stay outside a
/// 1e-4 ball around the origin, and rotations stay off the sign-tie set.
pub fn random_case(loss: LossId, rng: &mut impl Rng) -> Box<dyn GradCase> {
    let (w, h) = (3, 2);
    let views = 2;
    match loss {
        LossId::Rays => {
            let gt = (0..views).map(|_| vec_grid(rng, w, h, 0.3, 1.0)).collect();
            let pred = (0..views).map(|_| vec_grid(rng, w, h, 0.3, 1.0)).collect::<Vec<_>>();
            let valid = (0..views).map(|_| mask(rng, w, h)).collect();
            Box::new(RaysCase { gt, pred, valid })
        }
        LossId::Rotation => {
            let mut gt = Vec::new();
            let mut pred = Vec::new();
            while gt.len() < views {
                let q = random_quat(rng);
                let qp = Quat::new(
                    q.w + rng.random_range(-0.5..0.5),
                    q.x + rng.random_range(-0.5..0.5),
                    q.y + rng.random_range(-0.5..0.5),
                    q.z + rng.random_range(-0.5..0.5),
                );
                let qp = if rng.random_bool(0.5) { qp.neg() } else { qp };
                let d_minus = quat_dist(&q, &qp);
                let d_plus = quat_dist(&q.neg(), &qp);
                if (d_minus - d_plus).abs() > 1e-3 && d_minus.min(d_plus) > 1e-3 {
                    gt.push(q);
                    pred.push(qp);
                }
            }
            Box::new(RotationCase { gt, pred })
        }
        LossId::Translation => {
            let gt = (0..views).map(|_| random_vec(rng, 0.2, 3.0)).collect();
            let pred = (0..views).map(|_| random_vec(rng, 0.2, 3.0)).collect();
            Box::new(TranslationCase {
                gt,
                pred,
                z: rng.random_range(0.5..3.0),
                z_hat: rng.random_range(0.5..3.0),
            })
        }
        LossId::Depth => {
            let gt = (0..views).map(|_| scalar_grid(rng, w, h, 0.5, 5.0)).collect();
            let pred = (0..views).map(|_| scalar_grid(rng, w, h, 0.5, 5.0)).collect();
            Box::new(DepthCase {
                gt,
                pred,
                valid: (0..views).map(|_| mask(rng, w, h)).collect(),
                z: rng.random_range(0.5..3.0),
                z_hat: rng.random_range(0.5..3.0),
            })
        }
        LossId::Pointmap | LossId::SceneFlow => {
            let gt = (0..views).map(|_| vec_grid(rng, w, h, 0.3, 4.0)).collect();
            let pred = (0..views).map(|_| vec_grid(rng, w, h, 0.3, 4.0)).collect();
            let valid = (0..views).map(|_| mask(rng, w, h)).collect();
            let (dynamic, w_dyn) = if loss == LossId::SceneFlow {
                (
                    Some((0..views).map(|_| Grid::from_fn(w, h, |_, _| rng.random_bool(0.4))).collect()),
                    10.0,
                )
            } else {
                (None, 1.0)
            };
            Box::new(LogFieldCase {
                gt,
                pred,
                valid,
                dynamic,
                w_dyn,
                z: rng.random_range(0.5..3.0),
                z_hat: rng.random_range(0.5..3.0),
            })
        }
        LossId::Scale => loop {
            let z: f64 = rng.random_range(0.5..5.0);
            let z_hat: f64 = rng.random_range(0.5..5.0);
            let s: f64 = rng.random_range(0.2..5.0);
            if (z.ln_1p() - (s * z_hat).ln_1p()).abs() > 1e-3 {
                break Box::new(ScaleCase { z, z_hat, s });
            }
        },
        LossId::Mask => {
            let conf = (0..views)
                .map(|_| Grid::from_fn(w, h, |_, _| rng.random_range(0.05..0.95)))
                .collect();
            let valid = (0..views).map(|_| Grid::from_fn(w, h, |_, _| rng.random_bool(0.6))).collect();
            Box::new(MaskCase { conf, valid })
        }
    }
}

fn random_vec(rng: &mut impl Rng, min_norm: f64, max_norm: f64) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n * rng.random_range(min_norm..max_norm);
        }
    }
}

fn quat_dist(a: &Quat, b: &Quat) -> f64 {
    let (a, b) = (a.to_array(), b.to_array());
    a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn random_quat(rng: &mut impl Rng) -> Quat {
    loop {
        let q = Quat::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = q.norm();
        if n > 0.1 && n <= 1.0 {
            return q.normalized();
        }
    }
}

fn vec_grid(rng: &mut impl Rng, w: usize, h: usize, lo: f64, hi: f64) -> Grid<Vec3> {
    Grid::from_fn(w, h, |_, _| random_vec(rng, lo, hi))
}

fn scalar_grid(rng: &mut impl Rng, w: usize, h: usize, lo: f64, hi: f64) -> Grid<f64> {
    Grid::from_fn(w, h, |_, _| rng.random_range(lo..hi))
}

/// Random mask with at least one valid pixel.
fn mask(rng: &mut impl Rng, w: usize, h: usize) -> Grid<bool> {
    let mut m = Grid::from_fn(w, h, |_, _| rng.random_bool(0.8));
    if m.count() == 0 {
        *m.get_mut(0, 0) = true;
    }
    m
}

fn flatten_vec3(grids: &[Grid<Vec3>], out: &mut Vec<f64>) {
    for g in grids {
        for v in g.iter() {
            out.extend_from_slice(v.as_slice());
        }
    }
}

fn unflatten_vec3(template: &[Grid<Vec3>], flat: &[f64]) -> Vec<Grid<Vec3>> {
    let mut k = 0;
    template
        .iter()
        .map(|g| {
            Grid::from_fn(g.width(), g.height(), |_, _| {
                let v = Vec3::new(flat[k], flat[k + 1], flat[k + 2]);
                k += 3;
                v
            })
        })
        .collect()
}

fn unflatten_scalar(template: &[Grid<f64>], flat: &[f64]) -> Vec<Grid<f64>> {
    let mut k = 0;
    template
        .iter()
        .map(|g| {
            Grid::from_fn(g.width(), g.height(), |_, _| {
                k += 1;
                flat[k - 1]
            })
        })
        .collect()
}

struct RaysCase {
    gt: Vec<Grid<Vec3>>,
    pred: Vec<Grid<Vec3>>,
    valid: Vec<Grid<bool>>,
}

impl GradCase for RaysCase {
    fn params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        flatten_vec3(&self.pred, &mut out);
        out
    }

    fn eval(&self, params: &[f64]) -> (f64, Vec<f64>) {
        let pred = unflatten_vec3(&self.pred, params);
        let l = loss_rays(&self.gt, &pred, &self.valid).expect("consistent case");
        let mut g = Vec::new();
        flatten_vec3(&l.grad, &mut g);
        (l.value, g)
    }
}

struct RotationCase {
    gt: Vec<Quat>,
    pred: Vec<Quat>,
}

impl GradCase for RotationCase {
    fn params(&self) -> Vec<f64> {
        self.pred.iter().flat_map(|q| q.to_array()).collect()
    }

    fn eval(&self, params: &[f64]) -> (f64, Vec<f64>) {
        let pred: Vec<Quat> = params.chunks(4).map(|c| Quat::new(c[0], c[1], c[2], c[3])).collect();
        let l = loss_rotation(&self.gt, &pred).expect("consistent case");
        (l.value, l.grad.iter().flat_map(|q| q.to_array()).collect())
    }
}

struct TranslationCase {
    gt: Vec<Vec3>,
    pred: Vec<Vec3>,
    z: f64,
    z_hat: f64,
}

impl GradCase for TranslationCase {
    fn params(&self) -> Vec<f64> {
        let mut p: Vec<f64> = self.pred.iter().flat_map(|t| [t.x, t.y, t.z]).collect();
        p.push(self.z_hat);
        p
    }

    fn eval(&self, params: &[f64]) -> (f64, Vec<f64>) {
        let n = params.len() - 1;
        let pred: Vec<Vec3> = params[..n].chunks(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect();
        let l = loss_translation(&self.gt, &pred, self.z, params[n]).expect("consistent case");
        let mut g: Vec<f64> = l.grad.pred.iter().flat_map(|t| [t.x, t.y, t.z]).collect();
        g.push(l.grad.z_hat);
        (l.value, g)
    }
}

struct DepthCase {
    gt: Vec<Grid<f64>>,
    pred: Vec<Grid<f64>>,
    valid: Vec<Grid<bool>>,
    z: f64,
    z_hat: f64,
}

impl GradCase for DepthCase {
    fn params(&self) -> Vec<f64> {
        let mut p: Vec<f64> = self.pred.iter().flat_map(|g| g.iter().copied()).collect();
        p.push(self.z_hat);
        p
    }

    fn eval(&self, params: &[f64]) -> (f64, Vec<f64>) {
        let n = params.len() - 1;
        let pred = unflatten_scalar(&self.pred, &params[..n]);
        let l = loss_depth(&self.gt, &pred, &self.valid, self.z, params[n]).expect("consistent case");
        let mut g: Vec<f64> = l.grad.pred.iter().flat_map(|g| g.iter().copied()).collect();
        g.push(l.grad.z_hat);
        (l.value, g)
    }
}

/// Pointmap loss, or scene-flow loss when `dynamic` is set.
struct LogFieldCase {
    gt: Vec<Grid<Vec3>>,
    pred: Vec<Grid<Vec3>>,
    valid: Vec<Grid<bool>>,
    dynamic: Option<Vec<Grid<bool>>>,
    w_dyn: f64,
    z: f64,
    z_hat: f64,
}

impl GradCase for LogFieldCase {
    fn params(&self) -> Vec<f64> {
        let mut p = Vec::new();
        flatten_vec3(&self.pred, &mut p);
        p.push(self.z_hat);
        p
    }

    fn eval(&self, params: &[f64]) -> (f64, Vec<f64>) {
        let n = params.len() - 1;
        let pred = unflatten_vec3(&self.pred, &params[..n]);
        let l = match &self.dynamic {
            Some(m) => loss_sceneflow(&self.gt, &pred, &self.valid, m, self.z, params[n], self.w_dyn),
            None => loss_pointmap(&self.gt, &pred, &self.valid, self.z, params[n]),
        }
        .expect("consistent case");
        let mut g = Vec::new();
        flatten_vec3(&l.grad.pred, &mut g);
        g.push(l.grad.z_hat);
        (l.value, g)
    }
}

struct ScaleCase {
    z: f64,
    z_hat: f64,
    s: f64,
}

impl GradCase for ScaleCase {
    fn params(&self) -> Vec<f64> {
        vec![self.s, self.z_hat]
    }

    fn eval(&self, params: &[f64]) -> (f64, Vec<f64>) {
        let l = loss_scale(self.z, params[1], params[0]);
        (l.value, vec![l.grad.s, l.grad.z_hat])
    }

    fn stop_gradient(&self) -> Vec<usize> {
        vec![1]
    }
}

struct MaskCase {
    conf: Vec<Grid<f64>>,
    valid: Vec<Grid<bool>>,
}

impl GradCase for MaskCase {
    fn params(&self) -> Vec<f64> {
        self.conf.iter().flat_map(|g| g.iter().copied()).collect()
    }

    fn eval(&self, params: &[f64]) -> (f64, Vec<f64>) {
        let conf = unflatten_scalar(&self.conf, params);
        let l = loss_mask(&conf, &self.valid).expect("consistent case");
        (l.value, l.grad.iter().flat_map(|g| g.iter().copied()).collect())
    }
}
