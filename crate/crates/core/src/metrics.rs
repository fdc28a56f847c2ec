//! Benchmark metrics: median-scale alignment, point and flow end-point error,
//! APD, the scene-flow inlier rate τ, and video-depth metrics.
//!
//! Inlier tests are strict (`error < δ`). Percent-valued metrics are in [0, 100].

use serde::{Deserialize, Serialize};

use crate::convert::allocentric_flows;
use crate::error::{Error, Result};
use crate::geom::{ray_depth_to_z_depth, Vec3};
use crate::grid::{ensure_same_shape, Grid};
use crate::motion::motion_mask_from_flow;
use crate::sequence::SceneSequence;

/// Metric flow magnitude (meters) above which a pixel counts as dynamic.
pub const DEFAULT_MOTION_THETA: f64 = 1e-3;
pub const DEFAULT_APD_THRESHOLDS: [f64; 4] = [0.1, 0.3, 0.5, 1.0];
pub const DEFAULT_TAU_THRESHOLD: f64 = 0.1;
pub const DELTA_RATIO: f64 = 1.25;
/// Predicted norms below this are left out of the alignment statistic.
pub const MIN_ALIGN_NORM: f64 = 1e-9;

pub const REPORT_SCHEMA: &str = "fourdkit.eval";
pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Neumaier-compensated sum.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut c) = (0.0_f64, 0.0_f64);
    for x in values {
        let t = sum + x;
        c += if sum.abs() >= x.abs() { (sum - t) + x } else { (x - t) + sum };
        sum = t;
    }
    sum + c
}

/// Median; the mean of the two middle values for even lengths. Reorders `values`.
pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_unstable_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignMode {
    /// Median of per-pixel ‖X_gt‖ / ‖X̃‖ over view 0.
    #[default]
    Median,
    /// Median of per-pixel z-depth ratios over view 0.
    MedianDepth,
    /// Predictions are taken as metric.
    None,
}

impl std::str::FromStr for AlignMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "median" => Ok(AlignMode::Median),
            "median_depth" | "median-depth" => Ok(AlignMode::MedianDepth),
            "none" => Ok(AlignMode::None),
            other => Err(Error::InvalidConfig(format!("unknown alignment mode `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    /// Factor applied to the prediction's metric scale.
    pub scale: f64,
    pub statistic: AlignMode,
    /// Number of ratios the median was taken over.
    pub count: usize,
}

/// Aligns `pred` to `gt` with the median of view-0 norm ratios and returns the
/// rescaled prediction.
pub fn median_scale_align(pred: &SceneSequence, gt: &SceneSequence) -> Result<(AlignmentResult, SceneSequence)> {
    align(pred, gt, AlignMode::Median)
}

pub fn align(pred: &SceneSequence, gt: &SceneSequence, mode: AlignMode) -> Result<(AlignmentResult, SceneSequence)> {
    ensure_same_shape(gt.shape(), pred.shape())?;
    let mut ratios = match mode {
        AlignMode::None => {
            return Ok((
                AlignmentResult {
                    scale: 1.0,
                    statistic: mode,
                    count: 0,
                },
                pred.clone(),
            ))
        }
        AlignMode::Median => {
            let (g, p) = (gt.metric_pointmap(0), pred.metric_pointmap(0));
            g.pts
                .iter()
                .zip(p.pts.iter())
                .zip(g.valid.iter().zip(p.valid.iter()))
                .filter(|(_, (a, b))| **a && **b)
                .filter_map(|((xg, xp), _)| {
                    let np = xp.norm();
                    (np >= MIN_ALIGN_NORM).then(|| xg.norm() / np)
                })
                .collect::<Vec<_>>()
        }
        AlignMode::MedianDepth => {
            let g = metric_z_depth(gt, 0)?;
            let p = metric_z_depth(pred, 0)?;
            let (gv, pv) = (&gt.views[0].ray_depth.valid, &pred.views[0].ray_depth.valid);
            (0..g.len())
                .filter(|&i| gv.as_slice()[i] && pv.as_slice()[i])
                .filter_map(|i| {
                    let (zg, zp) = (g.as_slice()[i], p.as_slice()[i]);
                    (zp >= MIN_ALIGN_NORM && zg > 0.0).then(|| zg / zp)
                })
                .collect::<Vec<_>>()
        }
    };
    let count = ratios.len();
    let scale = median(&mut ratios).ok_or(Error::DegenerateAlignment)?;
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::DegenerateAlignment);
    }
    let aligned = pred.rescaled(scale)?;
    Ok((
        AlignmentResult {
            scale,
            statistic: mode,
            count,
        },
        aligned,
    ))
}

fn metric_z_depth(seq: &SceneSequence, i: usize) -> Result<Grid<f64>> {
    let v = &seq.views[i];
    let s = seq.scale.value();
    Ok(ray_depth_to_z_depth(&v.rays, &v.ray_depth)?.map(|z| z * s))
}

/// Euclidean errors at masked pixels, in row-major order.
pub fn point_errors(pred: &Grid<Vec3>, gt: &Grid<Vec3>, mask: &Grid<bool>) -> Result<Vec<f64>> {
    ensure_same_shape(gt.shape(), pred.shape())?;
    ensure_same_shape(gt.shape(), mask.shape())?;
    Ok(pred
        .iter()
        .zip(gt.iter())
        .zip(mask.iter())
        .filter(|(_, m)| **m)
        .map(|((p, g), _)| (p - g).norm())
        .collect())
}

pub fn epe_from_errors(errors: &[f64]) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::EmptyMask);
    }
    Ok(compensated_sum(errors.iter().copied()) / errors.len() as f64)
}

/// Percent of errors strictly below `delta`.
pub fn inlier_percent(errors: &[f64], delta: f64) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::EmptyMask);
    }
    let inliers = errors.iter().filter(|&&e| e < delta).count();
    Ok(100.0 * inliers as f64 / errors.len() as f64)
}

/// Per-threshold inlier fraction, averaged over thresholds, in percent.
pub fn apd_from_errors(errors: &[f64], thresholds: &[f64]) -> Result<f64> {
    if thresholds.is_empty() {
        return Err(Error::InvalidConfig("APD needs at least one threshold".into()));
    }
    let per: Vec<f64> = thresholds
        .iter()
        .map(|&d| inlier_percent(errors, d))
        .collect::<Result<_>>()?;
    Ok(compensated_sum(per) / thresholds.len() as f64)
}

/// Mean Euclidean error over masked pixels.
pub fn epe(pred: &Grid<Vec3>, gt: &Grid<Vec3>, mask: &Grid<bool>) -> Result<f64> {
    epe_from_errors(&point_errors(pred, gt, mask)?)
}

pub fn apd(pred: &Grid<Vec3>, gt: &Grid<Vec3>, mask: &Grid<bool>, thresholds: &[f64]) -> Result<f64> {
    apd_from_errors(&point_errors(pred, gt, mask)?, thresholds)
}

pub fn tau_inlier(pred: &Grid<Vec3>, gt: &Grid<Vec3>, mask: &Grid<bool>, delta: f64) -> Result<f64> {
    inlier_percent(&point_errors(pred, gt, mask)?, delta)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics {
    pub abs_rel: f64,
    pub delta_125: f64,
    /// Scale applied to the predicted depth before scoring.
    pub scale: f64,
    pub count: usize,
}

/// abs-rel and δ < 1.25 over all frames. With `align`, the prediction is first
/// multiplied by the median of `gt / pred` over the scored pixels. Pixels with
/// nonpositive ground-truth or predicted depth are not scored.
pub fn depth_metrics(pred_z: &[Grid<f64>], gt_z: &[Grid<f64>], valid: &[Grid<bool>], align: bool) -> Result<DepthMetrics> {
    if pred_z.len() != gt_z.len() || gt_z.len() != valid.len() {
        return Err(Error::InvalidConfig("depth frame count mismatch".into()));
    }
    let mut pairs = Vec::new();
    for ((p, g), m) in pred_z.iter().zip(gt_z).zip(valid) {
        ensure_same_shape(g.shape(), p.shape())?;
        ensure_same_shape(g.shape(), m.shape())?;
        for ((&zp, &zg), &ok) in p.iter().zip(g.iter()).zip(m.iter()) {
            if ok && zg > 0.0 && zp > 0.0 {
                pairs.push((zp, zg));
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::EmptyMask);
    }
    let scale = if align {
        let mut ratios: Vec<f64> = pairs.iter().map(|(zp, zg)| zg / zp).collect();
        median(&mut ratios).ok_or(Error::DegenerateAlignment)?
    } else {
        1.0
    };
    let n = pairs.len() as f64;
    let abs_rel = compensated_sum(pairs.iter().map(|(zp, zg)| (scale * zp - zg).abs() / zg)) / n;
    let inliers = pairs
        .iter()
        .filter(|(zp, zg)| {
            let a = scale * zp;
            (a / zg).max(zg / a) < DELTA_RATIO
        })
        .count();
    Ok(DepthMetrics {
        abs_rel,
        delta_125: 100.0 * inliers as f64 / n,
        scale,
        count: pairs.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub apd_thresholds: Vec<f64>,
    pub tau_threshold: f64,
    pub align: AlignMode,
    pub motion_theta: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            apd_thresholds: DEFAULT_APD_THRESHOLDS.to_vec(),
            tau_threshold: DEFAULT_TAU_THRESHOLD,
            align: AlignMode::Median,
            motion_theta: DEFAULT_MOTION_THETA,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.apd_thresholds.is_empty() || self.apd_thresholds.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
            return Err(Error::InvalidConfig("APD thresholds must be positive".into()));
        }
        if !(self.tau_threshold > 0.0 && self.tau_threshold.is_finite()) {
            return Err(Error::InvalidConfig("tau threshold must be positive".into()));
        }
        if !(self.motion_theta >= 0.0 && self.motion_theta.is_finite()) {
            return Err(Error::InvalidConfig("motion threshold must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCounts {
    pub views: usize,
    /// Pixels of view 0 valid in both sequences.
    pub joint_valid: usize,
    /// Dynamic ground-truth pixels scored across all views.
    pub dynamic_points: usize,
    pub depth_pixels: usize,
}

/// Metrics of one sequence. Dynamic-point metrics are `None` when ground truth
/// has no dynamic pixel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceReport {
    pub name: String,
    pub alignment: AlignmentResult,
    pub epe_points: Option<f64>,
    pub apd: Option<f64>,
    pub epe_flow: Option<f64>,
    pub tau: Option<f64>,
    pub abs_rel: f64,
    pub delta_125: f64,
    pub counts: EvalCounts,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub sequences: usize,
    pub epe_points: Option<f64>,
    pub apd: Option<f64>,
    pub epe_flow: Option<f64>,
    pub tau: Option<f64>,
    pub abs_rel: Option<f64>,
    pub delta_125: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema: String,
    pub schema_version: u32,
    pub config: EvalConfig,
    pub sequences: Vec<SequenceReport>,
    pub aggregate: AggregateMetrics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated_at: Option<String>,
}

impl EvalReport {
    pub fn new(config: EvalConfig, sequences: Vec<SequenceReport>) -> Self {
        let aggregate = aggregate(&sequences);
        Self {
            schema: REPORT_SCHEMA.to_string(),
            schema_version: REPORT_SCHEMA_VERSION,
            config,
            sequences,
            aggregate,
            generated_at: None,
        }
    }
}

/// Means over sequences; values are sorted before summing so the result does
/// not depend on sequence order.
pub fn aggregate(seqs: &[SequenceReport]) -> AggregateMetrics {
    fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
        let mut v: Vec<f64> = values.flatten().collect();
        if v.is_empty() {
            return None;
        }
        v.sort_unstable_by(f64::total_cmp);
        Some(compensated_sum(v.iter().copied()) / v.len() as f64)
    }
    AggregateMetrics {
        sequences: seqs.len(),
        epe_points: mean(seqs.iter().map(|s| s.epe_points)),
        apd: mean(seqs.iter().map(|s| s.apd)),
        epe_flow: mean(seqs.iter().map(|s| s.epe_flow)),
        tau: mean(seqs.iter().map(|s| s.tau)),
        abs_rel: mean(seqs.iter().map(|s| Some(s.abs_rel))),
        delta_125: mean(seqs.iter().map(|s| Some(s.delta_125))),
    }
}

/// Aligns `pred` to `gt` and computes every metric.
///
/// Dynamic points are the ground-truth pixels whose metric flow exceeds
/// `motion_theta` and that are valid in both flows; they are scored as moved
/// points `X0 + F` and as flows `F`. Depth metrics use metric z-depth of every
/// view, aligned per sequence unless alignment is off.
pub fn evaluate_sequence(name: &str, pred: &SceneSequence, gt: &SceneSequence, cfg: &EvalConfig) -> Result<SequenceReport> {
    cfg.validate()?;
    if pred.len() != gt.len() {
        return Err(Error::InvalidConfig(format!(
            "prediction has {} views, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    let (alignment, pred) = align(pred, gt, cfg.align)?;
    let n = gt.len();

    let g0 = gt.metric_pointmap(0);
    let p0 = pred.metric_pointmap(0);
    let joint0 = g0.valid.and(&p0.valid)?;

    let gt_flows = allocentric_flows(gt)?;
    let pred_flows = allocentric_flows(&pred)?;
    let (mut point_err, mut flow_err) = (Vec::new(), Vec::new());
    for (i, (gf, pf)) in gt_flows.iter().zip(&pred_flows).enumerate() {
        let Some(gf) = gf else { continue };
        let pf = pf.as_ref().ok_or(Error::MissingGrid {
            view: i,
            grid: "scene_flow",
        })?;
        let gf = gf.scaled(gt.scale.value());
        let pf = pf.scaled(pred.scale.value());
        let mask = motion_mask_from_flow(&gf, cfg.motion_theta)
            .and(&pf.valid)?
            .and(&joint0)?;
        let gt_moved = g0.pts.zip_map(&gf.flow, |x, f| x + f)?;
        let pred_moved = p0.pts.zip_map(&pf.flow, |x, f| x + f)?;
        point_err.extend(point_errors(&pred_moved, &gt_moved, &mask)?);
        flow_err.extend(point_errors(&pf.flow, &gf.flow, &mask)?);
    }
    let dynamic = !point_err.is_empty();

    let mut pz = Vec::with_capacity(n);
    let mut gz = Vec::with_capacity(n);
    let mut dv = Vec::with_capacity(n);
    for i in 0..n {
        pz.push(metric_z_depth(&pred, i)?);
        gz.push(metric_z_depth(gt, i)?);
        dv.push(gt.views[i].ray_depth.valid.and(&pred.views[i].ray_depth.valid)?);
    }
    let depth = depth_metrics(&pz, &gz, &dv, cfg.align != AlignMode::None)?;

    Ok(SequenceReport {
        name: name.to_string(),
        alignment,
        epe_points: dynamic.then(|| epe_from_errors(&point_err)).transpose()?,
        apd: dynamic
            .then(|| apd_from_errors(&point_err, &cfg.apd_thresholds))
            .transpose()?,
        epe_flow: dynamic.then(|| epe_from_errors(&flow_err)).transpose()?,
        tau: dynamic
            .then(|| inlier_percent(&flow_err, cfg.tau_threshold))
            .transpose()?,
        abs_rel: depth.abs_rel,
        delta_125: depth.delta_125,
        counts: EvalCounts {
            views: n,
            joint_valid: joint0.count(),
            dynamic_points: point_err.len(),
            depth_pixels: depth.count,
        },
    })
}
