//! Multi-view containers: one [`ViewBundle`] per frame plus the shared metric scale.
//!
//! Lengths (depth, translation, scene flow) are stored scale-normalized; multiply
//! by [`SceneSequence::scale`] to get meters. Doppler is stored in meters per
//! frame interval. Scene flow of every view lives on view 0's pixel grid.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{compose_pointmap, Intrinsics, MetricScale, Pointmap, Pose, RayDepthMap, RayMap, SceneFlowField};
use crate::grid::{ensure_same_shape, Grid};
use crate::motion::{DopplerMap, OpticalFlowField};

/// Whether a sequence holds ground truth or model predictions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceKind {
    GroundTruth,
    Prediction,
}

/// How the `scene_flow` grid of each view is to be interpreted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionRepr {
    /// World-frame flow of view-0 points.
    Allo,
    /// Flow of view-0 points expressed in camera-t coordinates.
    Ego,
    /// World-frame positions of view-0 points at time t.
    Points,
    /// 2D optical flow from view 0 into view t (`optical_flow` grid).
    Flow2d,
}

impl MotionRepr {
    pub fn as_str(&self) -> &'static str {
        match self {
            MotionRepr::Allo => "allo",
            MotionRepr::Ego => "ego",
            MotionRepr::Points => "points",
            MotionRepr::Flow2d => "flow2d",
        }
    }
}

impl fmt::Display for MotionRepr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MotionRepr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "allo" => Ok(MotionRepr::Allo),
            "ego" => Ok(MotionRepr::Ego),
            "points" => Ok(MotionRepr::Points),
            "flow2d" => Ok(MotionRepr::Flow2d),
            other => Err(Error::InvalidConfig(format!("unknown motion representation `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ViewBundle {
    pub intrinsics: Intrinsics,
    pub pose: Pose,
    pub rays: RayMap,
    pub ray_depth: RayDepthMap,
    pub scene_flow: Option<SceneFlowField>,
    pub doppler: Option<DopplerMap>,
    pub motion_mask: Option<Grid<bool>>,
    pub optical_flow: Option<OpticalFlowField>,
    /// Predicted per-pixel confidence in (0, 1); predictions only.
    pub confidence: Option<Grid<f64>>,
}

impl ViewBundle {
    pub fn new(intrinsics: Intrinsics, pose: Pose, rays: RayMap, ray_depth: RayDepthMap) -> Self {
        Self {
            intrinsics,
            pose,
            rays,
            ray_depth,
            scene_flow: None,
            doppler: None,
            motion_mask: None,
            optical_flow: None,
            confidence: None,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.ray_depth.shape()
    }

    /// World-frame pointmap in scale-normalized units.
    pub fn pointmap(&self) -> Pointmap {
        compose_pointmap(MetricScale::new(1.0).expect("unit"), &self.pose, &self.rays, &self.ray_depth)
            .expect("view grids checked at construction")
    }

    fn check_shapes(&self) -> Result<()> {
        let shape = self.shape();
        ensure_same_shape(shape, self.rays.dirs.shape())?;
        ensure_same_shape(shape, (self.intrinsics.width, self.intrinsics.height))?;
        if let Some(f) = &self.scene_flow {
            ensure_same_shape(shape, f.shape())?;
        }
        if let Some(d) = &self.doppler {
            ensure_same_shape(shape, d.shape())?;
        }
        if let Some(m) = &self.motion_mask {
            ensure_same_shape(shape, m.shape())?;
        }
        if let Some(o) = &self.optical_flow {
            ensure_same_shape(shape, o.shape())?;
        }
        if let Some(c) = &self.confidence {
            ensure_same_shape(shape, c.shape())?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSequence {
    pub views: Vec<ViewBundle>,
    pub scale: MetricScale,
    pub kind: SequenceKind,
    pub motion_repr: MotionRepr,
}

impl SceneSequence {
    /// Checks `N ≥ 1`, that all grids share one shape, and that view 0 is the
    /// world frame.
    pub fn new(views: Vec<ViewBundle>, scale: MetricScale, kind: SequenceKind) -> Result<Self> {
        let seq = Self {
            views,
            scale,
            kind,
            motion_repr: MotionRepr::Allo,
        };
        seq.check()?;
        Ok(seq)
    }

    pub fn with_motion_repr(mut self, repr: MotionRepr) -> Self {
        self.motion_repr = repr;
        self
    }

    pub fn check(&self) -> Result<()> {
        let first = self
            .views
            .first()
            .ok_or_else(|| Error::InvalidConfig("a sequence needs at least one view".into()))?;
        let deviation = first.pose.deviation_from_identity();
        if deviation > 1e-9 {
            return Err(Error::NonIdentityFirstPose { deviation });
        }
        let shape = first.shape();
        for v in &self.views {
            v.check_shapes()?;
            ensure_same_shape(shape, v.shape())?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    /// `(width, height)`.
    pub fn shape(&self) -> (usize, usize) {
        self.views[0].shape()
    }

    pub fn pointmap(&self, i: usize) -> Pointmap {
        self.views[i].pointmap()
    }

    pub fn metric_pointmap(&self, i: usize) -> Pointmap {
        self.views[i].pointmap().scaled(self.scale.value())
    }

    /// Metric allocentric flow of view `i`.
    pub fn metric_flow(&self, i: usize) -> Result<SceneFlowField> {
        if self.motion_repr != MotionRepr::Allo {
            return Err(Error::InvalidConfig(format!(
                "metric flow needs allocentric motion, sequence holds `{}`",
                self.motion_repr
            )));
        }
        self.views[i]
            .scene_flow
            .as_ref()
            .map(|f| f.scaled(self.scale.value()))
            .ok_or(Error::MissingGrid {
                view: i,
                grid: "scene_flow",
            })
    }

    /// Same sequence with every metric length (points, translations, flows)
    /// multiplied by `factor`. Doppler is left untouched.
    pub fn rescaled(&self, factor: f64) -> Result<SceneSequence> {
        let mut out = self.clone();
        out.scale = MetricScale::new(self.scale.value() * factor)?;
        Ok(out)
    }
}
