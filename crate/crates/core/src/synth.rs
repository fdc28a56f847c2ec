//! Deterministic synthetic 4D scenes built from analytic primitives (spheres
//! and rectangular plane patches) moving rigidly in front of a moving camera.
//!
//! Scenes are generated in meters. [`build_sequence`] divides every length by
//! the configured metric scale when filling a [`SceneSequence`].

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::{write_bundle, Manifest};
use crate::error::{Error, Result};
use crate::geom::{rays_from_intrinsics, Intrinsics, MetricScale, Pointmap, Pose, Quat, RayDepthMap, SceneFlowField, Vec2, Vec3, NAN3};
use crate::grid::Grid;
use crate::motion::{motion_mask_from_flow, simulate_doppler, DopplerMap, OpticalFlowField};
use crate::sequence::{SceneSequence, SequenceKind, ViewBundle};

/// Relative slack of the occlusion test used for covisibility.
pub const OCCLUSION_REL_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    /// Sphere centered on the body origin.
    Sphere { radius: f64 },
    /// Rectangle in the body's local `z = 0` plane, `|x| ≤ half_x`, `|y| ≤ half_y`.
    PlanePatch { half_x: f64, half_y: f64 },
}

impl Shape {
    /// Distance along a unit ray (body frame) to the nearest hit in front of the origin.
    pub fn intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        match *self {
            Shape::Sphere { radius } => {
                // |o + λd|² = r² with |d| = 1
                let b = origin.dot(dir);
                let c = origin.norm_squared() - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                // stable roots: λ1·λ2 = c
                let q = if b > 0.0 { -b - sq } else { -b + sq };
                let (l1, l2) = if q == 0.0 { (0.0, 0.0) } else { (q, c / q) };
                let (near, far) = if l1 < l2 { (l1, l2) } else { (l2, l1) };
                if near > 0.0 {
                    Some(near)
                } else if far > 0.0 {
                    Some(far)
                } else {
                    None
                }
            }
            Shape::PlanePatch { half_x, half_y } => {
                if dir.z == 0.0 {
                    return None;
                }
                let t = -origin.z / dir.z;
                if !(t > 0.0) {
                    return None;
                }
                let p = origin + dir * t;
                (p.x.abs() <= half_x && p.y.abs() <= half_y).then_some(t)
            }
        }
    }
}

/// A rigid primitive with its object-to-world pose at every frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidBody {
    pub shape: Shape,
    pub trajectory: Vec<Pose>,
}

impl RigidBody {
    /// Nearest hit of a world-frame unit ray at frame `t`.
    pub fn intersect(&self, t: usize, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        let to_body = self.trajectory[t].inverse();
        self.shape
            .intersect(&to_body.transform_point(origin), &to_body.rotate_vector(dir))
    }

    /// World position at frame `t` of the material point at `x` on frame 0.
    pub fn carry(&self, t: usize, x: &Vec3) -> Vec3 {
        self.trajectory[t].transform_point(&self.trajectory[0].inverse().transform_point(x))
    }

    /// `carry(t, x) − x`. When the orientation is unchanged this is the
    /// translation difference alone, so static and purely translating bodies
    /// get exact flow.
    pub fn displacement(&self, t: usize, x: &Vec3) -> Vec3 {
        let (p0, pt) = (&self.trajectory[0], &self.trajectory[t]);
        if pt.rotation() == p0.rotation() {
            pt.translation() - p0.translation()
        } else {
            self.carry(t, x) - x
        }
    }

    pub fn is_static(&self) -> bool {
        self.trajectory.iter().all(|p| p == &self.trajectory[0])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum CameraMotion {
    Static,
    /// Orbit about the vertical axis through `(0, 0, pivot_depth)` by `step` radians per frame.
    Orbit { pivot_depth: f64, step: f64 },
    /// Constant velocity (meters per frame) and yaw rate (radians per frame).
    Linear {
        velocity: [f64; 3],
        #[serde(default)]
        yaw_rate: f64,
    },
}

impl CameraMotion {
    pub fn pose(&self, t: usize) -> Pose {
        let t = t as f64;
        let up = Vec3::new(0.0, 1.0, 0.0);
        match *self {
            CameraMotion::Static => Pose::identity(),
            CameraMotion::Orbit { pivot_depth, step } => {
                let q = Quat::from_axis_angle(&up, step * t);
                let pivot = Vec3::new(0.0, 0.0, pivot_depth);
                pose_unchecked(q, pivot - q.rotate(&pivot))
            }
            CameraMotion::Linear { velocity, yaw_rate } => {
                let v = Vec3::from(velocity);
                pose_unchecked(Quat::from_axis_angle(&up, yaw_rate * t), v * t)
            }
        }
    }
}

fn pose_unchecked(q: Quat, t: Vec3) -> Pose {
    Pose::new(q, t).expect("unit quaternion by construction")
}

/// Inclusive sampling range.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range(pub f64, pub f64);

impl Range {
    fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.0 == self.1 {
            self.0
        } else {
            rng.random_range(self.0..=self.1)
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.0 <= x && x <= self.1
    }

    fn check(&self, name: &str, positive: bool) -> Result<()> {
        let ok = self.0.is_finite() && self.1.is_finite() && self.0 <= self.1 && (!positive || self.0 > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("range `{name}` = [{}, {}] is invalid", self.0, self.1)))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectConfig {
    pub count: usize,
    /// Probability that an object is a sphere rather than a plane patch.
    pub sphere_fraction: f64,
    /// Sphere radius or patch half extent, meters.
    pub size: Range,
    /// Initial center depth along the optical axis, meters.
    pub depth: Range,
    /// Fraction of the half field of view the initial center may sit off-axis.
    pub spread: f64,
    /// Translation speed, meters per frame.
    pub speed: Range,
    /// Spin rate about a random axis, radians per frame.
    pub spin: Range,
    /// Largest initial tilt of a plane patch away from facing the camera, radians.
    pub max_tilt: f64,
}

impl Default for ObjectConfig {
    fn default() -> Self {
        Self {
            count: 3,
            sphere_fraction: 0.6,
            size: Range(0.3, 0.8),
            depth: Range(3.0, 6.0),
            spread: 0.6,
            speed: Range(0.02, 0.15),
            spin: Range(0.0, 0.1),
            max_tilt: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackgroundConfig {
    pub enabled: bool,
    /// Distance of the fronto-parallel background plane, meters.
    pub depth: f64,
}

impl Default for BackgroundConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            depth: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub seed: u64,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    /// Principal point; the image center when absent.
    pub principal_point: Option<[f64; 2]>,
    pub camera: CameraMotion,
    pub objects: ObjectConfig,
    pub background: BackgroundConfig,
    /// Meters per stored unit.
    pub metric_scale: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            frames: 4,
            width: 64,
            height: 48,
            focal: 60.0,
            principal_point: None,
            camera: CameraMotion::Orbit {
                pivot_depth: 5.0,
                step: 0.02,
            },
            objects: ObjectConfig::default(),
            background: BackgroundConfig::default(),
            metric_scale: 1.0,
        }
    }
}

impl SceneConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SceneConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn intrinsics(&self) -> Result<Intrinsics> {
        let [cx, cy] = self
            .principal_point
            .unwrap_or([self.width as f64 / 2.0, self.height as f64 / 2.0]);
        Intrinsics::new(self.focal, self.focal, cx, cy, self.width, self.height)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames < 2 {
            return Err(Error::InvalidConfig("a scene needs at least two frames".into()));
        }
        self.intrinsics()?;
        MetricScale::new(self.metric_scale)?;
        let o = &self.objects;
        o.size.check("objects.size", true)?;
        o.depth.check("objects.depth", true)?;
        o.speed.check("objects.speed", false)?;
        o.spin.check("objects.spin", false)?;
        if !(0.0..=1.0).contains(&o.sphere_fraction) || !(0.0..=1.0).contains(&o.spread) || !(o.max_tilt >= 0.0) {
            return Err(Error::InvalidConfig(
                "sphere_fraction and spread must lie in [0, 1], max_tilt must be nonnegative".into(),
            ));
        }
        if self.background.enabled && !(self.background.depth > 0.0) {
            return Err(Error::InvalidConfig("background depth must be positive".into()));
        }
        Ok(())
    }
}

/// A generated scene in meters.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub config: SceneConfig,
    pub intrinsics: Intrinsics,
    /// Camera-to-world pose per frame; frame 0 is the identity.
    pub cameras: Vec<Pose>,
    /// Moving objects first, then the background plane if enabled.
    pub bodies: Vec<RigidBody>,
}

impl Scene {
    pub fn frames(&self) -> usize {
        self.cameras.len()
    }

    /// Assembles a scene from explicit parts; the first camera must be the identity.
    pub fn from_parts(intrinsics: Intrinsics, cameras: Vec<Pose>, bodies: Vec<RigidBody>) -> Result<Self> {
        intrinsics.validate()?;
        let first = cameras
            .first()
            .ok_or_else(|| Error::InvalidConfig("a scene needs at least one camera".into()))?;
        let deviation = first.deviation_from_identity();
        if deviation > 1e-9 {
            return Err(Error::NonIdentityFirstPose { deviation });
        }
        if bodies.iter().any(|b| b.trajectory.len() != cameras.len()) {
            return Err(Error::InvalidConfig("every body needs one pose per frame".into()));
        }
        let config = SceneConfig {
            frames: cameras.len(),
            width: intrinsics.width,
            height: intrinsics.height,
            focal: intrinsics.fx,
            principal_point: Some([intrinsics.cx, intrinsics.cy]),
            ..SceneConfig::default()
        };
        Ok(Self {
            config,
            intrinsics,
            cameras,
            bodies,
        })
    }

    /// Nearest hit of a world ray at frame `t`: `(distance, body index)`.
    pub fn cast(&self, t: usize, origin: &Vec3, dir: &Vec3) -> Option<(f64, usize)> {
        self.bodies
            .iter()
            .enumerate()
            .filter_map(|(k, b)| b.intersect(t, origin, dir).map(|d| (d, k)))
            .min_by(|a, b| a.0.total_cmp(&b.0))
    }
}

pub fn build_scene(cfg: &SceneConfig) -> Result<Scene> {
    cfg.validate()?;
    let k = cfg.intrinsics()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.frames;
    let cameras: Vec<Pose> = (0..n).map(|t| cfg.camera.pose(t)).collect();

    let o = &cfg.objects;
    let half_fov_x = (k.width as f64 / 2.0) / k.fx;
    let half_fov_y = (k.height as f64 / 2.0) / k.fy;
    let mut bodies = Vec::with_capacity(o.count + 1);
    for _ in 0..o.count {
        let sphere = rng.random_bool(o.sphere_fraction);
        let size = o.size.sample(&mut rng);
        let z = o.depth.sample(&mut rng);
        let x = rng.random_range(-1.0..=1.0) * o.spread * half_fov_x * z;
        let y = rng.random_range(-1.0..=1.0) * o.spread * half_fov_y * z;
        let center = Vec3::new(x, y, z);
        let velocity = unit_vector(&mut rng) * o.speed.sample(&mut rng);
        let spin_axis = unit_vector(&mut rng);
        let spin = o.spin.sample(&mut rng);
        let (shape, orientation) = if sphere {
            (Shape::Sphere { radius: size }, Quat::IDENTITY)
        } else {
            let aspect = rng.random_range(0.5..=1.0);
            let tilt = Quat::from_axis_angle(&unit_vector(&mut rng), rng.random_range(0.0..=o.max_tilt));
            (
                Shape::PlanePatch {
                    half_x: size,
                    half_y: size * aspect,
                },
                tilt,
            )
        };
        let trajectory = (0..n)
            .map(|t| {
                let t = t as f64;
                let q = Quat::from_axis_angle(&spin_axis, spin * t).mul(&orientation);
                pose_unchecked(q.normalized(), center + velocity * t)
            })
            .collect();
        bodies.push(RigidBody { shape, trajectory });
    }
    if cfg.background.enabled {
        // large enough to fill every view of the moving cameras configured here
        let d = cfg.background.depth;
        let half = 50.0 * d.max(1.0);
        bodies.push(RigidBody {
            shape: Shape::PlanePatch {
                half_x: half,
                half_y: half,
            },
            trajectory: vec![Pose::from_translation(Vec3::new(0.0, 0.0, d)); n],
        });
    }
    Ok(Scene {
        config: cfg.clone(),
        intrinsics: k,
        cameras,
        bodies,
    })
}

fn unit_vector(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Ray depth in meters and the index of the body hit, per pixel of frame `t`.
pub fn render_view(scene: &Scene, t: usize) -> (RayDepthMap, Grid<Option<usize>>) {
    let k = &scene.intrinsics;
    let cam = &scene.cameras[t];
    let origin = cam.translation();
    let hits: Vec<Option<(f64, usize)>> = (0..k.width * k.height)
        .into_par_iter()
        .map(|i| {
            let (u, v) = (i % k.width, i / k.width);
            let dir = cam.rotate_vector(&k.ray(u as f64, v as f64));
            scene.cast(t, &origin, &dir)
        })
        .collect();
    let depth = hits.iter().map(|h| h.map_or(f64::NAN, |(d, _)| d)).collect();
    let valid = hits.iter().map(Option::is_some).collect();
    let ids = hits.iter().map(|h| h.map(|(_, k)| k)).collect();
    let (w, h) = (k.width, k.height);
    (
        RayDepthMap::new(Grid::from_vec(w, h, depth).expect("sized"), Grid::from_vec(w, h, valid).expect("sized"))
            .expect("same shape"),
        Grid::from_vec(w, h, ids).expect("sized"),
    )
}

/// View-0 world points (meters) and the body each one lies on.
fn view0_points(scene: &Scene) -> (Pointmap, Grid<Option<usize>>) {
    let (depth, ids) = render_view(scene, 0);
    let rays = rays_from_intrinsics(&scene.intrinsics).expect("validated intrinsics");
    let pts = rays
        .dirs
        .zip_map(&depth.depth, |r, d| r * *d)
        .expect("same shape");
    (Pointmap::new(pts, depth.valid).expect("same shape"), ids)
}

/// World-frame flow (meters) of view-0 surface points from frame 0 to frame `t`.
pub fn gt_scene_flow(scene: &Scene, t: usize) -> SceneFlowField {
    let (g0, ids) = view0_points(scene);
    flow_from(scene, t, &g0, &ids)
}

fn flow_from(scene: &Scene, t: usize, g0: &Pointmap, ids: &Grid<Option<usize>>) -> SceneFlowField {
    let flow = g0
        .pts
        .zip_map(ids, |x, id| match id {
            Some(k) => scene.bodies[*k].displacement(t, x),
            None => NAN3,
        })
        .expect("same shape");
    SceneFlowField::new(flow, g0.valid.clone()).expect("same shape")
}

/// Flow in camera-t coordinates: the moved point minus the same pixel's
/// view-0 point, both expressed in camera t.
pub fn gt_ego_flow(scene: &Scene, t: usize) -> SceneFlowField {
    let (g0, ids) = view0_points(scene);
    ego_from(scene, t, &g0, &flow_from(scene, t, &g0, &ids))
}

fn ego_from(scene: &Scene, t: usize, g0: &Pointmap, allo: &SceneFlowField) -> SceneFlowField {
    let to_cam = scene.cameras[t].inverse();
    let flow = g0
        .pts
        .zip_map(&allo.flow, |x, f| to_cam.transform_point(&(x + f)) - to_cam.transform_point(x))
        .expect("same shape");
    SceneFlowField::new(flow, allo.valid.clone()).expect("same shape")
}

/// Radial velocity (meters per frame) of view-0 points as seen from camera `t`.
pub fn gt_doppler(scene: &Scene, t: usize) -> DopplerMap {
    let (g0, ids) = view0_points(scene);
    let allo = flow_from(scene, t, &g0, &ids);
    doppler_from(scene, t, &g0, &ego_from(scene, t, &g0, &allo))
}

fn doppler_from(scene: &Scene, t: usize, g0: &Pointmap, ego: &SceneFlowField) -> DopplerMap {
    let to_cam = scene.cameras[t].inverse();
    let cam_points = Pointmap {
        pts: g0.pts.map(|x| to_cam.transform_point(x)),
        valid: g0.valid.clone(),
    };
    simulate_doppler(&cam_points, ego).expect("same shape")
}

/// Optical flow from view 0 to view `t`, valid where the moved point projects
/// inside view `t` and is its nearest surface there.
pub fn gt_optical_flow(scene: &Scene, t: usize) -> OpticalFlowField {
    let (g0, ids) = view0_points(scene);
    optical_flow_from(scene, t, &g0, &flow_from(scene, t, &g0, &ids))
}

fn optical_flow_from(scene: &Scene, t: usize, g0: &Pointmap, allo: &SceneFlowField) -> OpticalFlowField {
    let k = &scene.intrinsics;
    let cam = &scene.cameras[t];
    let to_cam = cam.inverse();
    let origin = cam.translation();
    let (w, h) = (k.width, k.height);
    let nan2 = Vec2::new(f64::NAN, f64::NAN);
    let out: Vec<Option<Vec2>> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let (u, v) = (i % w, i / w);
            let moved = g0.get(u, v)? + allo.get(u, v)?;
            let pc = to_cam.transform_point(&moved);
            let px = k.project_point(&pc)?;
            let inside = px.x >= 0.0 && px.y >= 0.0 && px.x <= (w - 1) as f64 && px.y <= (h - 1) as f64;
            if !inside {
                return None;
            }
            let range = pc.norm();
            let dir = (moved - origin) / range;
            let (hit, _) = scene.cast(t, &origin, &dir)?;
            (hit >= range * (1.0 - OCCLUSION_REL_TOL) - OCCLUSION_REL_TOL)
                .then(|| Vec2::new(px.x - u as f64, px.y - v as f64))
        })
        .collect();
    let uv = Grid::from_vec(w, h, out.iter().map(|o| o.unwrap_or(nan2)).collect()).expect("sized");
    let valid = Grid::from_vec(w, h, out.iter().map(Option::is_some).collect()).expect("sized");
    OpticalFlowField::new(uv, valid).expect("same shape")
}

/// Ground-truth sequence with every motion grid filled: allocentric scene
/// flow, Doppler, motion mask (any nonzero displacement) and covisible optical
/// flow. Lengths are divided by the configured metric scale.
pub fn build_sequence(scene: &Scene) -> Result<SceneSequence> {
    let s = scene.config.metric_scale;
    let scale = MetricScale::new(s)?;
    let rays = rays_from_intrinsics(&scene.intrinsics)?;
    let (g0, ids) = view0_points(scene);
    let views = (0..scene.frames())
        .map(|t| {
            let (depth, _) = render_view(scene, t);
            let depth = RayDepthMap::new(depth.depth.map(|d| d / s), depth.valid)?;
            let cam = &scene.cameras[t];
            let pose = Pose::new(cam.rotation(), cam.translation() / s)?;
            let mut view = ViewBundle::new(scene.intrinsics, pose, rays.clone(), depth);
            let allo = flow_from(scene, t, &g0, &ids);
            let ego = ego_from(scene, t, &g0, &allo);
            view.doppler = Some(doppler_from(scene, t, &g0, &ego));
            view.motion_mask = Some(motion_mask_from_flow(&allo, 0.0));
            view.optical_flow = Some(optical_flow_from(scene, t, &g0, &allo));
            view.scene_flow = Some(allo.scaled(1.0 / s));
            Ok(view)
        })
        .collect::<Result<Vec<_>>>()?;
    SceneSequence::new(views, scale, SequenceKind::GroundTruth)
}

/// Generates the scene for `cfg` and writes its ground truth as a bundle.
pub fn export_bundle(cfg: &SceneConfig, out: &Path) -> Result<Manifest> {
    let scene = build_scene(cfg)?;
    write_bundle(&build_sequence(&scene)?, out)
}
