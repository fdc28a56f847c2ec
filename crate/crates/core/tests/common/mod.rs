#![allow(dead_code)]

use fourdkit::synth::{CameraMotion, ObjectConfig, Range, SceneConfig};
use fourdkit::{Grid, Quat, Vec3};
use rand::Rng;

pub fn unit_vec(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

pub fn quat(rng: &mut impl Rng) -> Quat {
    let angle = rng.random_range(0.0..std::f64::consts::PI);
    Quat::from_axis_angle(&unit_vec(rng), angle)
}

pub fn vec_in(rng: &mut impl Rng, lo: f64, hi: f64) -> Vec3 {
    unit_vec(rng) * rng.random_range(lo..hi)
}

pub fn vec_grid(rng: &mut impl Rng, w: usize, h: usize, lo: f64, hi: f64) -> Grid<Vec3> {
    Grid::from_fn(w, h, |_, _| vec_in(rng, lo, hi))
}

pub fn mask(rng: &mut impl Rng, w: usize, h: usize, p: f64) -> Grid<bool> {
    let mut m = Grid::from_fn(w, h, |_, _| rng.random_bool(p));
    if m.count() == 0 {
        *m.get_mut(0, 0) = true;
    }
    m
}

/// A small moving scene that differs with `seed` in objects and camera path.
pub fn scene_config(seed: u64) -> SceneConfig {
    let camera = match seed % 3 {
        0 => CameraMotion::Static,
        1 => CameraMotion::Orbit {
            pivot_depth: 5.0,
            step: 0.04,
        },
        _ => CameraMotion::Linear {
            velocity: [0.05, -0.02, 0.03],
            yaw_rate: 0.02,
        },
    };
    SceneConfig {
        seed,
        frames: 3,
        width: 32,
        height: 24,
        focal: 30.0,
        principal_point: None,
        camera,
        objects: ObjectConfig {
            count: 3,
            speed: Range(0.05, 0.2),
            spin: Range(0.0, 0.2),
            ..ObjectConfig::default()
        },
        metric_scale: 0.5 + (seed % 5) as f64,
        ..SceneConfig::default()
    }
}

pub fn assert_vec_close(a: &Vec3, b: &Vec3, tol: f64) {
    assert!((a - b).norm() <= tol, "{a:?} vs {b:?} (tol {tol})");
}
