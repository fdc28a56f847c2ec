//! Radial (Doppler) velocity seen by a moving sensor.

use fourdkit::motion::{radial_velocity, simulate_doppler};
use fourdkit::synth::{build_scene, gt_doppler, SceneConfig};
use fourdkit::{Grid, Pointmap, SceneFlowField, Vec3};

fn main() -> fourdkit::Result<()> {
    let p = Vec3::new(1.0, 0.0, 4.0);
    for v in [Vec3::new(0.0, 0.0, 1.0), Vec3::new(1.0, 0.0, 0.0), p.normalize() * -0.5] {
        println!("p = {p:?}, v = {v:?}: v_r = {:.4}", radial_velocity(&p, &v));
    }

    let pts = Pointmap::new(
        Grid::from_fn(3, 1, |u, _| Vec3::new(u as f64 - 1.0, 0.0, 5.0)),
        Grid::filled(3, 1, true),
    )?;
    let ego = SceneFlowField::new(Grid::filled(3, 1, Vec3::new(0.2, 0.0, 0.0)), Grid::filled(3, 1, true))?;
    let d = simulate_doppler(&pts, &ego)?;
    println!("sideways motion across three pixels: {:?}", d.vr.as_slice());

    let scene = build_scene(&SceneConfig::default())?;
    let map = gt_doppler(&scene, 3);
    let vals: Vec<f64> = map.vr.iter().zip(map.valid.iter()).filter(|(_, ok)| **ok).map(|(v, _)| *v).collect();
    let max = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    println!("synthetic frame 3: {} Doppler samples, largest |v_r| {max:.4} m/frame", vals.len());
    Ok(())
}
