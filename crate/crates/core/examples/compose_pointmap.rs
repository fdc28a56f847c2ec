//! Build a pointmap from rays, ray depth, a pose and a metric scale, then take
//! it apart again.

use fourdkit::geom::{compose_pointmap, decompose_pointmap, ray_depth_to_z_depth, rays_from_intrinsics};
use fourdkit::{Grid, Intrinsics, MetricScale, Pose, Quat, RayDepthMap, Vec3};

fn main() -> fourdkit::Result<()> {
    let k = Intrinsics::centered(6, 4, 5.0)?;
    let rays = rays_from_intrinsics(&k)?;
    let depth = RayDepthMap::new(
        Grid::from_fn(6, 4, |u, v| 2.0 + 0.1 * u as f64 + 0.05 * v as f64),
        Grid::from_fn(6, 4, |u, v| (u + v) % 5 != 0),
    )?;
    let pose = Pose::new(
        Quat::from_axis_angle(&Vec3::new(0.0, 1.0, 0.0), 0.2),
        Vec3::new(0.3, 0.0, -0.1),
    )?;
    let s = MetricScale::new(2.5)?;

    let g = compose_pointmap(s, &pose, &rays, &depth)?;
    println!("metric point at (2, 1): {:?}", g.get(2, 1).map(|p| [p.x, p.y, p.z]));
    println!("pixel (0, 0) is invalid: {:?}", g.get(0, 0));

    let (r2, d2) = decompose_pointmap(&g.scaled(1.0 / s.value()), &pose);
    let mut worst: f64 = 0.0;
    for i in 0..24 {
        if depth.valid.as_slice()[i] {
            worst = worst.max((depth.depth.as_slice()[i] - d2.depth.as_slice()[i]).abs());
            worst = worst.max((rays.dirs.as_slice()[i] - r2.dirs.as_slice()[i]).norm());
        }
    }
    println!("round-trip error: {worst:.1e}");

    let z = ray_depth_to_z_depth(&rays, &depth)?;
    println!("ray depth {:.4} has z-depth {:.4} at the corner (5, 3)", depth.depth.get(5, 3), z.get(5, 3));
    Ok(())
}
