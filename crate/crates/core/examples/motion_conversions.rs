//! Express the motion of a synthetic scene as allocentric flow, egocentric
//! flow, tracked points and backprojected optical flow.

use fourdkit::convert::{allocentric_flows, convert_motion};
use fourdkit::motion::backproject_2d_flow;
use fourdkit::synth::{build_scene, build_sequence, CameraMotion, SceneConfig};
use fourdkit::MotionRepr;

fn main() -> fourdkit::Result<()> {
    let cfg = SceneConfig {
        seed: 3,
        frames: 3,
        width: 48,
        height: 36,
        focal: 40.0,
        camera: CameraMotion::Linear {
            velocity: [0.05, 0.0, 0.02],
            yaw_rate: 0.01,
        },
        ..SceneConfig::default()
    };
    let gt = build_sequence(&build_scene(&cfg)?)?;
    let allo = allocentric_flows(&gt)?;

    for repr in [MotionRepr::Ego, MotionRepr::Points] {
        let back = convert_motion(&convert_motion(&gt, repr)?, MotionRepr::Allo)?;
        let mut worst: f64 = 0.0;
        for (v, reference) in back.views.iter().zip(&allo) {
            let (a, b) = (v.scene_flow.as_ref().unwrap(), reference.as_ref().unwrap());
            for ((x, y), ok) in a.flow.iter().zip(b.flow.iter()).zip(a.valid.iter()) {
                if *ok {
                    worst = worst.max((x - y).norm());
                }
            }
        }
        println!("allo -> {repr} -> allo: max difference {worst:.1e}");
    }

    // 2D flow only recovers motion where the point stays visible
    let t = 2;
    let of = gt.views[t].optical_flow.as_ref().unwrap();
    let f = backproject_2d_flow(of, &gt.pointmap(0), &gt.pointmap(t))?;
    let reference = allo[t].as_ref().unwrap();
    let (mut n, mut err) = (0usize, 0.0);
    for ((x, y), ok) in f.flow.iter().zip(reference.flow.iter()).zip(f.valid.iter()) {
        if *ok {
            n += 1;
            err += (x - y).norm() * gt.scale.value();
        }
    }
    println!(
        "backprojected 2D flow: {n} of {} view-0 pixels covisible, mean error {:.4} m",
        reference.valid.count(),
        err / n.max(1) as f64
    );
    Ok(())
}
