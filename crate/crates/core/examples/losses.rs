//! Training losses between a noisy prediction and ground truth, then a
//! finite-difference check of every analytic gradient.

use fourdkit::gradcheck::{grad_check_loss, LossId, DEFAULT_STEP, DEFAULT_TOL};
use fourdkit::loss::{f_log, total_loss, LossConfig};
use fourdkit::synth::{build_scene, build_sequence, SceneConfig};
use fourdkit::{SequenceKind, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> fourdkit::Result<()> {
    println!("f_log([3, 0, 4]) = {:?}", f_log(&Vec3::new(3.0, 0.0, 4.0)));

    let gt = build_sequence(&build_scene(&SceneConfig::default())?)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut pred = gt.clone();
    pred.kind = SequenceKind::Prediction;
    for v in &mut pred.views {
        v.ray_depth.depth = v.ray_depth.depth.map(|d| d * rng.random_range(0.95..1.05));
    }
    let report = total_loss(&pred, &gt, &LossConfig::default())?;
    println!(
        "rays {:.3e}  depth {:.3e}  pointmap {:.3e}  scene flow {:.3e}  scale {:.3e}  total {:.3e}",
        report.rays, report.depth, report.pointmap, report.scene_flow, report.scale, report.total
    );

    for id in LossId::ALL {
        let r = grad_check_loss(id, 0, 20, DEFAULT_STEP, DEFAULT_TOL);
        let sg = r.stop_gradient_zero.map_or(String::new(), |z| format!("  stop-gradient zero: {z}"));
        println!("{:<12} max rel err {:.2e}  pass {}{sg}", r.loss, r.max_rel_error, r.pass);
    }
    Ok(())
}
