mod common;

use common::{mask, quat, scene_config, vec_grid, vec_in};
use fourdkit::loss::{
    f_log, f_log_jacobian, f_log_scalar, loss_depth, loss_mask, loss_pointmap, loss_rays, loss_rotation, loss_scale,
    loss_sceneflow, loss_translation, scene_scale, total_loss, LossConfig, LossWeights,
};
use fourdkit::synth::{build_scene, build_sequence};
use fourdkit::{Grid, Quat, SequenceKind, Vec3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// naive log map written from its definition
fn flog_naive(x: &Vec3) -> Vec3 {
    let n = (x.x * x.x + x.y * x.y + x.z * x.z).sqrt();
    if n == 0.0 {
        return *x;
    }
    Vec3::new(x.x / n, x.y / n, x.z / n) * (1.0 + n).ln()
}

#[test]
fn rays_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..50 {
        let gt: Vec<_> = (0..3).map(|_| vec_grid(&mut rng, 4, 3, 0.5, 1.0)).collect();
        let pred: Vec<_> = (0..3).map(|_| vec_grid(&mut rng, 4, 3, 0.5, 1.0)).collect();
        let valid: Vec<_> = (0..3).map(|_| mask(&mut rng, 4, 3, 0.7)).collect();
        let mut expect = 0.0;
        for v in 0..3 {
            let (mut s, mut n) = (0.0, 0);
            for y in 0..3 {
                for x in 0..4 {
                    if *valid[v].get(x, y) {
                        s += (gt[v].get(x, y) - pred[v].get(x, y)).norm();
                        n += 1;
                    }
                }
            }
            expect += s / n as f64;
        }
        let got = loss_rays(&gt, &pred, &valid).unwrap().value;
        assert!((got - expect).abs() < 1e-12);
    }
}

#[test]
fn one_pixel_ray_offset() {
    let gt = vec![Grid::filled(1, 1, Vec3::new(0.0, 0.0, 1.0))];
    let pred = vec![Grid::filled(1, 1, Vec3::new(0.1, 0.0, 1.0))];
    let v = vec![Grid::filled(1, 1, true)];
    assert!((loss_rays(&gt, &pred, &v).unwrap().value - 0.1).abs() < 1e-15);
    assert_eq!(loss_rays(&gt, &gt, &v).unwrap().value, 0.0);
}

#[test]
fn rotation_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let q = quat(&mut rng);
    assert_eq!(loss_rotation(&[q], &[q]).unwrap().value, 0.0);
    assert_eq!(loss_rotation(&[q], &[q.neg()]).unwrap().value, 0.0);
    let z90 = Quat::from_axis_angle(&Vec3::new(0.0, 0.0, 1.0), std::f64::consts::FRAC_PI_2);
    // (1,0,0,0) − (cos45°, 0, 0, sin45°): squared norm 2 − √2
    let expect = (2.0 - 2.0_f64.sqrt()).sqrt();
    assert!((loss_rotation(&[Quat::IDENTITY], &[z90]).unwrap().value - expect).abs() < 1e-15);
}

#[test]
fn translation_naive_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..100 {
        let gt: Vec<Vec3> = (0..4).map(|_| vec_in(&mut rng, 0.0, 3.0)).collect();
        let pred: Vec<Vec3> = (0..4).map(|_| vec_in(&mut rng, 0.0, 3.0)).collect();
        let (z, zh) = (rng.random_range(0.5..4.0), rng.random_range(0.5..4.0));
        let expect: f64 = gt.iter().zip(&pred).map(|(a, b)| (a / z - b / zh).norm()).sum();
        assert!((loss_translation(&gt, &pred, z, zh).unwrap().value - expect).abs() < 1e-12);
    }
}

#[test]
fn depth_and_pointmap_loop_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..30 {
        let (z, zh) = (rng.random_range(0.5..4.0), rng.random_range(0.5..4.0));
        let gp: Vec<_> = (0..2).map(|_| vec_grid(&mut rng, 3, 3, 0.1, 6.0)).collect();
        let pp: Vec<_> = (0..2).map(|_| vec_grid(&mut rng, 3, 3, 0.1, 6.0)).collect();
        let valid: Vec<_> = (0..2).map(|_| mask(&mut rng, 3, 3, 0.6)).collect();
        let gd: Vec<_> = gp.iter().map(|g| g.map(|p| p.norm())).collect();
        let pd: Vec<_> = pp.iter().map(|g| g.map(|p| p.norm())).collect();
        let (mut e_pm, mut e_d) = (0.0, 0.0);
        for v in 0..2 {
            let (mut a, mut b, mut n) = (0.0, 0.0, 0.0);
            for i in 0..9 {
                if valid[v].as_slice()[i] {
                    a += (flog_naive(&(gp[v].as_slice()[i] / z)) - flog_naive(&(pp[v].as_slice()[i] / zh))).norm();
                    b += ((1.0 + gd[v].as_slice()[i] / z).ln() - (1.0 + pd[v].as_slice()[i] / zh).ln()).abs();
                    n += 1.0;
                }
            }
            e_pm += a / n;
            e_d += b / n;
        }
        assert!((loss_pointmap(&gp, &pp, &valid, z, zh).unwrap().value - e_pm).abs() < 1e-12);
        assert!((loss_depth(&gd, &pd, &valid, z, zh).unwrap().value - e_d).abs() < 1e-12);
    }
}

#[test]
fn sceneflow_dynamic_weighting() {
    // two valid pixels with the same residual e, one dynamic: (10e + e) / 2
    let gt = vec![Grid::from_vec(2, 1, vec![Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)]).unwrap()];
    let pred = vec![Grid::from_vec(2, 1, vec![Vec3::new(1.5, 0.0, 0.0), Vec3::new(0.0, 1.5, 0.0)]).unwrap()];
    let valid = vec![Grid::filled(2, 1, true)];
    let dynamic = vec![Grid::from_vec(2, 1, vec![true, false]).unwrap()];
    let e = 2.5_f64.ln() - 2.0_f64.ln();
    let got = loss_sceneflow(&gt, &pred, &valid, &dynamic, 1.0, 1.0, 10.0).unwrap().value;
    assert!((got - 11.0 * e / 2.0).abs() < 1e-15);
    let lo = loss_sceneflow(&gt, &pred, &valid, &dynamic, 1.0, 1.0, 2.0).unwrap().value;
    assert!(lo < got);
}

#[test]
fn mask_bce_oracle() {
    let conf = vec![Grid::from_vec(3, 1, vec![0.9, 0.2, 1.0]).unwrap()];
    let y = vec![Grid::from_vec(3, 1, vec![true, false, false]).unwrap()];
    let expect = -(0.9_f64.ln() + 0.8_f64.ln() + 1e-12_f64.ln()) / 3.0;
    assert!((loss_mask(&conf, &y).unwrap().value - expect).abs() < 1e-12);
    let perfect = vec![Grid::from_vec(3, 1, vec![1.0, 0.0, 0.0]).unwrap()];
    assert_eq!(loss_mask(&perfect, &y).unwrap().value, 0.0);
}

#[test]
fn scale_loss_stop_gradient() {
    let l = loss_scale(2.0, 3.0, 0.5);
    assert_eq!(l.grad.z_hat, 0.0);
    assert!((l.value - (3.0_f64.ln() - 2.5_f64.ln())).abs() < 1e-15);
    assert_eq!(loss_scale(2.0, 4.0, 0.5).value, 0.0);
}

proptest! {
    #[test]
    fn flog_matches_definition_and_is_odd(x in -50.0..50.0f64, y in -50.0..50.0f64, z in -50.0..50.0f64) {
        let v = Vec3::new(x, y, z);
        prop_assert!((f_log(&v) - flog_naive(&v)).norm() < 1e-12 * (1.0 + v.norm()));
        prop_assert_eq!(f_log(&-v), -f_log(&v));
        prop_assert!((f_log(&v).norm() - (1.0 + v.norm()).ln()).abs() < 1e-12);
        prop_assert!((f_log_scalar(x) - x.signum() * (1.0 + x.abs()).ln()).abs() < 1e-14);
    }

    #[test]
    fn flog_jacobian_matches_differences(x in -3.0..3.0f64, y in -3.0..3.0f64, z in -3.0..3.0f64) {
        let v = Vec3::new(x, y, z);
        prop_assume!(v.norm() > 1e-2);
        let j = f_log_jacobian(&v);
        let h = 1e-6;
        for c in 0..3 {
            let mut e = Vec3::zeros();
            e[c] = h;
            let col = (f_log(&(v + e)) - f_log(&(v - e))) / (2.0 * h);
            prop_assert!((j.column(c) - col).norm() < 1e-7);
        }
    }

    #[test]
    fn translation_depth_pointmap_flow_scale_invariant(seed in any::<u64>(), alpha in prop::sample::select(vec![0.1, 1.0, 10.0])) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 3;
        let gp: Vec<_> = (0..n).map(|_| vec_grid(&mut rng, 4, 3, 0.3, 6.0)).collect();
        let pp: Vec<_> = (0..n).map(|_| vec_grid(&mut rng, 4, 3, 0.3, 6.0)).collect();
        let valid: Vec<_> = (0..n).map(|_| mask(&mut rng, 4, 3, 0.8)).collect();
        let dynamic: Vec<_> = (0..n).map(|_| mask(&mut rng, 4, 3, 0.3)).collect();
        let z = scene_scale(gp.iter().zip(valid.iter())).unwrap();
        let zh = scene_scale(pp.iter().zip(valid.iter())).unwrap();
        let pp_a: Vec<_> = pp.iter().map(|g| g.map(|p| p * alpha)).collect();
        let zh_a = scene_scale(pp_a.iter().zip(valid.iter())).unwrap();
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(1e-300);

        let a = loss_pointmap(&gp, &pp, &valid, z, zh).unwrap().value;
        let b = loss_pointmap(&gp, &pp_a, &valid, z, zh_a).unwrap().value;
        prop_assert!(rel(a, b) < 1e-9);

        let a = loss_sceneflow(&gp, &pp, &valid, &dynamic, z, zh, 10.0).unwrap().value;
        let b = loss_sceneflow(&gp, &pp_a, &valid, &dynamic, z, zh_a, 10.0).unwrap().value;
        prop_assert!(rel(a, b) < 1e-9);

        let gd: Vec<_> = gp.iter().map(|g| g.map(|p| p.norm())).collect();
        let pd: Vec<_> = pp.iter().map(|g| g.map(|p| p.norm())).collect();
        let pd_a: Vec<_> = pd.iter().map(|g| g.map(|d| d * alpha)).collect();
        let a = loss_depth(&gd, &pd, &valid, z, zh).unwrap().value;
        let b = loss_depth(&gd, &pd_a, &valid, z, zh_a).unwrap().value;
        prop_assert!(rel(a, b) < 1e-9);

        let gt_t: Vec<Vec3> = gp.iter().map(|g| g.as_slice()[0]).collect();
        let pt: Vec<Vec3> = pp.iter().map(|g| g.as_slice()[1]).collect();
        let pt_a: Vec<Vec3> = pt.iter().map(|t| t * alpha).collect();
        let a = loss_translation(&gt_t, &pt, z, zh).unwrap().value;
        let b = loss_translation(&gt_t, &pt_a, z, zh_a).unwrap().value;
        prop_assert!(rel(a, b) < 1e-9);
    }
}

#[test]
fn perfect_prediction_has_zero_total_loss() {
    let gt = build_sequence(&build_scene(&scene_config(4)).unwrap()).unwrap();
    let mut pred = gt.clone();
    pred.kind = SequenceKind::Prediction;
    for v in &mut pred.views {
        v.confidence = Some(v.ray_depth.valid.map(|&b| if b { 1.0 } else { 0.0 }));
    }
    let cfg = LossConfig {
        weights: LossWeights::parse("pm=1,scale=1").unwrap(),
        ..LossConfig::default()
    };
    let r = total_loss(&pred, &gt, &cfg).unwrap();
    assert_eq!(r.total, 0.0, "{r:?}");
    assert_eq!(r.z, r.z_hat);
}

#[test]
fn rescaled_prediction_keeps_normalized_terms() {
    let gt = build_sequence(&build_scene(&scene_config(5)).unwrap()).unwrap();
    let mut noisy = gt.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for v in &mut noisy.views[1..] {
        if let Some(f) = &mut v.scene_flow {
            for x in f.flow.as_mut_slice() {
                *x += vec_in(&mut rng, 0.0, 0.05);
            }
        }
    }
    let base = total_loss(&noisy, &gt, &LossConfig::default()).unwrap();
    // only the stored-unit scale changes: normalized terms are untouched
    let r = total_loss(&noisy.rescaled(3.0).unwrap(), &gt, &LossConfig::default()).unwrap();
    assert_eq!(base.scene_flow, r.scene_flow);
    assert!(base.scene_flow > 0.0);
}

#[test]
fn weight_spec_parsing() {
    let w = LossWeights::parse("pm=0.5, sf=2,rot=0").unwrap();
    assert_eq!((w.pointmap, w.scene_flow, w.rotation, w.rays), (0.5, 2.0, 0.0, 1.0));
    assert!(LossWeights::parse("bogus=1").is_err());
    assert!(LossWeights::parse("rays=-1").is_err());
    assert!(LossWeights::parse("rays").is_err());
}
