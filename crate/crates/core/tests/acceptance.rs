//! One line per acceptance criterion; exits nonzero if any fails.

mod common;

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use common::{quat, scene_config, vec_in};
use fourdkit::bundle::{read_bundle, write_bundle};
use fourdkit::geom::{compose_pointmap, decompose_pointmap};
use fourdkit::gradcheck::{grad_check_loss, LossId, DEFAULT_STEP, DEFAULT_TOL};
use fourdkit::loss::{total_loss, LossConfig, LossWeights};
use fourdkit::metrics::{apd, depth_metrics, epe, evaluate_sequence, tau_inlier, EvalConfig, DEFAULT_APD_THRESHOLDS};
use fourdkit::motion::{backproject_2d_flow, ego_to_allo, points_to_flow, simulate_doppler};
use fourdkit::synth::{
    build_scene, build_sequence, export_bundle, gt_ego_flow, gt_optical_flow, gt_scene_flow, render_view,
    CameraMotion, ObjectConfig, Range, RigidBody, Scene, SceneConfig, Shape,
};
use fourdkit::{
    Grid, Intrinsics, MetricScale, OpticalFlowField, Pointmap, Pose, RayDepthMap, RayMap, SceneFlowField,
    SceneSequence, SequenceKind, Vec2, Vec3,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, ok: String, fail: String) -> Outcome {
    if cond {
        Ok(ok)
    } else {
        Err(fail)
    }
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

fn ac1_composition_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let start = Instant::now();
    let (w, h) = (8, 6);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let s = MetricScale::new(rng.random_range(0.1..10.0)).unwrap();
        let pose = Pose::new(quat(&mut rng), vec_in(&mut rng, 0.0, 5.0)).unwrap();
        let dirs = Grid::from_fn(w, h, |_, _| {
            let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.2..1.0));
            v.normalize()
        });
        let depth = RayDepthMap::new(Grid::from_fn(w, h, |_, _| rng.random_range(0.1..50.0)), Grid::filled(w, h, true))
            .unwrap();
        let rays = RayMap { dirs };
        let g = compose_pointmap(s, &pose, &rays, &depth).unwrap();
        let (r2, d2) = decompose_pointmap(&g.scaled(1.0 / s.value()), &pose);
        let g2 = compose_pointmap(s, &pose, &r2, &d2).unwrap();
        for i in 0..w * h {
            let (a, b) = (rays.dirs.as_slice()[i], r2.dirs.as_slice()[i]);
            worst = worst.max((a - b).abs().max());
            worst = worst.max((depth.depth.as_slice()[i] - d2.depth.as_slice()[i]).abs() / depth.depth.as_slice()[i]);
            let (p, q) = (g.pts.as_slice()[i], g2.pts.as_slice()[i]);
            worst = worst.max((p - q).abs().max() / p.norm().max(1.0));
        }
        if d2.valid != depth.valid {
            return Err("validity changed in round trip".into());
        }
    }
    let t = start.elapsed();
    let msg = format!("max error {worst:.2e} over 1000 samples in {}", secs(t));
    check(worst < 1e-9 && t < Duration::from_secs(5), msg.clone(), msg)
}

fn ac2_gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut lines = Vec::new();
    let mut ok = true;
    for id in LossId::ALL {
        let r = grad_check_loss(id, 2024, 100, DEFAULT_STEP, DEFAULT_TOL);
        ok &= r.pass && r.samples >= 100 && r.step == 1e-6 && r.tol == 1e-5;
        if id == LossId::Scale {
            ok &= r.stop_gradient_zero == Some(true);
        }
        lines.push(format!("{}={:.1e}", r.loss, r.max_rel_error));
    }
    let t = start.elapsed();
    ok &= t < Duration::from_secs(30);
    let msg = format!("{} in {}; scale d/dz_hat exactly 0", lines.join(" "), secs(t));
    check(ok, msg.clone(), msg)
}

/// Multiplies every stored length of a prediction by `alpha`.
fn stretch(seq: &SceneSequence, alpha: f64) -> SceneSequence {
    let mut out = seq.clone();
    for v in &mut out.views {
        v.ray_depth.depth = v.ray_depth.depth.map(|d| d * alpha);
        v.pose = Pose::new(v.pose.rotation(), v.pose.translation() * alpha).unwrap();
        if let Some(f) = &mut v.scene_flow {
            f.flow = f.flow.map(|x| x * alpha);
        }
    }
    out
}

fn noisy_prediction(gt: &SceneSequence, rng: &mut ChaCha8Rng) -> SceneSequence {
    let mut p = gt.clone();
    p.kind = SequenceKind::Prediction;
    for (i, v) in p.views.iter_mut().enumerate() {
        v.ray_depth.depth = v.ray_depth.depth.map(|d| d * rng.random_range(0.8..1.25));
        if i > 0 {
            v.pose = Pose::new(v.pose.rotation(), v.pose.translation() + vec_in(rng, 0.0, 0.1)).unwrap();
        }
        if let Some(f) = &mut v.scene_flow {
            f.flow = f.flow.map(|x| x + vec_in(rng, 0.0, 0.05));
        }
    }
    p
}

fn small(seed: u64) -> SceneConfig {
    SceneConfig {
        width: 20,
        height: 15,
        focal: 18.0,
        ..scene_config(seed)
    }
}

fn ac3_scale_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let cfg = LossConfig::default();
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let gt = build_sequence(&build_scene(&small(seed)).unwrap()).unwrap();
        let pred = noisy_prediction(&gt, &mut rng);
        let base = total_loss(&pred, &gt, &cfg).map_err(|e| e.to_string())?;
        for alpha in [0.1, 1.0, 10.0] {
            let r = total_loss(&stretch(&pred, alpha), &gt, &cfg).map_err(|e| e.to_string())?;
            for (a, b) in [
                (base.translation, r.translation),
                (base.depth, r.depth),
                (base.pointmap, r.pointmap),
                (base.scene_flow, r.scene_flow),
            ] {
                if a == 0.0 {
                    return Err(format!("scene {seed}: degenerate zero loss"));
                }
                worst = worst.max((a - b).abs() / a.abs());
            }
        }
    }
    let msg = format!("max relative change {worst:.2e} over 100 scenes x 3 scales");
    check(worst < 1e-9, msg.clone(), msg)
}

fn integer_flow_exact(rng: &mut ChaCha8Rng) -> bool {
    let (w, h) = (8, 6);
    let dyadic = |rng: &mut ChaCha8Rng| rng.random_range(-64..64) as f64 / 16.0;
    let g0 = Pointmap::new(
        Grid::from_fn(w, h, |_, _| Vec3::new(dyadic(rng), dyadic(rng), 4.0 + dyadic(rng).abs())),
        Grid::filled(w, h, true),
    )
    .unwrap();
    let nan = Vec3::new(f64::NAN, f64::NAN, f64::NAN);
    let (mut gt_pts, mut gt_valid) = (Grid::filled(w, h, nan), Grid::filled(w, h, false));
    let (mut uv, mut of_valid) = (Grid::filled(w, h, Vec2::zeros()), Grid::filled(w, h, false));
    let mut truth = Grid::filled(w, h, Vec3::zeros());
    let (dx, dy) = (rng.random_range(-2..=2i64), rng.random_range(-2..=2i64));
    for v in 0..h {
        for u in 0..w {
            let (tu, tv) = (u as i64 + dx, v as i64 + dy);
            if tu < 0 || tv < 0 || tu >= w as i64 || tv >= h as i64 {
                continue;
            }
            let f = Vec3::new(dyadic(rng), dyadic(rng), dyadic(rng));
            *gt_pts.get_mut(tu as usize, tv as usize) = g0.get(u, v).unwrap() + f;
            *gt_valid.get_mut(tu as usize, tv as usize) = true;
            *uv.get_mut(u, v) = Vec2::new(dx as f64, dy as f64);
            *of_valid.get_mut(u, v) = true;
            *truth.get_mut(u, v) = f;
        }
    }
    let of = OpticalFlowField::new(uv, of_valid.clone()).unwrap();
    let f = backproject_2d_flow(&of, &g0, &Pointmap::new(gt_pts, gt_valid).unwrap()).unwrap();
    f.valid == of_valid && (0..w * h).all(|i| !of_valid.as_slice()[i] || f.flow.as_slice()[i] == truth.as_slice()[i])
}

/// A fronto-parallel wall sliding sideways by half a pixel per frame in front
/// of a static camera; returns the worst covisible backprojection error (m).
fn half_pixel_wall(depth: f64) -> f64 {
    let k = Intrinsics::centered(24, 16, 20.0).unwrap();
    let step = Vec3::new(0.5 * depth / k.fx, 0.0, 0.0);
    let body = RigidBody {
        shape: Shape::PlanePatch {
            half_x: 100.0,
            half_y: 100.0,
        },
        trajectory: (0..2).map(|t| Pose::from_translation(Vec3::new(0.0, 0.0, depth) + step * t as f64)).collect(),
    };
    let scene = Scene::from_parts(k, vec![Pose::identity(); 2], vec![body]).unwrap();
    let seq = build_sequence(&scene).unwrap();
    let of = gt_optical_flow(&scene, 1);
    let f = backproject_2d_flow(&of, &seq.metric_pointmap(0), &seq.metric_pointmap(1)).unwrap();
    let truth = gt_scene_flow(&scene, 1);
    let mut worst: f64 = 0.0;
    let mut n = 0;
    for i in 0..f.valid.as_slice().len() {
        if f.valid.as_slice()[i] {
            worst = worst.max((f.flow.as_slice()[i] - truth.flow.as_slice()[i]).norm());
            n += 1;
        }
    }
    if n < 300 {
        return f64::INFINITY;
    }
    worst
}

fn ac4_representation_equivalence() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    for seed in 0..50 {
        let scene = build_scene(&small(seed)).unwrap();
        let (d0, ids) = render_view(&scene, 0);
        let rays = fourdkit::geom::rays_from_intrinsics(&scene.intrinsics).unwrap();
        let g0 = Pointmap::new(rays.dirs.zip_map(&d0.depth, |r, d| r * *d).unwrap(), d0.valid.clone()).unwrap();
        for t in 0..scene.frames() {
            let allo = gt_scene_flow(&scene, t);
            let from_ego = ego_to_allo(&gt_ego_flow(&scene, t), &g0, &scene.cameras[t]).unwrap();
            // tracked points carried rigidly by each body, independent of the flow code
            let tracked = Pointmap::new(
                g0.pts
                    .zip_map(&ids, |x, id| id.map_or(*x, |k| scene.bodies[k].carry(t, x)))
                    .unwrap(),
                g0.valid.clone(),
            )
            .unwrap();
            let from_points = points_to_flow(&g0, &tracked).unwrap();
            if from_ego.valid != allo.valid || from_points.valid != allo.valid {
                return Err(format!("scene {seed} frame {t}: validity differs"));
            }
            for i in 0..allo.valid.as_slice().len() {
                if allo.valid.as_slice()[i] {
                    let a = allo.flow.as_slice()[i];
                    worst = worst.max((a - from_ego.flow.as_slice()[i]).norm());
                    worst = worst.max((a - from_points.flow.as_slice()[i]).norm());
                    checked += 1;
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let exact = (0..50).all(|_| integer_flow_exact(&mut rng));
    let half = [1.5, 3.0, 7.0].map(half_pixel_wall).into_iter().fold(0.0, f64::max);
    let msg = format!(
        "allo/ego/points max diff {worst:.2e} over {checked} flows in 50 scenes; integer flow exact: {exact}; half-pixel wall {half:.2e} m"
    );
    check(worst <= 1e-9 && exact && half <= 1e-6, msg.clone(), msg)
}

fn ac5_doppler() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let (w, h) = (500, 200);
    let all = Grid::filled(w, h, true);
    let p = Grid::from_fn(w, h, |_, _| vec_in(&mut rng, 0.1, 50.0));
    let v = Grid::from_fn(w, h, |_, _| vec_in(&mut rng, 0.0, 5.0));
    let pm = Pointmap::new(p.clone(), all.clone()).unwrap();
    let d = simulate_doppler(&pm, &SceneFlowField::new(v.clone(), all.clone()).unwrap()).unwrap();
    let (mut formula, mut bound): (f64, f64) = (0.0, f64::INFINITY);
    for i in 0..w * h {
        let (pi, vi) = (p.as_slice()[i], v.as_slice()[i]);
        let oracle = (pi.x * vi.x + pi.y * vi.y + pi.z * vi.z) / (pi.x * pi.x + pi.y * pi.y + pi.z * pi.z).sqrt();
        let got = d.vr.as_slice()[i];
        formula = formula.max((got - oracle).abs());
        bound = bound.min(vi.norm() - got.abs());
    }
    let speeds = Grid::from_fn(w, h, |_, _| rng.random_range(-5.0..5.0));
    let col = SceneFlowField::new(p.zip_map(&speeds, |x, s| x.normalize() * *s).unwrap(), all).unwrap();
    let dc = simulate_doppler(&pm, &col).unwrap();
    let collinear = dc.vr.as_slice().iter().zip(speeds.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let msg = format!(
        "1e5 pairs: formula diff {formula:.2e}, min(|v| - |v_r|) {bound:.2e}, collinear diff {collinear:.2e}"
    );
    check(formula <= 1e-12 && bound >= -1e-12 && collinear <= 1e-12, msg.clone(), msg)
}

fn ac6_metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut worst: f64 = 0.0;
    for _ in 0..500 {
        let (w, h) = (rng.random_range(1..=8), rng.random_range(1..=8));
        let g = common::vec_grid(&mut rng, w, h, 0.0, 3.0);
        let p = g.map(|x| x + vec_in(&mut rng, 0.0, 1.2));
        let m = common::mask(&mut rng, w, h, 0.7);
        let gz: Grid<f64> = Grid::from_fn(w, h, |_, _| rng.random_range(0.5..10.0));
        let pz: Grid<f64> = gz.map(|z| z * rng.random_range(0.7..1.5));
        let (mut sum, mut n, mut rel, mut dl) = (0.0, 0.0, 0.0, 0.0);
        let mut inl = [0.0; 4];
        for v in 0..h {
            for u in 0..w {
                if !*m.get(u, v) {
                    continue;
                }
                let d = p.get(u, v) - g.get(u, v);
                let e = (d.x * d.x + d.y * d.y + d.z * d.z).sqrt();
                sum += e;
                n += 1.0;
                for (k, th) in [0.1, 0.3, 0.5, 1.0].iter().enumerate() {
                    if e < *th {
                        inl[k] += 1.0;
                    }
                }
                let (a, b) = (*pz.get(u, v), *gz.get(u, v));
                rel += (a - b).abs() / b;
                if (a / b).max(b / a) < 1.25 {
                    dl += 1.0;
                }
            }
        }
        let apd_o = 100.0 * inl.iter().sum::<f64>() / (4.0 * n);
        let dm = depth_metrics(std::slice::from_ref(&pz), std::slice::from_ref(&gz), std::slice::from_ref(&m), false).unwrap();
        for (got, want) in [
            (epe(&p, &g, &m).unwrap(), sum / n),
            (apd(&p, &g, &m, &DEFAULT_APD_THRESHOLDS).unwrap(), apd_o),
            (tau_inlier(&p, &g, &m, 0.1).unwrap(), 100.0 * inl[0] / n),
            (dm.abs_rel, rel / n),
            (dm.delta_125, 100.0 * dl / n),
        ] {
            worst = worst.max((got - want).abs());
        }
    }
    let thresholds = DEFAULT_APD_THRESHOLDS == [0.1, 0.3, 0.5, 1.0]
        && EvalConfig::default().apd_thresholds == vec![0.1, 0.3, 0.5, 1.0];
    let msg = format!("max diff {worst:.2e} over 500 grids; thresholds {DEFAULT_APD_THRESHOLDS:?}");
    check(worst <= 1e-12 && thresholds, msg.clone(), msg)
}

fn ac7_perfect_prediction() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    export_bundle(&scene_config(7), dir.path()).map_err(|e| e.to_string())?;
    let gt = read_bundle(dir.path()).map_err(|e| e.to_string())?;
    let r = evaluate_sequence("gt", &gt, &gt, &EvalConfig::default()).map_err(|e| e.to_string())?;
    let mut pred = gt.clone();
    pred.kind = SequenceKind::Prediction;
    for v in &mut pred.views {
        v.confidence = Some(v.ray_depth.valid.map(|&b| if b { 1.0 } else { 0.0 }));
    }
    let cfg = LossConfig {
        weights: LossWeights::parse("pm=1,scale=1").unwrap(),
        ..LossConfig::default()
    };
    let l = total_loss(&pred, &gt, &cfg).map_err(|e| e.to_string())?;
    let near = |x: Option<f64>, want: f64| x.is_some_and(|x| (x - want).abs() <= 1e-9);
    let ok = near(r.epe_points, 0.0)
        && near(r.apd, 100.0)
        && near(r.epe_flow, 0.0)
        && near(r.tau, 100.0)
        && near(Some(r.abs_rel), 0.0)
        && near(Some(r.delta_125), 100.0)
        && l.total.abs() <= 1e-9;
    let msg = format!(
        "EPE {:?} APD {:?} tau {:?} abs_rel {} delta {} total_loss {}",
        r.epe_points, r.apd, r.tau, r.abs_rel, r.delta_125, l.total
    );
    check(ok, msg.clone(), msg)
}

fn ac8_noise_response() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let (w, h) = (128, 96);
    let g = common::vec_grid(&mut rng, w, h, 1.0, 20.0);
    let m = Grid::filled(w, h, true);
    let mut rows = Vec::new();
    let mut last = (f64::NEG_INFINITY, f64::INFINITY);
    let mut monotone = true;
    let mut within = false;
    for sigma in [0.01, 0.05, 0.1, 0.5] {
        let normal = Normal::new(0.0, sigma).unwrap();
        let p = g.map(|x| x + Vec3::new(normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng)));
        let e = epe(&p, &g, &m).unwrap();
        let a = apd(&p, &g, &m, &DEFAULT_APD_THRESHOLDS).unwrap();
        monotone &= e > last.0 && a < last.1;
        last = (e, a);
        let expect = sigma * (8.0 / std::f64::consts::PI).sqrt();
        if sigma == 0.05 {
            within = ((e - expect) / expect).abs() < 0.05;
        }
        rows.push(format!("s={sigma}: EPE {e:.4} (expect {expect:.4}) APD {a:.2}"));
    }
    let msg = format!("{} points; {}", w * h, rows.join(", "));
    check(within && monotone, msg.clone(), msg)
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_fourdkit")
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

fn ac9_format_determinism() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let cfg = SceneConfig {
        frames: 6,
        ..scene_config(9)
    };
    let seq = build_sequence(&build_scene(&cfg).unwrap()).unwrap();
    let a = root.path().join("a");
    write_bundle(&seq, &a).map_err(|e| e.to_string())?;
    let back = read_bundle(&a).map_err(|e| e.to_string())?;
    let mut masks = true;
    let mut worst: f64 = 0.0;
    let rel = |x: f64, y: f64| (x - y).abs() / x.abs().max(1e-30);
    for (u, v) in seq.views.iter().zip(&back.views) {
        masks &= u.ray_depth.valid == v.ray_depth.valid
            && u.motion_mask == v.motion_mask
            && u.scene_flow.as_ref().map(|f| &f.valid) == v.scene_flow.as_ref().map(|f| &f.valid)
            && u.doppler.as_ref().map(|f| &f.valid) == v.doppler.as_ref().map(|f| &f.valid)
            && u.optical_flow.as_ref().map(|f| &f.valid) == v.optical_flow.as_ref().map(|f| &f.valid);
        for (i, &ok) in u.ray_depth.valid.as_slice().iter().enumerate() {
            if ok {
                worst = worst.max(rel(u.ray_depth.depth.as_slice()[i], v.ray_depth.depth.as_slice()[i]));
                let (f, g) = (u.scene_flow.as_ref().unwrap(), v.scene_flow.as_ref().unwrap());
                for c in 0..3 {
                    let (x, y) = (f.flow.as_slice()[i][c], g.flow.as_slice()[i][c]);
                    if x != 0.0 {
                        worst = worst.max(rel(x, y));
                    }
                }
            }
        }
    }

    let b = root.path().join("b");
    export_bundle(&cfg, &root.path().join("e1")).unwrap();
    export_bundle(&cfg, &b).unwrap();
    let exports_same = files(&root.path().join("e1")) == files(&b);

    let pred = root.path().join("pred");
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    write_bundle(&noisy_prediction(&seq, &mut rng), &pred).unwrap();
    let report = |tag: &str| {
        let out = root.path().join(format!("{tag}.json"));
        let st = Command::new(bin())
            .args(["--threads", "1", "--no-timestamp", "eval"])
            .arg(&pred)
            .arg(&a)
            .arg("--out")
            .arg(&out)
            .env_remove("FOURDKIT_THREADS")
            .status()
            .unwrap();
        st.success().then(|| fs::read(out).unwrap())
    };
    let (r1, r2) = (report("r1"), report("r2"));
    let reports_same = r1.is_some() && r1 == r2;
    let msg = format!(
        "masks exact: {masks}; max float rel diff {worst:.2e}; exports identical: {exports_same}; reports identical: {reports_same}"
    );
    check(masks && worst <= 1e-6 && exports_same && reports_same, msg.clone(), msg)
}

fn ac10_throughput() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let cfg = SceneConfig {
        seed: 10,
        frames: 64,
        width: 196,
        height: 140,
        focal: 160.0,
        camera: CameraMotion::Orbit {
            pivot_depth: 5.0,
            step: 0.005,
        },
        objects: ObjectConfig {
            count: 5,
            speed: Range(0.01, 0.03),
            ..ObjectConfig::default()
        },
        ..SceneConfig::default()
    };
    let gt = root.path().join("gt");
    let pred = root.path().join("pred");
    let seq = build_sequence(&build_scene(&cfg).unwrap()).unwrap();
    write_bundle(&seq, &gt).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    write_bundle(&noisy_prediction(&seq, &mut rng), &pred).unwrap();
    let start = Instant::now();
    let st = Command::new(bin())
        .args(["--threads", "1", "--no-timestamp", "eval"])
        .arg(&pred)
        .arg(&gt)
        .arg("--out")
        .arg(root.path().join("r.json"))
        .env_remove("FOURDKIT_THREADS")
        .status()
        .unwrap();
    let t = start.elapsed();
    let msg = format!("64 frames at 196x140, one thread: {} (exit {:?})", secs(t), st.code());
    check(st.success() && t < Duration::from_secs(5), msg.clone(), msg)
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("AC1 composition round trip", ac1_composition_round_trip),
        ("AC2 gradient suite", ac2_gradient_suite),
        ("AC3 scale invariance", ac3_scale_invariance),
        ("AC4 representation equivalence", ac4_representation_equivalence),
        ("AC5 doppler correctness", ac5_doppler),
        ("AC6 metric oracle equivalence", ac6_metric_oracles),
        ("AC7 perfect-prediction fixed point", ac7_perfect_prediction),
        ("AC8 noise response", ac8_noise_response),
        ("AC9 format and determinism", ac9_format_determinism),
        ("AC10 eval throughput", ac10_throughput),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        match f() {
            Ok(msg) => println!("PASS {name}: {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL {name}: {msg}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
