//! End-to-end oracle experiment: sparse-view reconstruction quality,
//! pose-recovery error, skinning assignment agreement, and interpolation
//! smoothness, with timings. Used to pick fixture constants.

use std::time::Instant;

use skelsplat::autodiff::Tape;
use skelsplat::dataset::Observation;
use skelsplat::losses::psnr;
use skelsplat::oracle::{generate_scene, OracleSpec, ViewpointPolicy};
use skelsplat::render::RasterConfig;
use skelsplat::scene::{fit_canonical, FitConfig, GaussianCloud};
use skelsplat::train::{train_deformation, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let arg = |i: usize, default: f64| -> f64 {
        args.get(i).and_then(|s| s.parse().ok()).unwrap_or(default)
    };
    let points_per_part = arg(1, 450.0) as usize;
    let amplitude_deg = arg(2, 30.0);
    let fit_iters = arg(3, 1500.0) as usize;
    let train_steps = arg(4, 4000.0) as usize;
    let res = arg(5, 128.0) as usize;
    let skinning_warmup = arg(6, 0.15);
    let lr_radii = arg(7, 1e-3);
    let lr_phi = arg(8, 1e-4);
    let coarse_blur = arg(9, 6.0);

    let spec = OracleSpec {
        bone_count: 2,
        points_per_part,
        motion_amplitude: amplitude_deg.to_radians(),
        seed: 42,
        bulge_amplitude: 0.0,
    };
    let scene = generate_scene(&spec).unwrap();
    let raster = RasterConfig::default();
    let bg = [0.0; 3];
    let times: Vec<f64> = (0..11).map(|k| k as f64 / 10.0).collect();
    let observations = scene
        .render_observations(&times, ViewpointPolicy::Orbit, res, 8, bg, &raster)
        .unwrap();
    println!(
        "scene: {} gaussians, {} train obs + {} bundle views at {res}x{res}",
        scene.canonical_points().len(),
        observations.training().len(),
        observations.bundle().len()
    );

    // canonical fit
    let t0 = Instant::now();
    let cloud = GaussianCloud::init_from_points(
        &scene.canonical_points(),
        &scene.canonical_colors(),
        1,
    )
    .unwrap();
    let views: Vec<_> = observations
        .bundle()
        .iter()
        .map(|o| (o.camera.clone(), o.image.clone()))
        .collect();
    let fit_cfg = FitConfig {
        iterations: fit_iters,
        background: bg,
        ..Default::default()
    };
    let hist = fit_canonical(&cloud, &views, &fit_cfg).unwrap();
    println!(
        "canonical fit: {fit_iters} iters in {:.1}s, loss {:.5} -> {:.5}",
        t0.elapsed().as_secs_f64(),
        hist.losses.first().unwrap(),
        hist.losses.last().unwrap()
    );
    // canonical quality at t=0 on a held-out orbit view
    let held0 = scene.orbit_camera(2.9, 0.25, res).unwrap();
    let gt0 = scene.render_ground_truth(&held0, 0.0, bg, &raster);
    let tape = Tape::eval();
    let tensors = cloud.as_constants(&tape);
    let r0 =
        skelsplat::scene::render_cloud_on_tape(&tape, &tensors, 1, &held0, bg, &raster).value();
    println!(
        "canonical held-out psnr: {:.2} dB",
        psnr(&r0.view(), &gt0.view().into_dyn()).unwrap()
    );

    // deformation training
    let t0 = Instant::now();
    let cfg = TrainConfig {
        steps: train_steps,
        seed: 7,
        checkpoint_interval: 0,
        skinning_warmup_fraction: skinning_warmup,
        lr_radii,
        lr_phi,
        coarse_blur_px2: coarse_blur,
        ..Default::default()
    };
    let (model, history) = train_deformation(
        &cloud,
        scene.skeleton.clone(),
        &observations,
        &cfg,
        None,
        None,
    )
    .unwrap();
    let avg = |lo: usize, hi: usize| -> f64 {
        let r = &history.records[lo.min(history.records.len() - 1)..hi.min(history.records.len())];
        r.iter().map(|x| x.perceptual).sum::<f64>() / r.len() as f64
    };
    println!(
        "training: {} steps in {:.1}s; perceptual avg steps0-50 {:.5} -> last-50 {:.5} (ratio {:.1}x)",
        history.records.len(),
        t0.elapsed().as_secs_f64(),
        avg(0, 50),
        avg(train_steps - 50, train_steps),
        avg(0, 50) / avg(train_steps - 50, train_steps)
    );

    // held-out novel views at training timesteps
    let mut worst = f64::INFINITY;
    let mut mean = 0.0;
    for (k, &t) in times.iter().enumerate() {
        let az = std::f64::consts::TAU * (k as f64 + 0.5) / times.len() as f64 + 1.1;
        let cam = scene.orbit_camera(az, 0.25, res).unwrap();
        let gt = scene.render_ground_truth(&cam, t, bg, &raster);
        let obs = Observation {
            time: t,
            camera: cam,
            image: gt,
            canonical_bundle: false,
        };
        let table = skelsplat::train::evaluate(&model, &[&obs], &raster, bg).unwrap();
        let p = table.rows[0].psnr;
        worst = worst.min(p);
        mean += p / times.len() as f64;
        print!("{p:.1} ");
    }
    println!("\nheld-out psnr: mean {mean:.2}, worst {worst:.2}");

    // joint-angle recovery at training timesteps
    let mut per_joint = vec![0.0f64; scene.skeleton.joint_count()];
    for &t in &times {
        let predicted = model.pose.predict_sample(t).unwrap();
        let gt = scene.ground_truth_pose(t);
        for j in 0..scene.skeleton.joint_count() {
            let err = predicted.local_rotations[j]
                .angle_to(&gt.local_rotations[j])
                .to_degrees();
            per_joint[j] = per_joint[j].max(err);
        }
    }
    let worst_angle = per_joint.iter().copied().fold(0.0, f64::max);
    println!(
        "worst joint-angle error at training times: {worst_angle:.2} deg (per joint: {:?})",
        per_joint.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>()
    );
    // decompose the worst joint's error into twist about its bone axis vs swing
    {
        use skelsplat::geometry::Quat;
        let jworst = per_joint
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        if let Some(parent) = scene.skeleton.parent(jworst) {
            let axis = (scene.skeleton.rest_position(jworst)
                - scene.skeleton.rest_position(parent))
            .normalize();
            let mut max_twist = 0.0f64;
            let mut max_swing = 0.0f64;
            for &t in &times {
                let p = model.pose.predict_sample(t).unwrap().local_rotations[jworst]
                    .normalize()
                    .unwrap();
                let g = scene.ground_truth_pose(t).local_rotations[jworst]
                    .normalize()
                    .unwrap();
                // e = p * conj(g)
                let e = {
                    let (gw, gx, gy, gz) = (g.w, -g.x, -g.y, -g.z);
                    Quat::new(
                        p.w * gw - p.x * gx - p.y * gy - p.z * gz,
                        p.w * gx + p.x * gw + p.y * gz - p.z * gy,
                        p.w * gy - p.x * gz + p.y * gw + p.z * gx,
                        p.w * gz + p.x * gy - p.y * gx + p.z * gw,
                    )
                };
                let vdot = e.x * axis.x + e.y * axis.y + e.z * axis.z;
                let twist = 2.0 * vdot.abs().atan2(e.w.abs());
                let total = 2.0 * (e.w.abs().min(1.0)).acos();
                let swing = (total * total - twist * twist).max(0.0).sqrt();
                max_twist = max_twist.max(twist.to_degrees());
                max_swing = max_swing.max(swing.to_degrees());
            }
            println!(
                "joint {jworst} error split: twist-about-bone {max_twist:.2} deg, swing {max_swing:.2} deg"
            );
        }
    }
    let radii: Vec<f64> = model
        .skinning
        .log_radii
        .value()
        .iter()
        .map(|v| (v.exp() * 1000.0).round() / 1000.0)
        .collect();
    println!("learned radii: {radii:?}");
    // per-time signed angle about each joint's GT axis: is the curve
    // shape recovered or flattened?
    for j in 1..scene.skeleton.joint_count() {
        let axis = scene.trajectories[j].axis;
        print!("joint {j} (gt vs pred deg):");
        for &t in &times {
            let gt_angle = scene.trajectories[j].angle(t).to_degrees();
            let p = model.pose.predict_sample(t).unwrap().local_rotations[j]
                .normalize()
                .unwrap();
            let vdot = p.x * axis.x + p.y * axis.y + p.z * axis.z;
            let pred_angle = (2.0 * vdot.atan2(p.w)).to_degrees();
            print!(" {gt_angle:.0}/{pred_angle:.0}");
        }
        println!();
    }
    let last = &history.records[history.records.len() - 1];
    println!(
        "final loss terms: perceptual {:.5} motion {:.5} detail {:.6}",
        last.perceptual, last.motion, last.detail
    );

    // interpolation accuracy between training timesteps
    let mut worst_interp: f64 = 0.0;
    for k in 0..=100 {
        let t = k as f64 / 100.0;
        let predicted = model.pose.predict_sample(t).unwrap();
        let gt = scene.ground_truth_pose(t);
        for j in 0..scene.skeleton.joint_count() {
            let err = predicted.local_rotations[j]
                .angle_to(&gt.local_rotations[j])
                .to_degrees();
            worst_interp = worst_interp.max(err);
        }
    }
    println!("worst joint-angle error over 101 uniform times: {worst_interp:.2} deg");

    // argmax skinning assignment vs ground truth parts
    let tape = Tape::eval();
    let weights = model.skinning.weights_on_tape(&tape).value();
    let gt_assign = scene.point_assignments();
    let mut agree = 0usize;
    for (i, &gt_bone) in gt_assign.iter().enumerate() {
        let row: Vec<f64> = (0..scene.skeleton.bone_count())
            .map(|b| weights[[i, b]])
            .collect();
        let argmax = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        if argmax == gt_bone {
            agree += 1;
        }
    }
    println!(
        "argmax assignment agreement: {:.2}%",
        100.0 * agree as f64 / gt_assign.len() as f64
    );

    // consecutive-frame displacement ratio (interp vs training spacing)
    let fine: Vec<f64> = (0..=100).map(|k| k as f64 / 100.0).collect();
    let frames = model.interpolate_sequence(&fine).unwrap();
    let mut max_fine = 0.0f64;
    for pair in frames.windows(2) {
        for i in 0..pair[0].shape()[0] {
            let d = ((pair[0][[i, 0]] - pair[1][[i, 0]]).powi(2)
                + (pair[0][[i, 1]] - pair[1][[i, 1]]).powi(2)
                + (pair[0][[i, 2]] - pair[1][[i, 2]]).powi(2))
            .sqrt();
            max_fine = max_fine.max(d);
        }
    }
    let coarse = model.interpolate_sequence(&times).unwrap();
    let mut max_coarse = 0.0f64;
    for pair in coarse.windows(2) {
        for i in 0..pair[0].shape()[0] {
            let d = ((pair[0][[i, 0]] - pair[1][[i, 0]]).powi(2)
                + (pair[0][[i, 1]] - pair[1][[i, 1]]).powi(2)
                + (pair[0][[i, 2]] - pair[1][[i, 2]]).powi(2))
            .sqrt();
            max_coarse = max_coarse.max(d);
        }
    }
    println!(
        "consecutive displacement: fine {max_fine:.4}, training-step {max_coarse:.4}, ratio {:.2}",
        max_fine / max_coarse
    );
}
