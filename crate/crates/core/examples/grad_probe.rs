//! One-step gradient probe: which pose-head outputs receive photometric
//! gradient on a fresh model?

use skelsplat::autodiff::Tape;
use skelsplat::losses::{perceptual_on_tape, PerceptualConfig};
use skelsplat::oracle::{generate_scene, OracleSpec, ViewpointPolicy};
use skelsplat::render::RasterConfig;
use skelsplat::scene::{fit_canonical, FitConfig, GaussianCloud};
use skelsplat::train::TrainConfig;

fn main() {
    let spec = OracleSpec {
        bone_count: 2,
        points_per_part: 450,
        motion_amplitude: 30.0_f64.to_radians(),
        seed: 42,
        bulge_amplitude: 0.0,
    };
    let scene = generate_scene(&spec).unwrap();
    let raster = RasterConfig::default();
    let bg = [0.0; 3];
    let times: Vec<f64> = (0..11).map(|k| k as f64 / 10.0).collect();
    let observations = scene
        .render_observations(&times, ViewpointPolicy::Orbit, 128, 8, bg, &raster)
        .unwrap();
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
    fit_canonical(
        &cloud,
        &views,
        &FitConfig {
            iterations: 300,
            background: bg,
            ..Default::default()
        },
    )
    .unwrap();

    let cfg = TrainConfig::default();
    let model = skelsplat::deform::DeformationModel::new(
        &cloud,
        scene.skeleton.clone(),
        &cfg.deform,
        7,
    );

    // one observation where joint 2's ground-truth angle is large
    for obs_idx in [7usize, 2, 5] {
        let obs = &observations.training()[obs_idx];
        for p in model.all_params() {
            p.zero_grad();
        }
        let tape = Tape::new();
        let (image, _) = model
            .render_on_tape(&tape, obs.time, &obs.camera, bg, &raster, true)
            .unwrap();
        let loss = perceptual_on_tape(
            &tape,
            &image,
            &obs.image.view().into_dyn(),
            &PerceptualConfig::default(),
        )
        .unwrap();
        tape.backward(&loss).unwrap();
        let bias_grad = model.pose.mlp.layers.last().unwrap().bias.grad();
        let g: Vec<f64> = bias_grad.iter().copied().collect();
        let block =
            |j: usize| -> f64 { g[4 * j..4 * j + 4].iter().map(|v| v * v).sum::<f64>().sqrt() };
        println!(
            "t={:.1} loss={:.5}  |g(q0)|={:.3e} |g(q1)|={:.3e} |g(q2)|={:.3e} |g(p)|={:.3e}",
            obs.time,
            loss.scalar_value(),
            block(0),
            block(1),
            block(2),
            g[12..15].iter().map(|v| v * v).sum::<f64>().sqrt()
        );
        // raw gradient values for joint 2's quaternion block
        println!("  q2 block grads: {:?}", &g[8..12]);
    }
}
