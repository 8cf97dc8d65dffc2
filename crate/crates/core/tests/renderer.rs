//! Rasterizer verification: tiled/early-stop renderer against the
//! brute-force compositor, and the analytic adjoint against central finite
//! differences through every input group.

mod common;

use common::fd_check;
use nalgebra::Vector3;
use ndarray::{Array1, Array2, Array3, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use skelsplat::autodiff::{Parameter, Tensor};
use skelsplat::render::{
    render, render_on_tape, render_reference, Camera, RasterConfig, RenderInputs,
};

struct Scene {
    centers: Array2<f64>,
    cov3: Array3<f64>,
    opacities: Array1<f64>,
    colors: Array2<f64>,
    camera: Camera,
}

fn random_scene(n: usize, res: usize, rng: &mut ChaCha12Rng) -> Scene {
    let camera = Camera::look_at(
        Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-0.5..1.5),
            rng.gen_range(3.0..5.0),
        ),
        Vector3::zeros(),
        Vector3::y(),
        res as f64 * 0.9,
        res,
        res,
    )
    .unwrap();
    let centers = Array2::from_shape_fn((n, 3), |_| rng.gen_range(-0.8..0.8));
    let mut cov3 = Array3::<f64>::zeros((n, 3, 3));
    for i in 0..n {
        // random PSD: A A^T scaled to a splat-sized footprint
        let a = nalgebra::Matrix3::<f64>::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let psd = a * a.transpose() * 0.003 + nalgebra::Matrix3::identity() * 0.001;
        for r in 0..3 {
            for c in 0..3 {
                cov3[[i, r, c]] = psd[(r, c)];
            }
        }
    }
    let opacities = Array1::from_shape_fn(n, |_| rng.gen_range(0.05..0.95));
    let colors = Array2::from_shape_fn((n, 3), |_| rng.gen_range(0.0..1.0));
    Scene {
        centers,
        cov3,
        opacities,
        colors,
        camera,
    }
}

impl Scene {
    fn inputs(&self) -> RenderInputs<'_> {
        RenderInputs {
            centers: self.centers.view(),
            cov3: self.cov3.view(),
            opacities: self.opacities.view(),
            colors: self.colors.view(),
        }
    }
}

#[test]
fn tiled_renderer_matches_reference_compositor() {
    let mut rng = ChaCha12Rng::seed_from_u64(100);
    let cfg = RasterConfig::equivalence();
    for case in 0..12 {
        let n = rng.gen_range(5..60);
        let scene = random_scene(n, 16, &mut rng);
        let bg = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), 0.1];
        let fast = render(&scene.inputs(), &scene.camera, bg, &cfg).image;
        let naive = render_reference(&scene.inputs(), &scene.camera, bg, &cfg);
        let max_diff = fast
            .iter()
            .zip(naive.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_diff < 1e-6, "case {case}: max diff {max_diff:.3e}");
    }
}

#[test]
fn default_guards_stay_visually_equivalent() {
    // the default 3-sigma cutoff and 1e-4 early stop introduce only small
    // bounded error against the reference
    let mut rng = ChaCha12Rng::seed_from_u64(101);
    let scene = random_scene(50, 16, &mut rng);
    let cfg = RasterConfig::default();
    let fast = render(&scene.inputs(), &scene.camera, [0.2; 3], &cfg).image;
    let naive = render_reference(&scene.inputs(), &scene.camera, [0.2; 3], &cfg);
    let max_diff = fast
        .iter()
        .zip(naive.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(max_diff < 2e-2, "max diff {max_diff:.3e}");
}

fn image_loss(t: &Tensor, seed: u64) -> Tensor {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let w = ArrayD::from_shape_fn(IxDyn(&t.shape()), |_| rng.gen_range(-1.0..1.0));
    (t * &t.tape().constant(w)).sum()
}

#[test]
fn single_gaussian_opacity_gradient_matches_fd() {
    let mut rng = ChaCha12Rng::seed_from_u64(102);
    let scene = random_scene(1, 12, &mut rng);
    let cfg = RasterConfig::equivalence();
    let opac = Parameter::new("opacity", scene.opacities.clone().into_dyn());
    let centers = scene.centers.clone().into_dyn();
    let cov = scene.cov3.clone().into_dyn();
    let colors = scene.colors.clone().into_dyn();
    let camera = scene.camera.clone();
    let p = opac.clone();
    fd_check(
        "single-gaussian opacity",
        &[opac],
        move |tape| {
            let image = render_on_tape(
                tape,
                &tape.constant(centers.clone()),
                &tape.constant(cov.clone()),
                &tape.param(&p),
                &tape.constant(colors.clone()),
                &camera,
                [0.1, 0.1, 0.1],
                &cfg,
            );
            image_loss(&image, 71)
        },
        1e-5,
        1e-4,
        1e-7,
    );
}

#[test]
fn full_scene_gradients_match_fd_on_all_groups() {
    let mut rng = ChaCha12Rng::seed_from_u64(103);
    let scene = random_scene(12, 12, &mut rng);
    let cfg = RasterConfig::equivalence();
    let p_centers = Parameter::new("centers", scene.centers.clone().into_dyn());
    let p_cov = Parameter::new("cov3", scene.cov3.clone().into_dyn());
    let p_opac = Parameter::new("opacities", scene.opacities.clone().into_dyn());
    let p_colors = Parameter::new("colors", scene.colors.clone().into_dyn());
    let camera = scene.camera.clone();
    let params = [
        p_centers.clone(),
        p_cov.clone(),
        p_opac.clone(),
        p_colors.clone(),
    ];
    fd_check(
        "render all attribute groups",
        &params,
        move |tape| {
            let image = render_on_tape(
                tape,
                &tape.param(&p_centers),
                &tape.param(&p_cov),
                &tape.param(&p_opac),
                &tape.param(&p_colors),
                &camera,
                [0.3, 0.2, 0.1],
                &cfg,
            );
            image_loss(&image, 73)
        },
        1e-6,
        1e-3,
        1e-6,
    );
}

#[test]
fn differentiable_cloud_render_chain_matches_fd() {
    // full canonical path: quaternions -> covariance, logits -> opacity,
    // SH + view dirs -> color, centers -> projection
    use skelsplat::scene::GaussianCloud;
    let mut rng = ChaCha12Rng::seed_from_u64(104);
    let points: Vec<Vector3<f64>> = (0..8)
        .map(|_| {
            Vector3::new(
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
            )
        })
        .collect();
    let colors: Vec<[f64; 3]> = (0..8)
        .map(|_| {
            [
                rng.gen_range(0.2..0.8),
                rng.gen_range(0.2..0.8),
                rng.gen_range(0.2..0.8),
            ]
        })
        .collect();
    let cloud = GaussianCloud::init_from_points(&points, &colors, 1).unwrap();
    // shrink splats and perturb rotations so every branch is active
    cloud.log_scales.set_value(
        cloud
            .log_scales
            .value()
            .mapv(|v| v - 0.5 + rng.gen_range(-0.2..0.2)),
    );
    cloud.rotations.set_value(ArrayD::from_shape_fn(
        IxDyn(&[8, 4]),
        |_| rng.gen_range(-1.0..1.0),
    ));
    let camera = Camera::look_at(
        Vector3::new(0.4, 0.6, 3.5),
        Vector3::zeros(),
        Vector3::y(),
        14.0,
        12,
        12,
    )
    .unwrap();
    let cfg = RasterConfig::equivalence();
    let params = cloud.params();
    fd_check(
        "cloud render chain",
        &params,
        move |tape| {
            let tensors = cloud.as_params(tape);
            let image = skelsplat::scene::render_cloud_on_tape(
                tape,
                &tensors,
                cloud.sh_degree,
                &camera,
                [0.1, 0.4, 0.2],
                &cfg,
            );
            image_loss(&image, 79)
        },
        1e-6,
        2e-3,
        1e-6,
    );
}
