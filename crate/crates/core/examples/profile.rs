//! Rough component timings for the training inner loop.

use std::time::Instant;

use nalgebra::Vector3;
use ndarray::Array3;
use skelsplat::autodiff::Tape;
use skelsplat::losses::{perceptual_on_tape, PerceptualConfig};
use skelsplat::render::{Camera, RasterConfig};
use skelsplat::scene::{render_cloud_on_tape, GaussianCloud};

fn main() {
    let n = 2000;
    let golden = std::f64::consts::PI * (3.0 - 5.0_f64.sqrt());
    let mut points = Vec::new();
    let mut colors = Vec::new();
    for i in 0..n {
        let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
        let r = (1.0 - y * y).sqrt();
        let theta = golden * i as f64;
        points.push(Vector3::new(r * theta.cos(), y, r * theta.sin()) * 0.8);
        colors.push([0.5, 0.4, 0.3]);
    }
    let cloud = GaussianCloud::init_from_points(&points, &colors, 1).unwrap();
    let cam = Camera::look_at(
        Vector3::new(0.0, 1.0, 3.0),
        Vector3::zeros(),
        Vector3::y(),
        140.0,
        128,
        128,
    )
    .unwrap();
    let raster = RasterConfig::default();
    let target = Array3::<f64>::from_elem((128, 128, 3), 0.2).into_dyn();

    let reps = 30;

    // forward only (no recording)
    let t0 = Instant::now();
    for _ in 0..reps {
        let tape = Tape::eval();
        let tensors = cloud.as_constants(&tape);
        let img = render_cloud_on_tape(&tape, &tensors, 1, &cam, [0.0; 3], &raster);
        std::hint::black_box(img.value_ref());
    }
    println!("forward (eval): {:.1} ms", t0.elapsed().as_secs_f64() * 1000.0 / reps as f64);

    // forward with recording + L1-only loss + backward
    let t0 = Instant::now();
    for _ in 0..reps {
        let tape = Tape::new();
        let tensors = cloud.as_params(&tape);
        let img = render_cloud_on_tape(&tape, &tensors, 1, &cam, [0.0; 3], &raster);
        let cfg = PerceptualConfig { dssim_mix: 0.0, ..Default::default() };
        let loss = perceptual_on_tape(&tape, &img, &target.view(), &cfg).unwrap();
        tape.backward(&loss).unwrap();
        for p in cloud.params() {
            p.zero_grad();
        }
    }
    println!("fwd+bwd L1 only: {:.1} ms", t0.elapsed().as_secs_f64() * 1000.0 / reps as f64);

    // full perceptual (L1 + DSSIM)
    let t0 = Instant::now();
    for _ in 0..reps {
        let tape = Tape::new();
        let tensors = cloud.as_params(&tape);
        let img = render_cloud_on_tape(&tape, &tensors, 1, &cam, [0.0; 3], &raster);
        let cfg = PerceptualConfig::default();
        let loss = perceptual_on_tape(&tape, &img, &target.view(), &cfg).unwrap();
        tape.backward(&loss).unwrap();
        for p in cloud.params() {
            p.zero_grad();
        }
    }
    println!("fwd+bwd full:    {:.1} ms", t0.elapsed().as_secs_f64() * 1000.0 / reps as f64);

    // raster only, isolated
    let centers = cloud.centers.value().into_dimensionality::<ndarray::Ix2>().unwrap();
    let mut cov = ndarray::Array3::<f64>::zeros((n, 3, 3));
    let s2 = (0.031_f64).powi(2);
    for i in 0..n {
        for d in 0..3 {
            cov[[i, d, d]] = s2;
        }
    }
    let opac = ndarray::Array1::from_elem(n, 0.5);
    let cols = ndarray::Array2::from_elem((n, 3), 0.4);
    let inputs = skelsplat::render::RenderInputs {
        centers: centers.view(),
        cov3: cov.view(),
        opacities: opac.view(),
        colors: cols.view(),
    };
    let t0 = Instant::now();
    for _ in 0..reps {
        std::hint::black_box(skelsplat::render::render(&inputs, &cam, [0.0; 3], &raster));
    }
    println!("raster fwd only: {:.1} ms", t0.elapsed().as_secs_f64() * 1000.0 / reps as f64);
    let out = skelsplat::render::render(&inputs, &cam, [0.0; 3], &raster);
    let upstream = Array3::<f64>::from_elem((128, 128, 3), 0.5);
    let t0 = Instant::now();
    for _ in 0..reps {
        std::hint::black_box(skelsplat::render::render_backward(
            &out.saved,
            &inputs,
            &cam,
            [0.0; 3],
            &raster,
            &upstream.view(),
        ));
    }
    println!("raster bwd only: {:.1} ms", t0.elapsed().as_secs_f64() * 1000.0 / reps as f64);
}
