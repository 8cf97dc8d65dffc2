//! Training losses and evaluation metrics.
//!
//! Total training loss: `lambda1 * perceptual + lambda2 * motion +
//! lambda3 * detail`, with the perceptual term an L1 / D-SSIM mix, the
//! motion term the temporal Laplacian of raw pose-network outputs, and the
//! detail term the mean squared offset norm.

use ndarray::ArrayViewD;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Tape, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("image dimensions differ: {a:?} vs {b:?}")]
    DimensionMismatch { a: Vec<usize>, b: Vec<usize> },
    #[error("image {image:?} is smaller than the {window}x{window} SSIM window")]
    WindowTooSmall { image: Vec<usize>, window: usize },
    #[error("motion loss needs at least 3 samples, got {0}")]
    TooFewSamples(usize),
}

/// How the motion Laplacian collapses a per-joint difference vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MotionAbsMode {
    /// Sum of per-component absolute values.
    #[default]
    PerComponent,
    /// Euclidean norm of the per-joint 4-vector difference.
    VectorNorm,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda_perceptual: f64,
    pub lambda_motion: f64,
    pub lambda_detail: f64,
    pub dssim_mix: f64,
    pub motion_samples: usize,
    pub ssim_window: usize,
    pub ssim_sigma: f64,
    pub include_root_translation: bool,
    pub motion_abs: MotionAbsMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_perceptual: 2.0,
            lambda_motion: 1.0,
            lambda_detail: 1.0,
            dssim_mix: 0.2,
            motion_samples: 32,
            ssim_window: 11,
            ssim_sigma: 1.5,
            include_root_translation: true,
            motion_abs: MotionAbsMode::PerComponent,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PerceptualConfig {
    pub dssim_mix: f64,
    pub ssim_window: usize,
    pub ssim_sigma: f64,
}

impl Default for PerceptualConfig {
    fn default() -> Self {
        PerceptualConfig {
            dssim_mix: 0.2,
            ssim_window: 11,
            ssim_sigma: 1.5,
        }
    }
}

impl LossConfig {
    pub fn perceptual(&self) -> PerceptualConfig {
        PerceptualConfig {
            dssim_mix: self.dssim_mix,
            ssim_window: self.ssim_window,
            ssim_sigma: self.ssim_sigma,
        }
    }
}

/// Normalized 1D Gaussian window.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size as f64 - 1.0) / 2.0;
    let mut w: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v /= total;
    }
    w
}

fn check_same_dims(a: &[usize], b: &[usize]) -> Result<(), LossError> {
    if a != b {
        return Err(LossError::DimensionMismatch {
            a: a.to_vec(),
            b: b.to_vec(),
        });
    }
    Ok(())
}

/// Separable Gaussian filtering over the first two axes of `[H, W]`.
fn window_filter(x: &Tensor, kernel: &[f64]) -> Tensor {
    x.conv1d_axis(kernel, 0).conv1d_axis(kernel, 1)
}

/// Mean SSIM between two `[H, W, 3]` tensors on the tape (channels
/// processed independently and averaged). Constants k1=0.01, k2=0.03, L=1.
pub fn ssim_on_tape(
    a: &Tensor,
    b: &Tensor,
    window: usize,
    sigma: f64,
) -> Result<Tensor, LossError> {
    let shape = a.shape();
    check_same_dims(&shape, &b.shape())?;
    if shape.len() != 3 || shape[2] != 3 {
        return Err(LossError::DimensionMismatch {
            a: shape,
            b: b.shape(),
        });
    }
    if shape[0] < window || shape[1] < window {
        return Err(LossError::WindowTooSmall {
            image: shape,
            window,
        });
    }
    let kernel = gaussian_window(window, sigma);
    const C1: f64 = 0.01 * 0.01;
    const C2: f64 = 0.03 * 0.03;
    let (h, w) = (shape[0], shape[1]);
    let mut channel_means = Vec::with_capacity(3);
    for c in 0..3 {
        let xc = a.slice_axis(2, c, c + 1).reshape(&[h, w]);
        let yc = b.slice_axis(2, c, c + 1).reshape(&[h, w]);
        let mu_x = window_filter(&xc, &kernel);
        let mu_y = window_filter(&yc, &kernel);
        let mu_xx = &mu_x * &mu_x;
        let mu_yy = &mu_y * &mu_y;
        let mu_xy = &mu_x * &mu_y;
        let sigma_x = &window_filter(&(&xc * &xc), &kernel) - &mu_xx;
        let sigma_y = &window_filter(&(&yc * &yc), &kernel) - &mu_yy;
        let sigma_xy = &window_filter(&(&xc * &yc), &kernel) - &mu_xy;
        let num = &mu_xy.scale(2.0).add_scalar(C1) * &sigma_xy.scale(2.0).add_scalar(C2);
        let den = &(&mu_xx + &mu_yy).add_scalar(C1) * &(&sigma_x + &sigma_y).add_scalar(C2);
        channel_means.push((&num / &den).mean());
    }
    let sum = &(&channel_means[0] + &channel_means[1]) + &channel_means[2];
    Ok(sum.scale(1.0 / 3.0))
}

/// SSIM between two plain `[H, W, 3]` images.
pub fn ssim(a: &ArrayViewD<f64>, b: &ArrayViewD<f64>, window: usize, sigma: f64) -> Result<f64, LossError> {
    let tape = Tape::eval();
    let ta = tape.constant(a.to_owned());
    let tb = tape.constant(b.to_owned());
    Ok(ssim_on_tape(&ta, &tb, window, sigma)?.scalar_value())
}

/// `(1 - mix) * mean|a - b| + mix * (1 - SSIM) / 2`.
pub fn perceptual_on_tape(
    tape: &Tape,
    render: &Tensor,
    target: &ArrayViewD<f64>,
    cfg: &PerceptualConfig,
) -> Result<Tensor, LossError> {
    check_same_dims(&render.shape(), target.shape())?;
    let t = tape.constant(target.to_owned());
    let l1 = (render - &t).abs().mean();
    if cfg.dssim_mix == 0.0 {
        return Ok(l1);
    }
    let ssim_val = ssim_on_tape(render, &t, cfg.ssim_window, cfg.ssim_sigma)?;
    let dssim = ssim_val.neg_t().add_scalar(1.0).scale(0.5);
    Ok(&l1.scale(1.0 - cfg.dssim_mix) + &dssim.scale(cfg.dssim_mix))
}

/// `10 log10(1 / MSE)` in dB for values in [0, 1]; identical images give
/// the +inf sentinel.
pub fn psnr(a: &ArrayViewD<f64>, b: &ArrayViewD<f64>) -> Result<f64, LossError> {
    check_same_dims(a.shape(), b.shape())?;
    let n = a.len().max(1) as f64;
    let mse: f64 = a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

/// Sample times for the motion Laplacian: `T` interior points of a uniform
/// grid with spacing `h = 1/(T+2)`, shifted by `phase in [0,1)` grid cells;
/// all points and their `±h` neighbors stay inside [0, 1]. Returns
/// `(h, times)` with `times.len() == T + 2` (interior points plus the two
/// boundary neighbors).
pub fn motion_time_grid(sample_count: usize, phase: f64) -> Result<(f64, Vec<f64>), LossError> {
    if sample_count < 3 {
        return Err(LossError::TooFewSamples(sample_count));
    }
    let h = 1.0 / (sample_count as f64 + 2.0);
    let phase = phase.rem_euclid(1.0);
    let times = (0..sample_count + 2)
        .map(|k| (k as f64 + phase) * h)
        .collect();
    Ok((h, times))
}

/// Temporal Laplacian of raw (pre-normalization) pose outputs.
///
/// `raw` is `[T+2, D]`: network outputs at the grid from
/// [`motion_time_grid`], where `D` is `4J` raw quaternion components,
/// optionally followed by the root translation. The absolute second
/// difference is summed per `mode` and averaged by `1 / (T * J)`.
pub fn motion_loss_from_raw(
    raw: &Tensor,
    joint_count: usize,
    mode: MotionAbsMode,
) -> Result<Tensor, LossError> {
    let rows = raw.shape()[0];
    if rows < 5 {
        return Err(LossError::TooFewSamples(rows.saturating_sub(2)));
    }
    let t = rows - 2;
    let prev = raw.slice_axis(0, 0, t);
    let cur = raw.slice_axis(0, 1, t + 1);
    let next = raw.slice_axis(0, 2, t + 2);
    let lap = &(&prev - &cur.scale(2.0)) + &next;
    let norm = 1.0 / (t as f64 * joint_count as f64);
    let loss = match mode {
        MotionAbsMode::PerComponent => lap.abs().sum().scale(norm),
        MotionAbsMode::VectorNorm => {
            let d = lap.shape()[1];
            let quat_part = lap.slice_axis(1, 0, 4 * joint_count);
            let per_joint = quat_part
                .reshape(&[t * joint_count, 4])
                .square()
                .sum_axis(1, false)
                .add_scalar(1e-24)
                .sqrt()
                .sum();
            if d > 4 * joint_count {
                let trans = lap.slice_axis(1, 4 * joint_count, d);
                let tnorm = trans.square().sum_axis(1, false).add_scalar(1e-24).sqrt().sum();
                (&per_joint + &tnorm).scale(norm)
            } else {
                per_joint.scale(norm)
            }
        }
    };
    Ok(loss)
}

/// Mean squared Euclidean norm of per-Gaussian offsets `[N, 3]`.
pub fn detail_loss(offsets: &Tensor) -> Tensor {
    let n = offsets.shape()[0].max(1) as f64;
    offsets.square().sum().scale(1.0 / n)
}

/// Per-term values of one optimization step's loss.
#[derive(Debug, Clone, Copy)]
pub struct LossReport {
    pub total: f64,
    pub perceptual: f64,
    pub motion: f64,
    pub detail: f64,
}
