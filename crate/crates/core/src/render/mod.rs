//! Differentiable software rasterizer: EWA-style projection of 3D Gaussians
//! to screen space and front-to-back alpha compositing, with a hand-written
//! analytic adjoint (per-pixel taping over H*W pixels times N splats would
//! be prohibitive).

mod project;
mod raster;
mod reference;
mod tape_op;

pub use project::{project_gaussian, project_gaussian_backward, Splat2D};
pub use raster::{render, render_backward, InputGrads, RenderInputs, RenderOutput, RenderSaved};
pub use reference::render_reference;
pub use tape_op::render_on_tape;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::RigidTransform;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CameraError {
    #[error("focal lengths must be positive, got fx={0}, fy={1}")]
    BadFocal(f64, f64),
    #[error("image dimensions must be in 1..=4096, got {0}x{1}")]
    BadDims(usize, usize),
    #[error("camera rotation is not orthonormal")]
    BadRotation,
}

/// Pinhole camera. Camera space is x-right, y-down, +z forward (depth);
/// dataset loaders convert OpenGL-style (-z forward) matrices on ingest.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// `x_cam = R x_world + t`.
    pub world_to_camera: RigidTransform,
}

impl Camera {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        world_to_camera: RigidTransform,
    ) -> Result<Camera, CameraError> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(CameraError::BadFocal(fx, fy));
        }
        if width == 0 || height == 0 || width > 4096 || height > 4096 {
            return Err(CameraError::BadDims(width, height));
        }
        let r = world_to_camera.rotation;
        let gram = r.transpose() * r - Matrix3::identity();
        if gram.iter().any(|v| v.abs() > 1e-9) {
            return Err(CameraError::BadRotation);
        }
        Ok(Camera {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            world_to_camera,
        })
    }

    /// Camera centered on `eye` looking at `target`; `up` is world-up.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        fx: f64,
        width: usize,
        height: usize,
    ) -> Result<Camera, CameraError> {
        let z = (target - eye).normalize();
        let x = z.cross(&up).normalize();
        let y = z.cross(&x); // image y points down when up is world-up
        let rotation = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let translation = -(rotation * eye);
        Camera::new(
            fx,
            fx,
            width as f64 / 2.0,
            height as f64 / 2.0,
            width,
            height,
            RigidTransform::new(rotation, translation),
        )
    }

    pub fn position(&self) -> Vector3<f64> {
        self.world_to_camera.inverse().translation
    }

    pub fn world_to_cam_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.world_to_camera.apply(p)
    }

    /// Same field of view at `factor`-times the resolution.
    pub fn scaled(&self, factor: f64) -> Result<Camera, CameraError> {
        Camera::new(
            self.fx * factor,
            self.fy * factor,
            self.cx * factor,
            self.cy * factor,
            (self.width as f64 * factor).round() as usize,
            (self.height as f64 * factor).round() as usize,
            self.world_to_camera,
        )
    }
}

/// Rasterization knobs. All numerical guards are configurable; oracle
/// equivalence tests tighten `cutoff_sigma` and `early_stop_transmittance`
/// so guard-induced approximation stays below the comparison tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RasterConfig {
    pub near_plane: f64,
    /// Whole-splat viewport culling and tile binning use an AABB of this
    /// many standard deviations around the projected mean.
    pub cutoff_sigma: f64,
    /// Screen-space blur floor added to the projected covariance diagonal
    /// (px^2); anti-aliasing floor that also prevents degenerate inversion.
    pub blur_floor_px2: f64,
    pub alpha_clamp: f64,
    pub early_stop_transmittance: f64,
    pub tile_size: usize,
}

impl Default for RasterConfig {
    fn default() -> Self {
        RasterConfig {
            near_plane: 0.01,
            cutoff_sigma: 3.0,
            blur_floor_px2: 0.3,
            alpha_clamp: 0.99,
            early_stop_transmittance: 1e-4,
            tile_size: 16,
        }
    }
}

impl RasterConfig {
    /// Conservative guards for comparisons against the no-cull reference
    /// compositor: culling/early-stop error stays around 1e-12.
    pub fn equivalence() -> Self {
        RasterConfig {
            cutoff_sigma: 8.0,
            early_stop_transmittance: 1e-12,
            ..Default::default()
        }
    }
}
