//! First-order (EWA-style) projection of a 3D Gaussian to screen space and
//! its analytic adjoint.
//!
//! The projected covariance is `J W Sigma W^T J^T + blur` where `W` rotates
//! world to camera and `J` is the pinhole Jacobian at the splat center; the
//! adjoint chains gradients back through both the mean and the Jacobian's
//! dependence on the camera-space point.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use super::{Camera, RasterConfig};

/// One projected Gaussian. `conic` is the inverse of the regularized 2D
/// covariance; `radius` is the binning/culling extent in pixels.
#[derive(Debug, Clone, Copy)]
pub struct Splat2D {
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
    pub conic: Matrix2<f64>,
    pub depth: f64,
    pub radius: f64,
    pub cam_point: Vector3<f64>,
}

fn pinhole_jacobian(camera: &Camera, t: &Vector3<f64>) -> Matrix2x3<f64> {
    let inv_z = 1.0 / t.z;
    let inv_z2 = inv_z * inv_z;
    Matrix2x3::new(
        camera.fx * inv_z,
        0.0,
        -camera.fx * t.x * inv_z2,
        0.0,
        camera.fy * inv_z,
        -camera.fy * t.y * inv_z2,
    )
}

/// Project one Gaussian. Returns `None` when culled: center behind the near
/// plane, or the `cutoff_sigma` extent misses the viewport. Culling is a
/// value, not an error.
pub fn project_gaussian(
    center: &Vector3<f64>,
    cov3: &Matrix3<f64>,
    camera: &Camera,
    cfg: &RasterConfig,
) -> Option<Splat2D> {
    let splat = project_unculled(center, cov3, camera, cfg)?;
    let r = splat.radius;
    let (w, h) = (camera.width as f64, camera.height as f64);
    if splat.mean.x + r < 0.0
        || splat.mean.x - r > w
        || splat.mean.y + r < 0.0
        || splat.mean.y - r > h
    {
        return None;
    }
    Some(splat)
}

/// Projection with near-plane culling only (reference compositor path).
pub fn project_unculled(
    center: &Vector3<f64>,
    cov3: &Matrix3<f64>,
    camera: &Camera,
    cfg: &RasterConfig,
) -> Option<Splat2D> {
    let t = camera.world_to_cam_point(center);
    if t.z <= cfg.near_plane {
        return None;
    }
    let mean = Vector2::new(
        camera.fx * t.x / t.z + camera.cx,
        camera.fy * t.y / t.z + camera.cy,
    );
    let w = camera.world_to_camera.rotation;
    let m = w * cov3 * w.transpose();
    let j = pinhole_jacobian(camera, &t);
    let mut cov2 = j * m * j.transpose();
    cov2[(0, 0)] += cfg.blur_floor_px2;
    cov2[(1, 1)] += cfg.blur_floor_px2;
    let det = cov2[(0, 0)] * cov2[(1, 1)] - cov2[(0, 1)] * cov2[(1, 0)];
    if !(det > 0.0) || !det.is_finite() {
        return None;
    }
    let conic = Matrix2::new(cov2[(1, 1)], -cov2[(0, 1)], -cov2[(1, 0)], cov2[(0, 0)]) / det;
    // largest eigenvalue of the 2x2 covariance bounds the footprint
    let mid = 0.5 * (cov2[(0, 0)] + cov2[(1, 1)]);
    let lambda_max = mid + ((mid * mid - det).max(0.0)).sqrt();
    let radius = cfg.cutoff_sigma * lambda_max.sqrt();
    Some(Splat2D {
        mean,
        cov: cov2,
        conic,
        depth: t.z,
        radius,
        cam_point: t,
    })
}

/// Adjoint of [`project_gaussian`]: upstream gradients on the projected mean
/// and (pre-inversion) 2D covariance back to the world-space center and 3D
/// covariance.
pub fn project_gaussian_backward(
    cov3: &Matrix3<f64>,
    camera: &Camera,
    splat: &Splat2D,
    d_mean: &Vector2<f64>,
    d_cov2: &Matrix2<f64>,
) -> (Vector3<f64>, Matrix3<f64>) {
    let t = splat.cam_point;
    let w = camera.world_to_camera.rotation;
    let m = w * cov3 * w.transpose();
    let j = pinhole_jacobian(camera, &t);

    // cov2 = J M J^T  (blur floor is additive, gradient passes through)
    let d_m = j.transpose() * d_cov2 * j;
    let d_cov3 = w.transpose() * d_m * w;

    // dJ = (g + g^T) J M
    let d_j: Matrix2x3<f64> = (d_cov2 + d_cov2.transpose()) * j * m;

    // mean = (fx tx/tz + cx, fy ty/tz + cy): d_t from the mean via J itself
    let mut d_t = j.transpose() * d_mean;

    // d_t from J's dependence on t
    let inv_z = 1.0 / t.z;
    let inv_z2 = inv_z * inv_z;
    let inv_z3 = inv_z2 * inv_z;
    d_t.x += d_j[(0, 2)] * (-camera.fx * inv_z2);
    d_t.y += d_j[(1, 2)] * (-camera.fy * inv_z2);
    d_t.z += d_j[(0, 0)] * (-camera.fx * inv_z2)
        + d_j[(0, 2)] * (2.0 * camera.fx * t.x * inv_z3)
        + d_j[(1, 1)] * (-camera.fy * inv_z2)
        + d_j[(1, 2)] * (2.0 * camera.fy * t.y * inv_z3);

    let d_center = w.transpose() * d_t;
    (d_center, d_cov3)
}
