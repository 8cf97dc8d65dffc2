//! Brute-force reference compositor: every pixel iterates every surviving
//! splat in full depth order with no tiles, no footprint restriction, and no
//! early stop. The oracle the tiled renderer is checked against.

use nalgebra::{Vector2, Vector3};
use ndarray::Array3;

use super::project::project_unculled;
use super::raster::RenderInputs;
use super::{Camera, RasterConfig};

pub fn render_reference(
    inputs: &RenderInputs,
    camera: &Camera,
    background: [f64; 3],
    cfg: &RasterConfig,
) -> Array3<f64> {
    let n = inputs.len();
    let mut splats = Vec::with_capacity(n);
    for i in 0..n {
        let center = Vector3::new(
            inputs.centers[[i, 0]],
            inputs.centers[[i, 1]],
            inputs.centers[[i, 2]],
        );
        let mut cov3 = nalgebra::Matrix3::zeros();
        for r in 0..3 {
            for c in 0..3 {
                cov3[(r, c)] = inputs.cov3[[i, r, c]];
            }
        }
        let cov3 = 0.5 * (cov3 + cov3.transpose());
        if let Some(s) = project_unculled(&center, &cov3, camera, cfg) {
            splats.push((i, s));
        }
    }
    splats.sort_by(|a, b| {
        a.1.depth
            .partial_cmp(&b.1.depth)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });

    let (w, h) = (camera.width, camera.height);
    let mut image = Array3::<f64>::zeros((h, w, 3));
    for py in 0..h {
        for px in 0..w {
            let pix = Vector2::new(px as f64 + 0.5, py as f64 + 0.5);
            let mut t_cur = 1.0f64;
            let mut rgb = [0.0f64; 3];
            for &(i, ref s) in &splats {
                let d = pix - s.mean;
                let power = -0.5
                    * (s.conic[(0, 0)] * d.x * d.x
                        + 2.0 * s.conic[(0, 1)] * d.x * d.y
                        + s.conic[(1, 1)] * d.y * d.y);
                if power > 0.0 {
                    continue;
                }
                let alpha = (inputs.opacities[i] * power.exp()).min(cfg.alpha_clamp);
                if alpha <= 0.0 {
                    continue;
                }
                for c in 0..3 {
                    rgb[c] += inputs.colors[[i, c]] * alpha * t_cur;
                }
                t_cur *= 1.0 - alpha;
            }
            for c in 0..3 {
                image[[py, px, c]] = rgb[c] + background[c] * t_cur;
            }
        }
    }
    image
}
