//! Tape binding for the rasterizer: one custom record whose VJP is the
//! analytic adjoint in [`super::raster`].

use ndarray::{Ix1, Ix2, Ix3};

use crate::autodiff::{Tape, Tensor};

use super::raster::{render, render_backward, RenderInputs};
use super::{Camera, RasterConfig};

/// Render deformed Gaussians (`centers [N,3]`, `cov3 [N,3,3]`, activated
/// `opacities [N]`, per-view `colors [N,3]`) into an `[H,W,3]` image tensor.
/// Gradients flow to all four inputs.
pub fn render_on_tape(
    tape: &Tape,
    centers: &Tensor,
    cov3: &Tensor,
    opacities: &Tensor,
    colors: &Tensor,
    camera: &Camera,
    background: [f64; 3],
    cfg: &RasterConfig,
) -> Tensor {
    let centers_v = centers.value_ref();
    let cov3_v = cov3.value_ref();
    let opac_v = opacities.value_ref();
    let colors_v = colors.value_ref();

    let out = {
        let inputs = RenderInputs {
            centers: centers_v.view().into_dimensionality::<Ix2>().expect("[N,3]"),
            cov3: cov3_v.view().into_dimensionality::<Ix3>().expect("[N,3,3]"),
            opacities: opac_v.view().into_dimensionality::<Ix1>().expect("[N]"),
            colors: colors_v.view().into_dimensionality::<Ix2>().expect("[N,3]"),
        };
        render(&inputs, camera, background, cfg)
    };
    let saved = out.saved;
    let image = out.image.into_dyn();

    let camera = camera.clone();
    let cfg = *cfg;
    tape.custom_op(
        &[centers, cov3, opacities, colors],
        image,
        move |upstream| {
            let inputs = RenderInputs {
                centers: centers_v.view().into_dimensionality::<Ix2>().expect("[N,3]"),
                cov3: cov3_v.view().into_dimensionality::<Ix3>().expect("[N,3,3]"),
                opacities: opac_v.view().into_dimensionality::<Ix1>().expect("[N]"),
                colors: colors_v.view().into_dimensionality::<Ix2>().expect("[N,3]"),
            };
            let up3 = upstream
                .view()
                .into_dimensionality::<Ix3>()
                .expect("[H,W,3]");
            let grads = render_backward(&saved, &inputs, &camera, background, &cfg, &up3);
            vec![
                grads.d_centers.into_dyn(),
                grads.d_cov3.into_dyn(),
                grads.d_opacities.into_dyn(),
                grads.d_colors.into_dyn(),
            ]
        },
    )
}
