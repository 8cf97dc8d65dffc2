//! Tiled front-to-back alpha compositing and its analytic adjoint.
//!
//! Splats are depth-sorted once per frame (center depth, stable tie-break on
//! input index) and binned into tiles by their `cutoff_sigma` AABB. Work is
//! parallelized over a fixed number of tile chunks; each chunk accumulates
//! into its own buffers and chunks are merged in index order, so results are
//! run-to-run identical regardless of thread scheduling.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayView3};
use rayon::prelude::*;

use super::project::{project_gaussian, project_gaussian_backward, Splat2D};
use super::{Camera, RasterConfig};

/// Number of tile chunks processed in parallel. Fixed (not thread-count
/// dependent) so the merge order, and therefore every floating-point sum,
/// is identical across machines and runs.
const PARALLEL_CHUNKS: usize = 8;

pub struct RenderInputs<'a> {
    /// `[N, 3]` world-space centers.
    pub centers: ArrayView2<'a, f64>,
    /// `[N, 3, 3]` world-space covariances (symmetric PSD).
    pub cov3: ArrayView3<'a, f64>,
    /// `[N]` activated opacities in (0, 1).
    pub opacities: ArrayView1<'a, f64>,
    /// `[N, 3]` per-view colors in [0, 1].
    pub colors: ArrayView2<'a, f64>,
}

impl<'a> RenderInputs<'a> {
    pub fn len(&self) -> usize {
        self.centers.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn center(&self, i: usize) -> Vector3<f64> {
        Vector3::new(self.centers[[i, 0]], self.centers[[i, 1]], self.centers[[i, 2]])
    }

    fn cov(&self, i: usize) -> Matrix3<f64> {
        let mut m = Matrix3::zeros();
        for r in 0..3 {
            for c in 0..3 {
                m[(r, c)] = self.cov3[[i, r, c]];
            }
        }
        // average asymmetric rounding away; projection assumes symmetry
        0.5 * (m + m.transpose())
    }

    fn color(&self, i: usize) -> [f64; 3] {
        [self.colors[[i, 0]], self.colors[[i, 1]], self.colors[[i, 2]]]
    }
}

/// Projection results retained for the adjoint pass.
pub struct RenderSaved {
    /// Surviving splats in depth order (stable index tie-break).
    entries: Vec<ProjEntry>,
    /// Per-pixel hot data in the same order as `entries`.
    hot: Vec<HotSplat>,
    /// Per-tile index lists into `entries`, depth-ordered.
    tile_lists: Vec<Vec<u32>>,
    tiles_x: usize,
    tiles_y: usize,
    /// Final transmittance per pixel.
    transmittance: Array2<f64>,
    pub skipped_singular: usize,
    n_inputs: usize,
}

struct ProjEntry {
    gaussian: usize,
    splat: Splat2D,
    color: [f64; 3],
    opacity: f64,
}

/// Compact per-splat record the pixel loops read: projected mean, conic,
/// opacity, footprint bounds, and color, in one flat struct.
#[derive(Clone, Copy)]
struct HotSplat {
    mx: f64,
    my: f64,
    c00: f64,
    c01: f64,
    c11: f64,
    opacity: f64,
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    color: [f64; 3],
}

impl HotSplat {
    fn from_entry(e: &ProjEntry) -> HotSplat {
        let r = e.splat.radius;
        HotSplat {
            mx: e.splat.mean.x,
            my: e.splat.mean.y,
            c00: e.splat.conic[(0, 0)],
            c01: e.splat.conic[(0, 1)],
            c11: e.splat.conic[(1, 1)],
            opacity: e.opacity,
            x0: e.splat.mean.x - r,
            x1: e.splat.mean.x + r,
            y0: e.splat.mean.y - r,
            y1: e.splat.mean.y + r,
            color: e.color,
        }
    }

    /// Gaussian weight at the pixel center, `None` outside the footprint
    /// box. Forward and backward replay must agree exactly, so both call
    /// this single path.
    #[inline]
    fn weight_at(&self, px: f64, py: f64) -> Option<f64> {
        if px < self.x0 || px > self.x1 || py < self.y0 || py > self.y1 {
            return None;
        }
        let dx = px - self.mx;
        let dy = py - self.my;
        let power = -0.5 * (self.c00 * dx * dx + 2.0 * self.c01 * dx * dy + self.c11 * dy * dy);
        if power > 0.0 {
            return None;
        }
        Some(power.exp())
    }
}

pub struct RenderOutput {
    /// `[H, W, 3]` in [0, 1] given in-range inputs.
    pub image: Array3<f64>,
    /// `[H, W]` accumulated alpha (1 - final transmittance).
    pub alpha: Array2<f64>,
    pub saved: RenderSaved,
}

pub struct InputGrads {
    pub d_centers: Array2<f64>,
    pub d_cov3: Array3<f64>,
    pub d_opacities: Array1<f64>,
    pub d_colors: Array2<f64>,
}

fn tile_ranges(count: usize) -> Vec<(usize, usize)> {
    let per = count.div_ceil(PARALLEL_CHUNKS).max(1);
    (0..count)
        .step_by(per)
        .map(|start| (start, (start + per).min(count)))
        .collect()
}

/// Forward rasterization.
pub fn render(
    inputs: &RenderInputs,
    camera: &Camera,
    background: [f64; 3],
    cfg: &RasterConfig,
) -> RenderOutput {
    let n = inputs.len();
    let mut skipped = 0usize;
    let mut entries: Vec<ProjEntry> = Vec::with_capacity(n);
    for i in 0..n {
        let center = inputs.center(i);
        let cov3 = inputs.cov(i);
        match project_gaussian(&center, &cov3, camera, cfg) {
            Some(splat) => entries.push(ProjEntry {
                gaussian: i,
                splat,
                color: inputs.color(i),
                opacity: inputs.opacities[i],
            }),
            None => {
                // distinguish singular projections from geometric culls
                let t = camera.world_to_cam_point(&center);
                if t.z > cfg.near_plane && !cov3.iter().all(|v| v.is_finite()) {
                    skipped += 1;
                }
            }
        }
    }
    entries.sort_by(|a, b| {
        a.splat
            .depth
            .partial_cmp(&b.splat.depth)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.gaussian.cmp(&b.gaussian))
    });

    let (w, h) = (camera.width, camera.height);
    let tile = cfg.tile_size.max(1);
    let tiles_x = w.div_ceil(tile);
    let tiles_y = h.div_ceil(tile);
    let mut tile_lists: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (e_idx, e) in entries.iter().enumerate() {
        let r = e.splat.radius;
        let x0 = ((e.splat.mean.x - r).floor().max(0.0) as usize).min(w - 1) / tile;
        let x1 = ((e.splat.mean.x + r).ceil().max(0.0) as usize).min(w - 1) / tile;
        let y0 = ((e.splat.mean.y - r).floor().max(0.0) as usize).min(h - 1) / tile;
        let y1 = ((e.splat.mean.y + r).ceil().max(0.0) as usize).min(h - 1) / tile;
        for ty in y0..=y1 {
            for tx in x0..=x1 {
                tile_lists[ty * tiles_x + tx].push(e_idx as u32);
            }
        }
    }

    let hot: Vec<HotSplat> = entries.iter().map(HotSplat::from_entry).collect();
    let mut image = Array3::<f64>::zeros((h, w, 3));
    let mut transmittance = Array2::<f64>::ones((h, w));
    let total_tiles = tiles_x * tiles_y;
    let chunk_results: Vec<Vec<(usize, Vec<f64>, Vec<f64>)>> = tile_ranges(total_tiles)
        .into_par_iter()
        .map(|(start, end)| {
            let mut out = Vec::with_capacity(end - start);
            for t_idx in start..end {
                let (tx, ty) = (t_idx % tiles_x, t_idx / tiles_x);
                let x_lo = tx * tile;
                let x_hi = ((tx + 1) * tile).min(w);
                let y_lo = ty * tile;
                let y_hi = ((ty + 1) * tile).min(h);
                let tw = x_hi - x_lo;
                let th = y_hi - y_lo;
                let mut colors = vec![0.0f64; tw * th * 3];
                let mut trans = vec![1.0f64; tw * th];
                let list = &tile_lists[t_idx];
                for py in y_lo..y_hi {
                    let pyc = py as f64 + 0.5;
                    for px in x_lo..x_hi {
                        let pxc = px as f64 + 0.5;
                        let local = (py - y_lo) * tw + (px - x_lo);
                        let mut t_cur = 1.0f64;
                        let mut rgb = [0.0f64; 3];
                        for &e_idx in list {
                            let s = &hot[e_idx as usize];
                            let Some(g_weight) = s.weight_at(pxc, pyc) else {
                                continue;
                            };
                            let alpha = (s.opacity * g_weight).min(cfg.alpha_clamp);
                            if alpha <= 0.0 {
                                continue;
                            }
                            for c in 0..3 {
                                rgb[c] += s.color[c] * alpha * t_cur;
                            }
                            t_cur *= 1.0 - alpha;
                            if t_cur < cfg.early_stop_transmittance {
                                break;
                            }
                        }
                        for c in 0..3 {
                            colors[local * 3 + c] = rgb[c] + background[c] * t_cur;
                        }
                        trans[local] = t_cur;
                    }
                }
                out.push((t_idx, colors, trans));
            }
            out
        })
        .collect();

    for chunk in chunk_results {
        for (t_idx, colors, trans) in chunk {
            let (tx, ty) = (t_idx % tiles_x, t_idx / tiles_x);
            let x_lo = tx * tile;
            let x_hi = ((tx + 1) * tile).min(w);
            let y_lo = ty * tile;
            let y_hi = ((ty + 1) * tile).min(h);
            let tw = x_hi - x_lo;
            for py in y_lo..y_hi {
                for px in x_lo..x_hi {
                    let local = (py - y_lo) * tw + (px - x_lo);
                    for c in 0..3 {
                        image[[py, px, c]] = colors[local * 3 + c];
                    }
                    transmittance[[py, px]] = trans[local];
                }
            }
        }
    }

    let alpha = transmittance.mapv(|t| 1.0 - t);
    RenderOutput {
        image,
        alpha,
        saved: RenderSaved {
            entries,
            hot,
            tile_lists,
            tiles_x,
            tiles_y,
            transmittance,
            skipped_singular: skipped,
            n_inputs: n,
        },
    }
}

struct TileGrads {
    d_color: Vec<[f64; 3]>,
    d_opacity: Vec<f64>,
    d_mean: Vec<Vector2<f64>>,
    d_conic: Vec<Matrix2<f64>>,
}

impl TileGrads {
    fn zeros(n_entries: usize) -> Self {
        TileGrads {
            d_color: vec![[0.0; 3]; n_entries],
            d_opacity: vec![0.0; n_entries],
            d_mean: vec![Vector2::zeros(); n_entries],
            d_conic: vec![Matrix2::zeros(); n_entries],
        }
    }

    fn merge(&mut self, other: &TileGrads) {
        for i in 0..self.d_color.len() {
            for c in 0..3 {
                self.d_color[i][c] += other.d_color[i][c];
            }
            self.d_opacity[i] += other.d_opacity[i];
            self.d_mean[i] += other.d_mean[i];
            self.d_conic[i] += other.d_conic[i];
        }
    }
}

/// Analytic adjoint of [`render`]. Replays each pixel's compositing in the
/// retained order, walks it back to front, and chains screen-space
/// gradients through the projection.
pub fn render_backward(
    saved: &RenderSaved,
    inputs: &RenderInputs,
    camera: &Camera,
    background: [f64; 3],
    cfg: &RasterConfig,
    upstream: &ArrayView3<f64>,
) -> InputGrads {
    assert_eq!(
        saved.n_inputs,
        inputs.len(),
        "retained state does not match the cloud it was rendered from"
    );
    let (w, h) = (camera.width, camera.height);
    assert_eq!(upstream.shape(), &[h, w, 3], "upstream gradient shape");
    let tile = cfg.tile_size.max(1);
    let n_entries = saved.entries.len();
    let total_tiles = saved.tiles_x * saved.tiles_y;

    let chunk_grads: Vec<TileGrads> = tile_ranges(total_tiles)
        .into_par_iter()
        .map(|(start, end)| {
            let mut acc = TileGrads::zeros(n_entries);
            let mut scratch: Vec<(u32, f64, f64, f64)> = Vec::with_capacity(64);
            for t_idx in start..end {
                let (tx, ty) = (t_idx % saved.tiles_x, t_idx / saved.tiles_x);
                let x_lo = tx * tile;
                let x_hi = ((tx + 1) * tile).min(w);
                let y_lo = ty * tile;
                let y_hi = ((ty + 1) * tile).min(h);
                let list = &saved.tile_lists[t_idx];
                if list.is_empty() {
                    continue;
                }
                for py in y_lo..y_hi {
                    let pyc = py as f64 + 0.5;
                    for px in x_lo..x_hi {
                        let g_pix = [
                            upstream[[py, px, 0]],
                            upstream[[py, px, 1]],
                            upstream[[py, px, 2]],
                        ];
                        if g_pix == [0.0; 3] {
                            continue;
                        }
                        let pxc = px as f64 + 0.5;
                        // replay forward to recover (alpha, T, weight) triples
                        scratch.clear();
                        let mut t_cur = 1.0f64;
                        for &e_idx in list {
                            let s = &saved.hot[e_idx as usize];
                            let Some(g_weight) = s.weight_at(pxc, pyc) else {
                                continue;
                            };
                            let alpha = (s.opacity * g_weight).min(cfg.alpha_clamp);
                            if alpha <= 0.0 {
                                continue;
                            }
                            scratch.push((e_idx, alpha, t_cur, g_weight));
                            t_cur *= 1.0 - alpha;
                            if t_cur < cfg.early_stop_transmittance {
                                break;
                            }
                        }
                        debug_assert_eq!(t_cur, saved.transmittance[[py, px]]);
                        // walk back to front, maintaining the color still to
                        // be composited behind the current splat
                        let mut remaining =
                            [background[0] * t_cur, background[1] * t_cur, background[2] * t_cur];
                        for &(e_idx, alpha, t_k, g_weight) in scratch.iter().rev() {
                            let s = &saved.hot[e_idx as usize];
                            let mut d_alpha = 0.0;
                            for c in 0..3 {
                                acc.d_color[e_idx as usize][c] += g_pix[c] * alpha * t_k;
                                d_alpha +=
                                    g_pix[c] * (s.color[c] * t_k - remaining[c] / (1.0 - alpha));
                                remaining[c] += s.color[c] * alpha * t_k;
                            }
                            // alpha = min(opacity * G, clamp); zero gradient at the clamp
                            if s.opacity * g_weight < cfg.alpha_clamp {
                                acc.d_opacity[e_idx as usize] += d_alpha * g_weight;
                                let d_power = d_alpha * s.opacity * g_weight;
                                // power = -1/2 d^T A d with A = conic
                                let dx = pxc - s.mx;
                                let dy = pyc - s.my;
                                let adx = s.c00 * dx + s.c01 * dy;
                                let ady = s.c01 * dx + s.c11 * dy;
                                acc.d_mean[e_idx as usize] += Vector2::new(
                                    d_power * adx,
                                    d_power * ady,
                                );
                                let half = -0.5 * d_power;
                                acc.d_conic[e_idx as usize] += Matrix2::new(
                                    half * dx * dx,
                                    half * dx * dy,
                                    half * dy * dx,
                                    half * dy * dy,
                                );
                            }
                        }
                    }
                }
            }
            acc
        })
        .collect();

    let mut total = TileGrads::zeros(n_entries);
    for chunk in &chunk_grads {
        total.merge(chunk);
    }

    let n = inputs.len();
    let mut d_centers = Array2::<f64>::zeros((n, 3));
    let mut d_cov3 = Array3::<f64>::zeros((n, 3, 3));
    let mut d_opacities = Array1::<f64>::zeros(n);
    let mut d_colors = Array2::<f64>::zeros((n, 3));
    for (e_idx, e) in saved.entries.iter().enumerate() {
        let i = e.gaussian;
        for c in 0..3 {
            d_colors[[i, c]] += total.d_color[e_idx][c];
        }
        d_opacities[i] += total.d_opacity[e_idx];
        // d_cov2 from d_conic: A = C^-1  =>  dC = -A^T dA A^T = -A dA A
        let d_conic = total.d_conic[e_idx];
        if d_conic == Matrix2::zeros() && total.d_mean[e_idx] == Vector2::zeros() {
            continue;
        }
        let a = e.splat.conic;
        let d_cov2 = -(a * d_conic * a);
        let cov3 = inputs.cov(i);
        let (d_center, d_cov) = project_gaussian_backward(
            &cov3,
            camera,
            &e.splat,
            &total.d_mean[e_idx],
            &d_cov2,
        );
        for r in 0..3 {
            d_centers[[i, r]] += d_center[r];
            for c in 0..3 {
                d_cov3[[i, r, c]] += d_cov[(r, c)];
            }
        }
    }
    // inputs.cov symmetrizes; route the symmetrized gradient accordingly
    for i in 0..n {
        let mut m = Matrix3::zeros();
        for r in 0..3 {
            for c in 0..3 {
                m[(r, c)] = d_cov3[[i, r, c]];
            }
        }
        let sym = 0.5 * (m + m.transpose());
        for r in 0..3 {
            for c in 0..3 {
                d_cov3[[i, r, c]] = sym[(r, c)];
            }
        }
    }

    InputGrads {
        d_centers,
        d_cov3,
        d_opacities,
        d_colors,
    }
}
