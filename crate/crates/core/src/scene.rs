//! Canonical static Gaussian cloud: storage, activation conventions,
//! covariance construction, view-dependent color from spherical harmonics,
//! and simplified canonical fitting (fixed count, no densification).
//!
//! Activations keep the invariant ranges under unconstrained optimization:
//! scales live as logs (`s = exp(log_scale) > 0`) and opacities as logits
//! (`sigma = logistic(logit) in (0,1)`).

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use ndarray::{Array1, Array2, Array3, ArrayD, IxDyn};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::autodiff::{concat, load_container, save_container, Adam, Parameter, Tape, Tensor};
use crate::geometry::{quat_to_matrix, tape as gtape, Quat};
use crate::losses::{perceptual_on_tape, PerceptualConfig};
use crate::render::{render_on_tape, Camera, RasterConfig};

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
const SH_C1: f64 = 0.488_602_511_902_919_9;
const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("canonical fitting needs at least one view")]
    NoViews,
    #[error("spherical harmonics degree must be 0..=3, got {0}")]
    BadShDegree(usize),
    #[error("checkpoint error: {0}")]
    Checkpoint(#[from] crate::autodiff::CheckpointError),
    #[error("checkpoint is missing cloud entry `{0}`")]
    MissingEntry(&'static str),
}

/// Real spherical harmonics basis values for a unit direction.
pub fn sh_basis(degree: usize, dir: &Vector3<f64>) -> Vec<f64> {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let mut out = Vec::with_capacity((degree + 1) * (degree + 1));
    out.push(SH_C0);
    if degree >= 1 {
        out.push(-SH_C1 * y);
        out.push(SH_C1 * z);
        out.push(-SH_C1 * x);
    }
    if degree >= 2 {
        out.push(SH_C2[0] * x * y);
        out.push(SH_C2[1] * y * z);
        out.push(SH_C2[2] * (2.0 * z * z - x * x - y * y));
        out.push(SH_C2[3] * x * z);
        out.push(SH_C2[4] * (x * x - y * y));
    }
    if degree >= 3 {
        out.push(SH_C3[0] * y * (3.0 * x * x - y * y));
        out.push(SH_C3[1] * x * y * z);
        out.push(SH_C3[2] * y * (4.0 * z * z - x * x - y * y));
        out.push(SH_C3[3] * z * (2.0 * z * z - 3.0 * x * x - 3.0 * y * y));
        out.push(SH_C3[4] * x * (4.0 * z * z - x * x - y * y));
        out.push(SH_C3[5] * z * (x * x - y * y));
        out.push(SH_C3[6] * x * (x * x - y * y));
    }
    out
}

/// View-dependent color: basis-weighted coefficients shifted by +0.5 and
/// clamped to [0, 1].
pub fn eval_sh_color(coeffs: &Array2<f64>, degree: usize, dir: &Vector3<f64>) -> [f64; 3] {
    let basis = sh_basis(degree, dir);
    debug_assert_eq!(coeffs.shape()[0], basis.len());
    let mut rgb = [0.0; 3];
    for (k, &b) in basis.iter().enumerate() {
        for (c, v) in rgb.iter_mut().enumerate() {
            *v += b * coeffs[[k, c]];
        }
    }
    rgb.map(|v| (v + 0.5).clamp(0.0, 1.0))
}

/// Tape version of [`eval_sh_color`] over the whole cloud:
/// `sh [N,K,3]`, unit `dirs [N,3]` -> colors `[N,3]`.
pub fn sh_colors_on_tape(tape: &Tape, sh: &Tensor, dirs: &Tensor, degree: usize) -> Tensor {
    let n = dirs.shape()[0];
    let x = dirs.slice_axis(1, 0, 1);
    let y = dirs.slice_axis(1, 1, 2);
    let z = dirs.slice_axis(1, 2, 3);
    let mut basis: Vec<Tensor> = Vec::with_capacity((degree + 1) * (degree + 1));
    basis.push(tape.constant(ArrayD::from_elem(IxDyn(&[n, 1]), SH_C0)));
    if degree >= 1 {
        basis.push(y.scale(-SH_C1));
        basis.push(z.scale(SH_C1));
        basis.push(x.scale(-SH_C1));
    }
    if degree >= 2 {
        let xx = &x * &x;
        let yy = &y * &y;
        let zz = &z * &z;
        basis.push((&x * &y).scale(SH_C2[0]));
        basis.push((&y * &z).scale(SH_C2[1]));
        basis.push((&(&zz.scale(2.0) - &xx) - &yy).scale(SH_C2[2]));
        basis.push((&x * &z).scale(SH_C2[3]));
        basis.push((&xx - &yy).scale(SH_C2[4]));
    }
    if degree >= 3 {
        let xx = &x * &x;
        let yy = &y * &y;
        let zz = &z * &z;
        basis.push((&y * &(&xx.scale(3.0) - &yy)).scale(SH_C3[0]));
        basis.push((&(&x * &y) * &z).scale(SH_C3[1]));
        basis.push((&y * &(&(&zz.scale(4.0) - &xx) - &yy)).scale(SH_C3[2]));
        basis.push(
            (&z * &(&(&zz.scale(2.0) - &xx.scale(3.0)) - &yy.scale(3.0))).scale(SH_C3[3]),
        );
        basis.push((&x * &(&(&zz.scale(4.0) - &xx) - &yy)).scale(SH_C3[4]));
        basis.push((&z * &(&xx - &yy)).scale(SH_C3[5]));
        basis.push((&x * &(&xx - &yy)).scale(SH_C3[6]));
    }
    let k = basis.len();
    let b = concat(&basis, 1).reshape(&[n, 1, k]);
    b.bmm(sh).reshape(&[n, 3]).add_scalar(0.5).clamp_t(0.0, 1.0)
}

/// `Sigma = R diag(exp(log_scale))^2 R^T` for one Gaussian.
pub fn build_covariance(q: &Quat, log_scale: &[f64; 3]) -> Matrix3<f64> {
    let r = quat_to_matrix(q).expect("nonzero quaternion");
    let d = Matrix3::from_diagonal(&Vector3::new(
        (2.0 * log_scale[0]).exp(),
        (2.0 * log_scale[1]).exp(),
        (2.0 * log_scale[2]).exp(),
    ));
    r * d * r.transpose()
}

/// Tape version over the cloud: rotation matrices `[N,3,3]` and
/// `log_scales [N,3]` -> covariances `[N,3,3]`.
pub fn cov3d_on_tape(tape: &Tape, rotations: &Tensor, log_scales: &Tensor) -> Tensor {
    let n = log_scales.shape()[0];
    let e = log_scales.scale(2.0).exp().reshape(&[n, 3, 1]);
    let eye = tape.constant(
        ArrayD::from_shape_vec(
            IxDyn(&[3, 3]),
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        )
        .expect("3x3"),
    );
    let diag = &e * &eye;
    rotations.bmm(&diag).bmm(&rotations.transpose_last2())
}

/// Cloud attribute tensors recorded on a tape (trainable or constant).
pub struct CloudTensors {
    pub centers: Tensor,
    pub rotations_raw: Tensor,
    pub log_scales: Tensor,
    pub opacity_logits: Tensor,
    pub sh_coeffs: Tensor,
}

/// Canonical set of N Gaussian primitives.
pub struct GaussianCloud {
    pub centers: Parameter,
    pub rotations: Parameter,
    pub log_scales: Parameter,
    pub opacity_logits: Parameter,
    pub sh_coeffs: Parameter,
    pub sh_degree: usize,
}

impl GaussianCloud {
    pub fn basis_count(&self) -> usize {
        (self.sh_degree + 1) * (self.sh_degree + 1)
    }

    pub fn len(&self) -> usize {
        self.centers.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn params(&self) -> Vec<Parameter> {
        vec![
            self.centers.clone(),
            self.rotations.clone(),
            self.log_scales.clone(),
            self.opacity_logits.clone(),
            self.sh_coeffs.clone(),
        ]
    }

    /// Initialize from a point set: identity rotations, isotropic scales at
    /// half the mean nearest-neighbor distance, opacity logit 0, SH with the
    /// DC band matching the point colors.
    pub fn init_from_points(
        points: &[Vector3<f64>],
        colors: &[[f64; 3]],
        sh_degree: usize,
    ) -> Result<GaussianCloud, SceneError> {
        if sh_degree > 3 {
            return Err(SceneError::BadShDegree(sh_degree));
        }
        let n = points.len();
        assert_eq!(n, colors.len(), "one color per point");
        let mut centers = Array2::<f64>::zeros((n, 3));
        for (i, p) in points.iter().enumerate() {
            centers[[i, 0]] = p.x;
            centers[[i, 1]] = p.y;
            centers[[i, 2]] = p.z;
        }
        let mut mean_nn = 0.0;
        for (i, p) in points.iter().enumerate() {
            let mut best = f64::INFINITY;
            for (j, q) in points.iter().enumerate() {
                if i != j {
                    best = best.min((p - q).norm_squared());
                }
            }
            mean_nn += best.sqrt();
        }
        mean_nn /= n.max(1) as f64;
        let log_scale = (0.5 * mean_nn).max(1e-6).ln();

        let mut rotations = Array2::<f64>::zeros((n, 4));
        rotations.column_mut(0).fill(1.0);
        let k = (sh_degree + 1) * (sh_degree + 1);
        let mut sh = Array3::<f64>::zeros((n, k, 3));
        for (i, c) in colors.iter().enumerate() {
            for ch in 0..3 {
                sh[[i, 0, ch]] = (c[ch] - 0.5) / SH_C0;
            }
        }
        Ok(GaussianCloud {
            centers: Parameter::new("centers", centers.into_dyn()),
            rotations: Parameter::new("rotations", rotations.into_dyn()),
            log_scales: Parameter::new(
                "log_scales",
                Array2::<f64>::from_elem((n, 3), log_scale).into_dyn(),
            ),
            opacity_logits: Parameter::new("opacity_logits", Array1::<f64>::zeros(n).into_dyn()),
            sh_coeffs: Parameter::new("sh_coeffs", sh.into_dyn()),
            sh_degree,
        })
    }

    pub fn as_params(&self, tape: &Tape) -> CloudTensors {
        CloudTensors {
            centers: tape.param(&self.centers),
            rotations_raw: tape.param(&self.rotations),
            log_scales: tape.param(&self.log_scales),
            opacity_logits: tape.param(&self.opacity_logits),
            sh_coeffs: tape.param(&self.sh_coeffs),
        }
    }

    /// Constant (frozen) views of the attributes: gradients never reach the
    /// canonical cloud through these.
    pub fn as_constants(&self, tape: &Tape) -> CloudTensors {
        CloudTensors {
            centers: tape.constant(self.centers.value()),
            rotations_raw: tape.constant(self.rotations.value()),
            log_scales: tape.constant(self.log_scales.value()),
            opacity_logits: tape.constant(self.opacity_logits.value()),
            sh_coeffs: tape.constant(self.sh_coeffs.value()),
        }
    }

    /// Bounding-box diagonal of the centers.
    pub fn extent(&self) -> f64 {
        let c = self.centers.value();
        if c.len() == 0 {
            return 0.0;
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for row in c.rows() {
            for d in 0..3 {
                lo[d] = lo[d].min(row[d]);
                hi[d] = hi[d].max(row[d]);
            }
        }
        ((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2) + (hi[2] - lo[2]).powi(2)).sqrt()
    }

    /// SHA-256 over all attribute bytes (little-endian), in field order.
    /// The freeze contract compares this before and after deformation
    /// training.
    pub fn freeze_hash(&self) -> [u8; 32] {
        let mut bytes = Vec::new();
        for p in self.params() {
            p.extend_le_bytes(&mut bytes);
        }
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        hasher.finalize().into()
    }

    /// Persist to the checkpoint container. Rotation rows are sign-
    /// canonicalized (w >= 0) on write only.
    pub fn save(&self, path: &Path) -> Result<(), SceneError> {
        let mut rotations = self.rotations.value();
        for mut row in rotations.rows_mut() {
            if row[0] < 0.0 {
                for v in row.iter_mut() {
                    *v = -*v;
                }
            }
        }
        let entries = vec![
            ("centers".to_string(), self.centers.value()),
            ("rotations".to_string(), rotations),
            ("log_scales".to_string(), self.log_scales.value()),
            ("opacity_logits".to_string(), self.opacity_logits.value()),
            ("sh_coeffs".to_string(), self.sh_coeffs.value()),
            (
                "meta.sh_degree".to_string(),
                ArrayD::from_elem(IxDyn(&[]), self.sh_degree as f64),
            ),
            (
                "meta.count".to_string(),
                ArrayD::from_elem(IxDyn(&[]), self.len() as f64),
            ),
        ];
        save_container(path, &entries)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<GaussianCloud, SceneError> {
        let entries = load_container(path)?;
        let get = |name: &'static str| -> Result<ArrayD<f64>, SceneError> {
            entries
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, a)| a.clone())
                .ok_or(SceneError::MissingEntry(name))
        };
        let sh_degree = get("meta.sh_degree")?.iter().next().copied().unwrap_or(0.0) as usize;
        Ok(GaussianCloud {
            centers: Parameter::new("centers", get("centers")?),
            rotations: Parameter::new("rotations", get("rotations")?),
            log_scales: Parameter::new("log_scales", get("log_scales")?),
            opacity_logits: Parameter::new("opacity_logits", get("opacity_logits")?),
            sh_coeffs: Parameter::new("sh_coeffs", get("sh_coeffs")?),
            sh_degree,
        })
    }
}

/// Canonical fitting configuration. Center learning rate is scaled by the
/// cloud extent at call time.
#[derive(Debug, Clone)]
pub struct FitConfig {
    pub iterations: usize,
    pub lr_centers: f64,
    pub lr_rotations: f64,
    pub lr_log_scales: f64,
    pub lr_opacities: f64,
    pub lr_sh: f64,
    pub dssim_mix: f64,
    pub background: [f64; 3],
    pub raster: RasterConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            iterations: 2000,
            lr_centers: 1.6e-4,
            lr_rotations: 1e-3,
            lr_log_scales: 5e-3,
            lr_opacities: 5e-2,
            lr_sh: 2.5e-3,
            dssim_mix: 0.2,
            background: [0.0; 3],
            raster: RasterConfig::default(),
        }
    }
}

pub struct FitHistory {
    pub losses: Vec<f64>,
}

/// One full differentiable canonical render of the cloud from `camera`.
pub fn render_cloud_on_tape(
    tape: &Tape,
    tensors: &CloudTensors,
    sh_degree: usize,
    camera: &Camera,
    background: [f64; 3],
    raster: &RasterConfig,
) -> Tensor {
    let quats = gtape::normalize_rows(&tensors.rotations_raw).expect("nonzero quaternions");
    let rot_mats = gtape::quats_to_matrices(&quats);
    let cov3 = cov3d_on_tape(tape, &rot_mats, &tensors.log_scales);
    let opac = tensors.opacity_logits.sigmoid();
    let campos = camera.position();
    let campos_t = tape.constant(
        ArrayD::from_shape_vec(IxDyn(&[1, 3]), vec![campos.x, campos.y, campos.z]).expect("1x3"),
    );
    let dirs = gtape::normalize_rows(&(&tensors.centers - &campos_t))
        .expect("center coincides with camera position");
    let colors = sh_colors_on_tape(tape, &tensors.sh_coeffs, &dirs, sh_degree);
    render_on_tape(
        tape,
        &tensors.centers,
        &cov3,
        &opac,
        &colors,
        camera,
        background,
        raster,
    )
}

/// Optimize all Gaussian attributes against the photometric loss over the
/// given views (round-robin). The Gaussian count never changes.
pub fn fit_canonical(
    cloud: &GaussianCloud,
    views: &[(Camera, Array3<f64>)],
    cfg: &FitConfig,
) -> Result<FitHistory, SceneError> {
    if views.is_empty() {
        return Err(SceneError::NoViews);
    }
    let extent = cloud.extent().max(1e-6);
    let mut opts = vec![
        Adam::new(vec![cloud.centers.clone()], cfg.lr_centers * extent),
        Adam::new(vec![cloud.rotations.clone()], cfg.lr_rotations),
        Adam::new(vec![cloud.log_scales.clone()], cfg.lr_log_scales),
        Adam::new(vec![cloud.opacity_logits.clone()], cfg.lr_opacities),
        Adam::new(vec![cloud.sh_coeffs.clone()], cfg.lr_sh),
    ];
    let perceptual_cfg = PerceptualConfig {
        dssim_mix: cfg.dssim_mix,
        ..Default::default()
    };
    let mut losses = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let (camera, target) = &views[it % views.len()];
        let tape = Tape::new();
        let tensors = cloud.as_params(&tape);
        let image = render_cloud_on_tape(
            &tape,
            &tensors,
            cloud.sh_degree,
            camera,
            cfg.background,
            &cfg.raster,
        );
        let loss = perceptual_on_tape(&tape, &image, &target.view().into_dyn(), &perceptual_cfg)
            .expect("render and target dimensions agree");
        losses.push(loss.scalar_value());
        tape.backward(&loss).expect("scalar loss");
        for opt in &mut opts {
            opt.step();
            opt.zero_grad();
        }
    }
    Ok(FitHistory { losses })
}
