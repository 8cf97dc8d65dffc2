//! Skeleton-driven deformation field.
//!
//! A time-conditioned MLP predicts per-joint local quaternions and a root
//! translation; forward kinematics propagates them to global bone
//! transforms; Gaussians follow by linear blend skinning with weights from
//! an RBF kernel over cached canonical point-to-bone distances, modulated
//! by a learnable correction field; a pose-conditioned detail network adds
//! per-Gaussian offsets. Only the pose network depends on time, so
//! interpolation at unseen times reuses the skinning and detail fields
//! unchanged.

use nalgebra::Vector3;
use ndarray::{Array1, Array2, Array3, ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::autodiff::{concat, Parameter, Tape, Tensor};
use crate::geometry::{
    point_to_segment_distance, quat_to_matrix, tape as gtape, PositionalEncodingConfig, Quat,
};
use crate::nn::Mlp;
use crate::scene::{sh_colors_on_tape, GaussianCloud};
use crate::skeleton::{JointPoseSample, SkeletonGraph};

#[derive(Debug, Error)]
pub enum DeformError {
    #[error("forward kinematics produced a non-finite transform at joint {0}")]
    NonFiniteJoint(usize),
    #[error("pose network emitted a zero quaternion for some joint")]
    ZeroQuaternion,
    #[error("checkpoint error: {0}")]
    Checkpoint(#[from] crate::autodiff::CheckpointError),
    #[error("model checkpoint is missing entry `{0}`")]
    MissingEntry(String),
    #[error("skeleton in checkpoint is invalid: {0}")]
    BadSkeleton(String),
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DeformConfig {
    pub pose_hidden: Vec<usize>,
    pub phi_hidden: Vec<usize>,
    pub psi_hidden: Vec<usize>,
    pub time_frequencies: usize,
    pub position_frequencies: usize,
    pub radius_floor: f64,
    /// Initial influence radius as a fraction of each bone's rest length.
    pub radius_init_scale: f64,
}

impl Default for DeformConfig {
    fn default() -> Self {
        DeformConfig {
            pose_hidden: vec![128, 128, 128, 128],
            phi_hidden: vec![64, 64, 64],
            psi_hidden: vec![128, 128, 128],
            time_frequencies: 6,
            position_frequencies: 10,
            radius_floor: 1e-3,
            radius_init_scale: 0.25,
        }
    }
}

// ── pose network ─────────────────────────────────────────────────────

/// Maps encoded time to `4J` raw quaternion components plus the root
/// translation. The output head starts as the constant identity pose.
pub struct PoseNetwork {
    pub mlp: Mlp,
    pub time_encoding: PositionalEncodingConfig,
    pub joint_count: usize,
}

impl PoseNetwork {
    pub fn new(
        joint_count: usize,
        hidden: &[usize],
        time_frequencies: usize,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        let time_encoding = PositionalEncodingConfig::new(time_frequencies, true);
        let mut dims = vec![time_encoding.output_dim(1)];
        dims.extend_from_slice(hidden);
        dims.push(4 * joint_count + 3);
        let mlp = Mlp::new("theta", &dims, rng);
        let mut bias = Vec::with_capacity(4 * joint_count + 3);
        for _ in 0..joint_count {
            bias.extend_from_slice(&[1.0, 0.0, 0.0, 0.0]);
        }
        bias.extend_from_slice(&[0.0, 0.0, 0.0]);
        mlp.init_output_constant(&bias);
        PoseNetwork {
            mlp,
            time_encoding,
            joint_count,
        }
    }

    /// Raw outputs `[len(times), 4J + 3]` with no clamping or
    /// normalization (motion regularization operates on these).
    pub fn raw_outputs(&self, tape: &Tape, times: &[f64]) -> Tensor {
        let dim = self.time_encoding.output_dim(1);
        let mut rows = Vec::with_capacity(times.len() * dim);
        for &t in times {
            rows.extend(self.time_encoding.encode(&[t]));
        }
        let x = tape.constant(
            ArrayD::from_shape_vec(IxDyn(&[times.len(), dim]), rows).expect("encoded rows"),
        );
        self.mlp.forward(tape, &x)
    }

    /// Normalized joint quaternions `[J, 4]` and root translation `[3, 1]`
    /// at `t`. Out-of-range times are clamped with a logged warning.
    pub fn predict(&self, tape: &Tape, t: f64) -> Result<(Tensor, Tensor), DeformError> {
        let t = if (0.0..=1.0).contains(&t) {
            t
        } else {
            log::warn!("predict_pose: t = {t} outside [0, 1]; clamping");
            t.clamp(0.0, 1.0)
        };
        let raw = self.raw_outputs(tape, &[t]);
        let j = self.joint_count;
        let quats_raw = raw.slice_axis(1, 0, 4 * j).reshape(&[j, 4]);
        let quats = gtape::normalize_rows(&quats_raw).map_err(|_| DeformError::ZeroQuaternion)?;
        let trans = raw.slice_axis(1, 4 * j, 4 * j + 3).reshape(&[3, 1]);
        Ok((quats, trans))
    }

    /// Plain pose sample for inference and evaluation.
    pub fn predict_sample(&self, t: f64) -> Result<JointPoseSample, DeformError> {
        let tape = Tape::eval();
        let (quats, trans) = self.predict(&tape, t)?;
        let q = quats.value();
        let tr = trans.value();
        let local_rotations = (0..self.joint_count)
            .map(|j| Quat::new(q[[j, 0]], q[[j, 1]], q[[j, 2]], q[[j, 3]]))
            .collect();
        Ok(JointPoseSample {
            local_rotations,
            root_translation: Vector3::new(tr[[0, 0]], tr[[1, 0]], tr[[2, 0]]),
            time: t.clamp(0.0, 1.0),
        })
    }

    pub fn params(&self) -> Vec<Parameter> {
        self.mlp.params()
    }
}

// ── forward kinematics on the tape ───────────────────────────────────

/// Per-joint global transforms as tape tensors.
pub struct FkTensors {
    /// `[3, 3]` per joint.
    pub joint_rotations: Vec<Tensor>,
    /// `[3, 1]` per joint.
    pub joint_translations: Vec<Tensor>,
}

impl FkTensors {
    /// Bone rotations flattened row-major: `[B, 9]`.
    pub fn bone_rotations_flat(&self, skeleton: &SkeletonGraph) -> Tensor {
        let rows: Vec<Tensor> = skeleton
            .bones()
            .iter()
            .map(|b| self.joint_rotations[b.child_joint].reshape(&[1, 9]))
            .collect();
        concat(&rows, 0)
    }

    /// Bone translations: `[B, 3]`.
    pub fn bone_translations(&self, skeleton: &SkeletonGraph) -> Tensor {
        let rows: Vec<Tensor> = skeleton
            .bones()
            .iter()
            .map(|b| self.joint_translations[b.child_joint].reshape(&[1, 3]))
            .collect();
        concat(&rows, 0)
    }
}

/// Differentiable forward kinematics: local rotations pivot about their
/// joint's rest position; globals compose parent-first down the tree.
pub fn forward_kinematics_on_tape(
    tape: &Tape,
    skeleton: &SkeletonGraph,
    quats_normalized: &Tensor,
    root_translation: &Tensor,
) -> Result<FkTensors, DeformError> {
    let j = skeleton.joint_count();
    let local_mats = gtape::quats_to_matrices(quats_normalized);
    let mut joint_rotations: Vec<Option<Tensor>> = vec![None; j];
    let mut joint_translations: Vec<Option<Tensor>> = vec![None; j];
    for &joint in skeleton.topo_order() {
        let local = local_mats.slice_axis(0, joint, joint + 1).reshape(&[3, 3]);
        let rest = skeleton.rest_position(joint);
        let rest_t = tape.constant(
            ArrayD::from_shape_vec(IxDyn(&[3, 1]), vec![rest.x, rest.y, rest.z]).expect("3x1"),
        );
        // pivot form: x -> L x + (rest - L rest)
        let pivot_offset = &rest_t - &local.matmul(&rest_t);
        match skeleton.parent(joint) {
            None => {
                joint_rotations[joint] = Some(local);
                joint_translations[joint] = Some(&pivot_offset + root_translation);
            }
            Some(parent) => {
                let pr = joint_rotations[parent].clone().expect("topo order");
                let pt = joint_translations[parent].clone().expect("topo order");
                joint_rotations[joint] = Some(pr.matmul(&local));
                joint_translations[joint] = Some(&pr.matmul(&pivot_offset) + &pt);
            }
        }
    }
    let joint_rotations: Vec<Tensor> = joint_rotations.into_iter().map(Option::unwrap).collect();
    let joint_translations: Vec<Tensor> =
        joint_translations.into_iter().map(Option::unwrap).collect();
    for (idx, (r, t)) in joint_rotations
        .iter()
        .zip(joint_translations.iter())
        .enumerate()
    {
        let finite = r.value_ref().iter().all(|v| v.is_finite())
            && t.value_ref().iter().all(|v| v.is_finite());
        if !finite {
            return Err(DeformError::NonFiniteJoint(idx));
        }
    }
    Ok(FkTensors {
        joint_rotations,
        joint_translations,
    })
}

// ── skinning ─────────────────────────────────────────────────────────

/// Learnable per-bone radii plus the multiplicative correction field.
/// Canonical distances and encoded centers are cached once; the canonical
/// cloud is frozen during deformation training.
pub struct SkinningModel {
    pub log_radii: Parameter,
    pub phi: Mlp,
    distance_sq: Array2<f64>,
    encoded_centers: Array2<f64>,
}

impl SkinningModel {
    pub fn new(
        skeleton: &SkeletonGraph,
        canonical_centers: &Array2<f64>,
        hidden: &[usize],
        position_frequencies: usize,
        radius_floor: f64,
        radius_init_scale: f64,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        let n = canonical_centers.shape()[0];
        let b = skeleton.bone_count();
        let mut distance_sq = Array2::<f64>::zeros((n, b));
        for i in 0..n {
            let p = Vector3::new(
                canonical_centers[[i, 0]],
                canonical_centers[[i, 1]],
                canonical_centers[[i, 2]],
            );
            for (bi, _) in skeleton.bones().iter().enumerate() {
                let (a, bb) = skeleton.bone_rest_endpoints(bi);
                let (d, _) = point_to_segment_distance(&p, &a, &bb);
                distance_sq[[i, bi]] = d * d;
            }
        }
        let mut log_radii = Array1::<f64>::zeros(b);
        for (bi, _) in skeleton.bones().iter().enumerate() {
            let (a, bb) = skeleton.bone_rest_endpoints(bi);
            let r = (radius_init_scale * (bb - a).norm()).max(radius_floor);
            log_radii[bi] = r.ln();
        }
        let encoding = PositionalEncodingConfig::new(position_frequencies, true);
        let encoded_centers = encode_rows(canonical_centers, &encoding);
        let mut dims = vec![encoding.output_dim(3)];
        dims.extend_from_slice(hidden);
        dims.push(b);
        let phi = Mlp::new("phi", &dims, rng);
        // delta_w = exp(phi) starts at 1: pure RBF skinning at initialization
        phi.init_output_constant(&vec![0.0; b]);
        SkinningModel {
            log_radii: Parameter::new("log_radii", log_radii.into_dyn()),
            phi,
            distance_sq,
            encoded_centers,
        }
    }

    pub fn bone_count(&self) -> usize {
        self.distance_sq.shape()[1]
    }

    /// Normalized weights `[N, B]`: rows sum to 1.
    pub fn weights_on_tape(&self, tape: &Tape) -> Tensor {
        let d2 = tape.constant(self.distance_sq.clone().into_dyn());
        let log_radii = tape.param(&self.log_radii);
        let enc = tape.constant(self.encoded_centers.clone().into_dyn());
        let delta_w = self.phi.forward(tape, &enc).exp();
        normalized_rbf_weights(tape, &d2, &log_radii, &delta_w)
    }

    pub fn params(&self) -> (Parameter, Vec<Parameter>) {
        (self.log_radii.clone(), self.phi.params())
    }
}

/// `w_ij = dw_ij exp(-d_ij^2 / 2 r_j^2)`, normalized so every row sums
/// to 1. `distance_sq` is `[N, B]`, `log_radii` `[B]`, `delta_w` a
/// positive `[N, B]` correction. A fully underflowed row falls back to
/// uniform with a warning.
pub fn normalized_rbf_weights(
    tape: &Tape,
    distance_sq: &Tensor,
    log_radii: &Tensor,
    delta_w: &Tensor,
) -> Tensor {
    let r = log_radii.exp();
    let r2 = (&r * &r).scale(2.0);
    let kernel = (&distance_sq.neg_t() / &r2).exp();
    let w_hat = delta_w * &kernel;
    let sums = w_hat.sum_axis(1, true);
    let zero_rows: Vec<usize> = sums
        .value_ref()
        .iter()
        .enumerate()
        .filter_map(|(i, &s)| (s == 0.0).then_some(i))
        .collect();
    if zero_rows.is_empty() {
        &w_hat / &sums
    } else {
        log::warn!(
            "skinning: {} fully-underflowed weight rows; falling back to uniform",
            zero_rows.len()
        );
        let (n, b) = (distance_sq.shape()[0], distance_sq.shape()[1]);
        let mut mask = Array2::<f64>::zeros((n, 1));
        for &i in &zero_rows {
            mask[[i, 0]] = 1.0;
        }
        let mask_t = tape.constant(mask.into_dyn());
        let safe = &w_hat / &(&sums + &mask_t);
        &safe + &mask_t.scale(1.0 / b as f64)
    }
}

fn encode_rows(points: &Array2<f64>, cfg: &PositionalEncodingConfig) -> Array2<f64> {
    let n = points.shape()[0];
    let k = points.shape()[1];
    let dim = cfg.output_dim(k);
    let mut out = Array2::<f64>::zeros((n, dim));
    for i in 0..n {
        let row: Vec<f64> = (0..k).map(|c| points[[i, c]]).collect();
        for (j, v) in cfg.encode(&row).into_iter().enumerate() {
            out[[i, j]] = v;
        }
    }
    out
}

// ── detail deformation ───────────────────────────────────────────────

/// Pose-conditioned per-Gaussian offsets. Conditioning is the flattened
/// normalized local quaternions of all joints; the output layer starts at
/// zero so training begins from the undeformed state.
pub struct DetailNetwork {
    pub psi: Mlp,
    encoded_centers: Array2<f64>,
    joint_count: usize,
}

impl DetailNetwork {
    pub fn new(
        canonical_centers: &Array2<f64>,
        joint_count: usize,
        hidden: &[usize],
        position_frequencies: usize,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        let encoding = PositionalEncodingConfig::new(position_frequencies, true);
        let encoded_centers = encode_rows(canonical_centers, &encoding);
        let mut dims = vec![encoding.output_dim(3) + 4 * joint_count];
        dims.extend_from_slice(hidden);
        dims.push(3);
        let psi = Mlp::new("psi", &dims, rng);
        psi.init_output_constant(&[0.0, 0.0, 0.0]);
        DetailNetwork {
            psi,
            encoded_centers,
            joint_count,
        }
    }

    /// Offsets `[N, 3]` for the pose `[J, 4]`.
    pub fn offsets_on_tape(&self, tape: &Tape, pose_quats: &Tensor) -> Tensor {
        let n = self.encoded_centers.shape()[0];
        let enc = tape.constant(self.encoded_centers.clone().into_dyn());
        let pose_flat = pose_quats
            .reshape(&[1, 4 * self.joint_count])
            .broadcast_to(&[n, 4 * self.joint_count]);
        let x = concat(&[enc, pose_flat], 1);
        self.psi.forward(tape, &x)
    }

    pub fn params(&self) -> Vec<Parameter> {
        self.psi.params()
    }
}

// ── full model ───────────────────────────────────────────────────────

/// One deformed view of the cloud at a fixed time, as tape tensors.
pub struct DeformedFrame {
    /// `[N, 3]` deformed centers (LBS plus detail offsets).
    pub centers: Tensor,
    /// `[N, 3, 3]` blended rotations (weighted bone rotations times the
    /// canonical rotation).
    pub rotations: Tensor,
    /// `[N, 3, 3]` deformed covariances.
    pub cov3: Tensor,
    /// `[N, 3]` detail offsets (zero when the detail field is disabled).
    pub offsets: Tensor,
    /// `[N, B]` skinning weights used.
    pub weights: Tensor,
    /// `[J, 4]` normalized pose quaternions.
    pub pose_quats: Tensor,
    /// `[3, 1]` root translation.
    pub root_translation: Tensor,
}

/// Trainable bundle: pose network, skinning model, detail network, plus
/// frozen canonical attributes and the skeleton.
pub struct DeformationModel {
    pub pose: PoseNetwork,
    pub skinning: SkinningModel,
    pub detail: DetailNetwork,
    pub skeleton: SkeletonGraph,
    pub config: DeformConfig,
    // frozen canonical attributes
    canonical_centers: Array2<f64>,
    canonical_rotations: Array3<f64>,
    scale_diag: Array3<f64>,
    opacities: Array1<f64>,
    sh_coeffs: ArrayD<f64>,
    sh_degree: usize,
}

impl DeformationModel {
    pub fn new(
        cloud: &GaussianCloud,
        skeleton: SkeletonGraph,
        config: &DeformConfig,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let j = skeleton.joint_count();
        let centers = cloud
            .centers
            .value()
            .into_dimensionality::<ndarray::Ix2>()
            .expect("[N,3]");
        let pose = PoseNetwork::new(j, &config.pose_hidden, config.time_frequencies, &mut rng);
        let skinning = SkinningModel::new(
            &skeleton,
            &centers,
            &config.phi_hidden,
            config.position_frequencies,
            config.radius_floor,
            config.radius_init_scale,
            &mut rng,
        );
        let detail = DetailNetwork::new(
            &centers,
            j,
            &config.psi_hidden,
            config.position_frequencies,
            &mut rng,
        );

        let n = cloud.len();
        let quats = cloud.rotations.value();
        let mut canonical_rotations = Array3::<f64>::zeros((n, 3, 3));
        for i in 0..n {
            let q = Quat::new(
                quats[[i, 0]],
                quats[[i, 1]],
                quats[[i, 2]],
                quats[[i, 3]],
            );
            let m = quat_to_matrix(&q).expect("canonical quaternion");
            for r in 0..3 {
                for c in 0..3 {
                    canonical_rotations[[i, r, c]] = m[(r, c)];
                }
            }
        }
        let ls = cloud.log_scales.value();
        let mut scale_diag = Array3::<f64>::zeros((n, 3, 3));
        for i in 0..n {
            for d in 0..3 {
                scale_diag[[i, d, d]] = (2.0 * ls[[i, d]]).exp();
            }
        }
        let logits = cloud.opacity_logits.value();
        let opacities = Array1::from_shape_fn(n, |i| 1.0 / (1.0 + (-logits[[i]]).exp()));

        DeformationModel {
            pose,
            skinning,
            detail,
            skeleton,
            config: config.clone(),
            canonical_centers: centers,
            canonical_rotations,
            scale_diag,
            opacities,
            sh_coeffs: cloud.sh_coeffs.value(),
            sh_degree: cloud.sh_degree,
        }
    }

    pub fn gaussian_count(&self) -> usize {
        self.canonical_centers.shape()[0]
    }

    pub fn sh_degree(&self) -> usize {
        self.sh_degree
    }

    pub fn canonical_centers(&self) -> &Array2<f64> {
        &self.canonical_centers
    }

    /// Activated canonical opacities (frozen).
    pub fn opacities_on_tape(&self, tape: &Tape) -> Tensor {
        tape.constant(self.opacities.clone().into_dyn())
    }

    /// Full deformation pipeline at time `t`.
    pub fn deform_on_tape(
        &self,
        tape: &Tape,
        t: f64,
        enable_detail: bool,
    ) -> Result<DeformedFrame, DeformError> {
        let (quats, root_t) = self.pose.predict(tape, t)?;
        let weights = self.skinning.weights_on_tape(tape);
        self.deform_with_pose(tape, &quats, &root_t, &weights, enable_detail)
    }

    /// Deformation with explicit pose and weights (oracle tests hand-set
    /// hard weights through this).
    pub fn deform_with_pose(
        &self,
        tape: &Tape,
        pose_quats: &Tensor,
        root_translation: &Tensor,
        weights: &Tensor,
        enable_detail: bool,
    ) -> Result<DeformedFrame, DeformError> {
        let n = self.gaussian_count();
        let fk = forward_kinematics_on_tape(tape, &self.skeleton, pose_quats, root_translation)?;
        let rot_flat = fk.bone_rotations_flat(&self.skeleton);
        let trans = fk.bone_translations(&self.skeleton);

        // blended bone rotation per Gaussian: M_i = sum_j w_ij R_j
        let m = weights.matmul(&rot_flat).reshape(&[n, 3, 3]);
        let centers_c = tape.constant(self.canonical_centers.clone().into_dyn());
        let carried = m
            .bmm(&centers_c.reshape(&[n, 3, 1]))
            .reshape(&[n, 3]);
        let lbs_centers = &carried + &weights.matmul(&trans);

        let offsets = if enable_detail {
            self.detail.offsets_on_tape(tape, pose_quats)
        } else {
            tape.constant(ArrayD::zeros(IxDyn(&[n, 3])))
        };
        let centers = &lbs_centers + &offsets;

        let r_canon = tape.constant(self.canonical_rotations.clone().into_dyn());
        let rotations = m.bmm(&r_canon);
        let d = tape.constant(self.scale_diag.clone().into_dyn());
        let cov3 = rotations.bmm(&d).bmm(&rotations.transpose_last2());

        Ok(DeformedFrame {
            centers,
            rotations,
            cov3,
            offsets,
            weights: weights.clone(),
            pose_quats: pose_quats.clone(),
            root_translation: root_translation.clone(),
        })
    }

    /// Deform and rasterize from `camera`; returns the image tensor and the
    /// frame it was rendered from.
    pub fn render_on_tape(
        &self,
        tape: &Tape,
        t: f64,
        camera: &crate::render::Camera,
        background: [f64; 3],
        raster: &crate::render::RasterConfig,
        enable_detail: bool,
    ) -> Result<(Tensor, DeformedFrame), DeformError> {
        let frame = self.deform_on_tape(tape, t, enable_detail)?;
        let opac = self.opacities_on_tape(tape);
        let sh = tape.constant(self.sh_coeffs.clone());
        let campos = camera.position();
        let campos_t = tape.constant(
            ArrayD::from_shape_vec(IxDyn(&[1, 3]), vec![campos.x, campos.y, campos.z])
                .expect("1x3"),
        );
        let dirs = gtape::normalize_rows(&(&frame.centers - &campos_t))
            .map_err(|_| DeformError::ZeroQuaternion)?;
        let colors = sh_colors_on_tape(tape, &sh, &dirs, self.sh_degree);
        let image = crate::render::render_on_tape(
            tape,
            &frame.centers,
            &frame.cov3,
            &opac,
            &colors,
            camera,
            background,
            raster,
        );
        Ok((image, frame))
    }

    /// Raw pose outputs over the motion-loss grid; root translation columns
    /// included or not per the flag.
    pub fn pose_raw_for_motion(
        &self,
        tape: &Tape,
        times: &[f64],
        include_root_translation: bool,
    ) -> Tensor {
        let raw = self.pose.raw_outputs(tape, times);
        if include_root_translation {
            raw
        } else {
            raw.slice_axis(1, 0, 4 * self.pose.joint_count)
        }
    }

    /// Evaluate deformed centers at each time without recording gradients.
    /// Weights and the detail field are time-independent by construction;
    /// only the pose input varies.
    pub fn interpolate_sequence(
        &self,
        times: &[f64],
    ) -> Result<Vec<Array2<f64>>, DeformError> {
        let mut out = Vec::with_capacity(times.len());
        for &t in times {
            let tape = Tape::eval();
            let frame = self.deform_on_tape(&tape, t, true)?;
            out.push(
                frame
                    .centers
                    .value()
                    .into_dimensionality::<ndarray::Ix2>()
                    .expect("[N,3]"),
            );
        }
        Ok(out)
    }

    /// Trainable parameter groups, in optimizer order:
    /// pose, correction field, detail field, radii.
    pub fn param_groups(&self) -> [Vec<Parameter>; 4] {
        let (log_radii, phi) = self.skinning.params();
        [
            self.pose.params(),
            phi,
            self.detail.params(),
            vec![log_radii],
        ]
    }

    pub fn all_params(&self) -> Vec<Parameter> {
        self.param_groups().into_iter().flatten().collect()
    }

    /// Persist the trainable groups plus skeleton and shape metadata.
    pub fn checkpoint_entries(&self) -> Vec<(String, ArrayD<f64>)> {
        let mut entries: Vec<(String, ArrayD<f64>)> = self
            .all_params()
            .iter()
            .map(|p| (p.name(), p.value()))
            .collect();
        let j = self.skeleton.joint_count();
        let mut rest = Array2::<f64>::zeros((j, 3));
        for (i, p) in self.skeleton.rest_positions().iter().enumerate() {
            rest[[i, 0]] = p.x;
            rest[[i, 1]] = p.y;
            rest[[i, 2]] = p.z;
        }
        entries.push(("skeleton.rest_positions".into(), rest.into_dyn()));
        entries.push((
            "skeleton.parents".into(),
            Array1::from_iter(
                self.skeleton
                    .parents_sentinel()
                    .iter()
                    .map(|&v| v as f64),
            )
            .into_dyn(),
        ));
        let meta = |v: f64| ArrayD::from_elem(IxDyn(&[]), v);
        entries.push(("meta.time_frequencies".into(), meta(self.config.time_frequencies as f64)));
        entries.push((
            "meta.position_frequencies".into(),
            meta(self.config.position_frequencies as f64),
        ));
        entries.push(("meta.radius_floor".into(), meta(self.config.radius_floor)));
        entries.push((
            "meta.radius_init_scale".into(),
            meta(self.config.radius_init_scale),
        ));
        let widths = |h: &[usize]| {
            ArrayD::from_shape_vec(
                IxDyn(&[h.len()]),
                h.iter().map(|&v| v as f64).collect(),
            )
            .expect("1d")
        };
        entries.push(("meta.pose_hidden".into(), widths(&self.config.pose_hidden)));
        entries.push(("meta.phi_hidden".into(), widths(&self.config.phi_hidden)));
        entries.push(("meta.psi_hidden".into(), widths(&self.config.psi_hidden)));
        entries
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), DeformError> {
        crate::autodiff::save_container(path, &self.checkpoint_entries())?;
        Ok(())
    }

    /// Rebuild from a checkpoint plus the canonical cloud it was trained
    /// against.
    pub fn load(path: &std::path::Path, cloud: &GaussianCloud) -> Result<Self, DeformError> {
        let entries = crate::autodiff::load_container(path)?;
        let get = |name: &str| -> Result<&ArrayD<f64>, DeformError> {
            entries
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, a)| a)
                .ok_or_else(|| DeformError::MissingEntry(name.to_string()))
        };
        let scalar = |name: &str| -> Result<f64, DeformError> {
            Ok(get(name)?.iter().next().copied().unwrap_or(0.0))
        };
        let widths = |name: &str| -> Result<Vec<usize>, DeformError> {
            Ok(get(name)?.iter().map(|&v| v as usize).collect())
        };
        let rest = get("skeleton.rest_positions")?;
        let parents: Vec<i64> = get("skeleton.parents")?.iter().map(|&v| v as i64).collect();
        let nodes: Vec<Vector3<f64>> = rest
            .rows()
            .into_iter()
            .map(|r| Vector3::new(r[0], r[1], r[2]))
            .collect();
        let skeleton = SkeletonGraph::from_parents(nodes, &parents)
            .map_err(|e| DeformError::BadSkeleton(e.to_string()))?;
        let config = DeformConfig {
            pose_hidden: widths("meta.pose_hidden")?,
            phi_hidden: widths("meta.phi_hidden")?,
            psi_hidden: widths("meta.psi_hidden")?,
            time_frequencies: scalar("meta.time_frequencies")? as usize,
            position_frequencies: scalar("meta.position_frequencies")? as usize,
            radius_floor: scalar("meta.radius_floor")?,
            radius_init_scale: scalar("meta.radius_init_scale")?,
        };
        let model = DeformationModel::new(cloud, skeleton, &config, 0);
        for p in model.all_params() {
            let name = p.name();
            let value = get(&name)?;
            if value.shape() != p.shape().as_slice() {
                return Err(DeformError::MissingEntry(format!(
                    "{name} (shape mismatch: checkpoint {:?} vs model {:?})",
                    value.shape(),
                    p.shape()
                )));
            }
            p.set_value(value.clone());
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::validate_skeleton;
    use approx::assert_abs_diff_eq;

    fn two_bone_cloud_and_skeleton() -> (GaussianCloud, SkeletonGraph) {
        let skeleton = validate_skeleton(
            vec![
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::new(0.0, 0.5, 0.0),
                Vector3::new(0.0, 1.0, 0.0),
            ],
            &[(0, 1), (1, 2)],
            Some(0),
        )
        .unwrap();
        let mut points = Vec::new();
        let mut colors = Vec::new();
        for i in 0..40 {
            let y = i as f64 / 39.0;
            points.push(Vector3::new(0.05 * (i as f64).sin(), y, 0.05));
            colors.push([0.8, 0.3, 0.2]);
        }
        let cloud = GaussianCloud::init_from_points(&points, &colors, 1).unwrap();
        (cloud, skeleton)
    }

    #[test]
    fn fresh_model_predicts_identity_pose() {
        let (cloud, skeleton) = two_bone_cloud_and_skeleton();
        let model = DeformationModel::new(&cloud, skeleton, &DeformConfig::default(), 3);
        for &t in &[0.0, 0.33, 1.0] {
            let pose = model.pose.predict_sample(t).unwrap();
            for q in &pose.local_rotations {
                assert_abs_diff_eq!(q.w, 1.0, epsilon = 1e-12);
                assert_abs_diff_eq!(q.x, 0.0, epsilon = 1e-12);
            }
            assert_abs_diff_eq!(pose.root_translation.norm(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn pose_is_deterministic() {
        let (cloud, skeleton) = two_bone_cloud_and_skeleton();
        let model = DeformationModel::new(&cloud, skeleton, &DeformConfig::default(), 3);
        let a = model.pose.predict_sample(0.4).unwrap();
        let b = model.pose.predict_sample(0.4).unwrap();
        for (qa, qb) in a.local_rotations.iter().zip(&b.local_rotations) {
            assert_eq!(qa.to_array(), qb.to_array());
        }
    }

    #[test]
    fn rest_pose_deformation_is_identity() {
        let (cloud, skeleton) = two_bone_cloud_and_skeleton();
        let model = DeformationModel::new(&cloud, skeleton, &DeformConfig::default(), 7);
        let tape = Tape::eval();
        let frame = model.deform_on_tape(&tape, 0.0, true).unwrap();
        let centers = frame.centers.value();
        let canonical = model.canonical_centers();
        for i in 0..model.gaussian_count() {
            for c in 0..3 {
                assert_abs_diff_eq!(centers[[i, c]], canonical[[i, c]], epsilon = 1e-12);
            }
        }
        // blended rotations equal the canonical rotations
        let rot = frame.rotations.value();
        for (got, want) in rot.iter().zip(model.canonical_rotations.iter()) {
            assert_abs_diff_eq!(got, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn skinning_rows_sum_to_one() {
        let (cloud, skeleton) = two_bone_cloud_and_skeleton();
        let model = DeformationModel::new(&cloud, skeleton, &DeformConfig::default(), 7);
        let tape = Tape::eval();
        let w = model.skinning.weights_on_tape(&tape).value();
        for row in w.rows() {
            let s: f64 = row.iter().sum();
            assert_abs_diff_eq!(s, 1.0, epsilon = 1e-9);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn underflowed_row_falls_back_to_uniform() {
        let skeleton = validate_skeleton(
            vec![Vector3::zeros(), Vector3::new(0.0, 1e-3, 0.0)],
            &[(0, 1)],
            Some(0),
        )
        .unwrap();
        // a center 100 units away with a 5e-4 radius: exp(-2e10) underflows
        let centers =
            Array2::from_shape_vec((1, 3), vec![100.0, 0.0, 0.0]).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let skinning = SkinningModel::new(&skeleton, &centers, &[8], 2, 1e-4, 0.5, &mut rng);
        let tape = Tape::eval();
        let w = skinning.weights_on_tape(&tape).value();
        assert_abs_diff_eq!(w[[0, 0]], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn model_checkpoint_roundtrip() {
        let (cloud, skeleton) = two_bone_cloud_and_skeleton();
        let model = DeformationModel::new(&cloud, skeleton, &DeformConfig::default(), 11);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        model.save(&path).unwrap();
        let loaded = DeformationModel::load(&path, &cloud).unwrap();
        for (a, b) in model.all_params().iter().zip(loaded.all_params().iter()) {
            assert_eq!(a.name(), b.name());
            assert_eq!(a.value(), b.value());
        }
        let ta = Tape::eval();
        let tb = Tape::eval();
        let fa = model.deform_on_tape(&ta, 0.37, true).unwrap();
        let fb = loaded.deform_on_tape(&tb, 0.37, true).unwrap();
        for (x, y) in fa.centers.value().iter().zip(fb.centers.value().iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}
