//! Shared oracles and harnesses for the integration suites. Everything in
//! here is an independent verification path: the finite-difference checker,
//! the homogeneous-matrix FK chain, and the direct-summation SSIM are all
//! written without reusing the implementation code they verify.

#![allow(dead_code)]

use nalgebra::{Matrix3, Matrix4, Vector3};
use ndarray::{Array3, ArrayD};
use rand::Rng;
use rand_chacha::ChaCha12Rng;

use skelsplat::autodiff::{Parameter, Tape, Tensor};
use skelsplat::geometry::{quat_to_matrix, Quat};
use skelsplat::skeleton::{JointPoseSample, SkeletonGraph};

/// Central finite differences against tape gradients for a scalar-valued
/// computation over the given parameters. Panics with context on the first
/// element exceeding the mixed tolerance `|ad - fd| <= abs + rel * |fd|`.
pub fn fd_check(
    label: &str,
    params: &[Parameter],
    build: impl Fn(&Tape) -> Tensor,
    step: f64,
    rel_tol: f64,
    abs_tol: f64,
) {
    for p in params {
        p.zero_grad();
    }
    let tape = Tape::new();
    let out = build(&tape);
    assert_eq!(out.numel(), 1, "{label}: fd_check needs a scalar output");
    tape.backward(&out).expect("backward on scalar");
    let grads: Vec<ArrayD<f64>> = params.iter().map(|p| p.grad()).collect();

    for (pi, p) in params.iter().enumerate() {
        let base = p.value();
        let flat: Vec<f64> = base.iter().copied().collect();
        for idx in 0..flat.len() {
            let mut plus = flat.clone();
            plus[idx] += step;
            set_flat(p, &base, &plus);
            let f_plus = build(&Tape::eval()).scalar_value();
            let mut minus = flat.clone();
            minus[idx] -= step;
            set_flat(p, &base, &minus);
            let f_minus = build(&Tape::eval()).scalar_value();
            p.set_value(base.clone());
            let fd = (f_plus - f_minus) / (2.0 * step);
            let ad = grads[pi].iter().copied().nth(idx).expect("in range");
            let err = (ad - fd).abs();
            assert!(
                err <= abs_tol + rel_tol * fd.abs(),
                "{label}: param `{}`[{idx}]: ad={ad:.12e} fd={fd:.12e} err={err:.3e}",
                p.name(),
            );
        }
    }
}

fn set_flat(p: &Parameter, shaped: &ArrayD<f64>, flat: &[f64]) {
    let arr = ArrayD::from_shape_vec(shaped.raw_dim(), flat.to_vec()).expect("same shape");
    p.set_value(arr);
}

/// FK oracle: explicit 4x4 homogeneous matrix products down each
/// root-to-node path.
pub fn fk_homogeneous_oracle(
    skeleton: &SkeletonGraph,
    pose: &JointPoseSample,
) -> Vec<Matrix4<f64>> {
    let j = skeleton.joint_count();
    let mut globals = vec![Matrix4::<f64>::identity(); j];
    for &joint in skeleton.topo_order() {
        let rot = quat_to_matrix(&pose.local_rotations[joint]).expect("unit quaternion");
        let pivot = skeleton.rest_position(joint);
        // x -> R (x - pivot) + pivot (+ root translation at the root)
        let mut local = Matrix4::<f64>::identity();
        local.fixed_view_mut::<3, 3>(0, 0).copy_from(&rot);
        let shift = pivot - rot * pivot;
        local.fixed_view_mut::<3, 1>(0, 3).copy_from(&shift);
        if skeleton.parent(joint).is_none() {
            let mut trans = Matrix4::<f64>::identity();
            trans
                .fixed_view_mut::<3, 1>(0, 3)
                .copy_from(&pose.root_translation);
            globals[joint] = trans * local;
        } else {
            let parent = skeleton.parent(joint).expect("non-root");
            globals[joint] = globals[parent] * local;
        }
    }
    globals
}

/// Random joint tree: node `j >= 1` attaches to a uniformly random earlier
/// node, so indices are already topologically ordered.
pub fn random_tree(joints: usize, rng: &mut ChaCha12Rng) -> SkeletonGraph {
    let nodes: Vec<Vector3<f64>> = (0..joints)
        .map(|_| {
            Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            )
        })
        .collect();
    let edges: Vec<(usize, usize)> = (1..joints)
        .map(|j| (rng.gen_range(0..j), j))
        .collect();
    skelsplat::skeleton::validate_skeleton(nodes, &edges, Some(0)).expect("valid tree")
}

pub fn random_unit_quat(rng: &mut ChaCha12Rng) -> Quat {
    loop {
        let q = Quat::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        if q.norm() > 1e-2 {
            return q.normalize().expect("nonzero");
        }
    }
}

pub fn random_pose(skeleton: &SkeletonGraph, scale: f64, rng: &mut ChaCha12Rng) -> JointPoseSample {
    let local_rotations = (0..skeleton.joint_count())
        .map(|_| {
            let axis = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let axis = if axis.norm() < 1e-6 { Vector3::x() } else { axis };
            Quat::from_axis_angle(&axis, rng.gen_range(-scale..scale))
        })
        .collect();
    JointPoseSample {
        local_rotations,
        root_translation: Vector3::new(
            rng.gen_range(-0.3..0.3),
            rng.gen_range(-0.3..0.3),
            rng.gen_range(-0.3..0.3),
        ),
        time: 0.0,
    }
}

/// Independent SSIM: direct double-loop weighted sums per window position,
/// per channel, averaged. Same Wang et al. constants as the implementation
/// under test but no shared code.
pub fn ssim_reference(a: &Array3<f64>, b: &Array3<f64>, window: usize, sigma: f64) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let (h, w, _) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let half = (window as f64 - 1.0) / 2.0;
    let mut kernel = vec![0.0; window * window];
    let mut total = 0.0;
    for r in 0..window {
        for c in 0..window {
            let v = (-(((r as f64 - half).powi(2) + (c as f64 - half).powi(2))
                / (2.0 * sigma * sigma)))
                .exp();
            kernel[r * window + c] = v;
            total += v;
        }
    }
    for v in &mut kernel {
        *v /= total;
    }
    const C1: f64 = 0.0001;
    const C2: f64 = 0.0009;
    let mut acc = 0.0;
    let mut count = 0usize;
    for ch in 0..3 {
        for y0 in 0..=(h - window) {
            for x0 in 0..=(w - window) {
                let (mut mx, mut my) = (0.0, 0.0);
                let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
                for r in 0..window {
                    for c in 0..window {
                        let k = kernel[r * window + c];
                        let xv = a[[y0 + r, x0 + c, ch]];
                        let yv = b[[y0 + r, x0 + c, ch]];
                        mx += k * xv;
                        my += k * yv;
                        sxx += k * xv * xv;
                        syy += k * yv * yv;
                        sxy += k * xv * yv;
                    }
                }
                let vx = sxx - mx * mx;
                let vy = syy - my * my;
                let cxy = sxy - mx * my;
                let s = ((2.0 * mx * my + C1) * (2.0 * cxy + C2))
                    / ((mx * mx + my * my + C1) * (vx + vy + C2));
                acc += s;
                count += 1;
            }
        }
    }
    acc / count as f64
}

/// Rotation-matrix comparison helper.
pub fn mat3_close(a: &Matrix3<f64>, b: &Matrix3<f64>, tol: f64) -> bool {
    (a - b).iter().all(|v| v.abs() <= tol)
}
