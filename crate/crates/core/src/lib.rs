//! Skeleton-driven deformable Gaussian splatting for sparse-view articulated
//! motion reconstruction.
//!
//! The pipeline reconstructs continuous articulated motion of a 3D target from
//! sparse posed images (one view per timestep), given a canonical Gaussian
//! reconstruction and a rough skeleton graph:
//!
//! 1. A static canonical Gaussian cloud is fitted from a multi-view bundle at
//!    `t = 0` ([`scene`]).
//! 2. A time-conditioned pose network predicts per-joint local rotations and a
//!    root translation; forward kinematics propagates them down the skeleton
//!    tree ([`skeleton`], [`deform`]).
//! 3. Gaussians are carried by linear blend skinning with learnable per-bone
//!    radii and a skinning correction field, then refined by a pose-dependent
//!    detail deformation field ([`deform`]).
//! 4. A differentiable software rasterizer alpha-blends the deformed Gaussians
//!    ([`render`]); photometric, motion-smoothness, and detail-magnitude
//!    losses drive the optimization ([`losses`], [`train`]).
//!
//! Everything trainable flows through the reverse-mode tape in [`autodiff`].
//! [`oracle`] generates procedural articulated scenes with known ground truth
//! for verification.

pub mod autodiff;
pub mod cli;
pub mod dataset;
pub mod deform;
pub mod geometry;
pub mod losses;
pub mod nn;
pub mod oracle;
pub mod render;
pub mod scene;
pub mod skeleton;
pub mod train;
