//! Dataset ingestion and emission: posed-image manifests (per-frame
//! camera-to-world matrix, global field of view, `time` field — the layout
//! published synthetic datasets use), PNG decoding to float buffers, and
//! the in-memory observation set the trainer consumes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use ndarray::Array3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::RigidTransform;
use crate::render::{Camera, CameraError};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("manifest parse error: {0}")]
    Parse(String),
    #[error("image `{0}` could not be read: {1}")]
    Image(PathBuf, String),
    #[error("camera for frame `{0}` is invalid: {1}")]
    Camera(String, CameraError),
    #[error("frame `{0}`: transform matrix is not invertible")]
    BadMatrix(String),
    #[error("observation set is empty")]
    Empty,
    #[error("duplicate observation at t = {0} with identical camera")]
    Duplicate(f64),
    #[error("all images must share dimensions; found {0:?} and {1:?}")]
    MixedDims(Vec<usize>, Vec<usize>),
    #[error("manifest has no frames")]
    NoFrames,
}

/// One posed image.
pub struct Observation {
    pub time: f64,
    pub camera: Camera,
    pub image: Array3<f64>,
    /// Part of the multi-view bundle at t=0 used for canonical fitting.
    pub canonical_bundle: bool,
}

/// Sparse posed images: times in [0, 1], sorted; unique (time, camera)
/// pairs; uniform image dimensions.
pub struct ObservationSet {
    pub observations: Vec<Observation>,
    pub background: [f64; 3],
}

impl ObservationSet {
    pub fn new(
        mut observations: Vec<Observation>,
        background: [f64; 3],
    ) -> Result<ObservationSet, DatasetError> {
        if observations.is_empty() {
            return Err(DatasetError::Empty);
        }
        observations.sort_by(|a, b| {
            a.time
                .partial_cmp(&b.time)
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let dims = observations[0].image.shape().to_vec();
        for o in &observations {
            if o.image.shape() != dims.as_slice() {
                return Err(DatasetError::MixedDims(dims, o.image.shape().to_vec()));
            }
        }
        for pair in observations.windows(2) {
            if pair[0].time == pair[1].time && pair[0].camera == pair[1].camera {
                return Err(DatasetError::Duplicate(pair[0].time));
            }
        }
        Ok(ObservationSet {
            observations,
            background,
        })
    }

    /// Observations driving deformation training (non-bundle), time order.
    pub fn training(&self) -> Vec<&Observation> {
        self.observations
            .iter()
            .filter(|o| !o.canonical_bundle)
            .collect()
    }

    /// The multi-view bundle at t=0 for canonical fitting.
    pub fn bundle(&self) -> Vec<&Observation> {
        self.observations
            .iter()
            .filter(|o| o.canonical_bundle)
            .collect()
    }

    pub fn image_dims(&self) -> (usize, usize) {
        let s = self.observations[0].image.shape();
        (s[0], s[1])
    }
}

/// Serialized manifest frame. `transform_matrix` is camera-to-world.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestFrame {
    pub file_path: String,
    pub time: f64,
    pub transform_matrix: [[f64; 4]; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fl_x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fl_y: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cx: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cy: Option<f64>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

/// Camera axis convention of the manifest's camera-to-world matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CameraConvention {
    /// x right, y up, camera looks down -z (synthetic NeRF-style datasets).
    #[default]
    OpenGl,
    /// x right, y down, camera looks down +z (the renderer's native frame).
    OpenCv,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera_angle_x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<usize>,
    #[serde(default)]
    pub camera_convention: CameraConvention,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background: Option<[f64; 3]>,
    pub frames: Vec<ManifestFrame>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Manifest, DatasetError> {
        serde_json::from_str(text).map_err(|e| DatasetError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Manifest, DatasetError> {
        Manifest::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        write_atomic(path, self.to_json().as_bytes())?;
        Ok(())
    }
}

/// Gram-Schmidt re-orthonormalization; manifest matrices carry ASCII
/// rounding that would fail the camera's orthonormality invariant.
fn orthonormalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    let c0 = m.column(0).into_owned().normalize();
    let mut c1 = m.column(1).into_owned();
    c1 -= c0 * c0.dot(&c1);
    let c1 = c1.normalize();
    let c2 = c0.cross(&c1);
    Matrix3::from_columns(&[c0, c1, c2])
}

/// Build the renderer camera from a camera-to-world matrix in the given
/// convention.
pub fn camera_from_manifest(
    frame: &ManifestFrame,
    manifest: &Manifest,
    width: usize,
    height: usize,
) -> Result<Camera, DatasetError> {
    let m = &frame.transform_matrix;
    let mut rot = Matrix3::new(
        m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
    );
    let pos = Vector3::new(m[0][3], m[1][3], m[2][3]);
    if manifest.camera_convention == CameraConvention::OpenGl {
        // flip y and z basis vectors: columns 1 and 2
        for r in 0..3 {
            rot[(r, 1)] = -rot[(r, 1)];
            rot[(r, 2)] = -rot[(r, 2)];
        }
    }
    let rot = orthonormalize(&rot);
    // world-to-camera is the inverse rigid transform
    let w = rot.transpose();
    let t = -(w * pos);
    let fx = frame.fl_x.unwrap_or_else(|| {
        let angle = manifest.camera_angle_x.unwrap_or(std::f64::consts::FRAC_PI_2);
        0.5 * width as f64 / (0.5 * angle).tan()
    });
    let fy = frame.fl_y.unwrap_or(fx);
    let cx = frame.cx.unwrap_or(width as f64 / 2.0);
    let cy = frame.cy.unwrap_or(height as f64 / 2.0);
    Camera::new(fx, fy, cx, cy, width, height, RigidTransform::new(w, t))
        .map_err(|e| DatasetError::Camera(frame.file_path.clone(), e))
}

/// Load a manifest's frames into an observation set. Times are normalized
/// to [0, 1] when they fall outside it; RGBA images are composited over the
/// background. When more than one frame sits at the earliest time, all of
/// them form the canonical multi-view bundle and the first also serves as a
/// training observation.
pub fn manifest_to_observations(
    manifest: &Manifest,
    base_dir: &Path,
) -> Result<ObservationSet, DatasetError> {
    if manifest.frames.is_empty() {
        return Err(DatasetError::NoFrames);
    }
    let background = manifest.background.unwrap_or([0.0, 0.0, 0.0]);
    let t_min = manifest.frames.iter().map(|f| f.time).fold(f64::INFINITY, f64::min);
    let t_max = manifest
        .frames
        .iter()
        .map(|f| f.time)
        .fold(f64::NEG_INFINITY, f64::max);
    let needs_norm = t_min < 0.0 || t_max > 1.0;
    if needs_norm {
        log::info!("normalizing manifest times from [{t_min}, {t_max}] to [0, 1]");
    }
    let norm = |t: f64| {
        if needs_norm && t_max > t_min {
            (t - t_min) / (t_max - t_min)
        } else if needs_norm {
            0.0
        } else {
            t
        }
    };
    let earliest_count = manifest.frames.iter().filter(|f| f.time == t_min).count();
    let mut seen_earliest = 0usize;
    let mut observations = Vec::with_capacity(manifest.frames.len());
    for frame in &manifest.frames {
        let path = base_dir.join(&frame.file_path);
        let image = load_image(&path, background)?;
        let (h, w) = (image.shape()[0], image.shape()[1]);
        let width = manifest.w.unwrap_or(w);
        let height = manifest.h.unwrap_or(h);
        let camera = camera_from_manifest(frame, manifest, width, height)?;
        let mut bundle = false;
        if frame.time == t_min && earliest_count > 1 {
            // the first earliest frame trains; the rest are bundle-only
            bundle = seen_earliest > 0;
            seen_earliest += 1;
        }
        observations.push(Observation {
            time: norm(frame.time),
            camera,
            image,
            canonical_bundle: bundle,
        });
    }
    // bundle frames also fit the canonical state from the training t=0 view
    ObservationSet::new(observations, background)
}

/// Decode PNG to a float `[H, W, 3]` buffer in [0, 1]; alpha composites
/// over `background`. Values are treated as linear.
pub fn load_image(path: &Path, background: [f64; 3]) -> Result<Array3<f64>, DatasetError> {
    let img = image::open(path).map_err(|e| DatasetError::Image(path.into(), e.to_string()))?;
    let rgba = img.to_rgba16();
    let (w, h) = rgba.dimensions();
    let mut out = Array3::<f64>::zeros((h as usize, w as usize, 3));
    for (x, y, p) in rgba.enumerate_pixels() {
        let a = p[3] as f64 / 65535.0;
        for c in 0..3 {
            let v = p[c] as f64 / 65535.0;
            out[[y as usize, x as usize, c]] = a * v + (1.0 - a) * background[c];
        }
    }
    Ok(out)
}

/// Write an `[H, W, 3]` float image as 8-bit PNG.
pub fn save_image_png8(path: &Path, image: &Array3<f64>) -> Result<(), DatasetError> {
    let (h, w) = (image.shape()[0], image.shape()[1]);
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = [
                (image[[y, x, 0]].clamp(0.0, 1.0) * 255.0).round() as u8,
                (image[[y, x, 1]].clamp(0.0, 1.0) * 255.0).round() as u8,
                (image[[y, x, 2]].clamp(0.0, 1.0) * 255.0).round() as u8,
            ];
            buf.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    buf.save(path)
        .map_err(|e| DatasetError::Image(path.into(), e.to_string()))
}

/// Write an `[H, W, 3]` float image as lossless 16-bit PNG.
pub fn save_image_png16(path: &Path, image: &Array3<f64>) -> Result<(), DatasetError> {
    let (h, w) = (image.shape()[0], image.shape()[1]);
    let mut buf = image::ImageBuffer::<image::Rgb<u16>, Vec<u16>>::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = [
                (image[[y, x, 0]].clamp(0.0, 1.0) * 65535.0).round() as u16,
                (image[[y, x, 1]].clamp(0.0, 1.0) * 65535.0).round() as u16,
                (image[[y, x, 2]].clamp(0.0, 1.0) * 65535.0).round() as u16,
            ];
            buf.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    buf.save(path)
        .map_err(|e| DatasetError::Image(path.into(), e.to_string()))
}

/// Atomic write: temp file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp-write");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}

/// Camera-to-world matrix (OpenCV convention) for serialization.
pub fn camera_to_world_matrix(camera: &Camera) -> [[f64; 4]; 4] {
    let inv = camera.world_to_camera.inverse();
    let mut m = [[0.0; 4]; 4];
    for r in 0..3 {
        for c in 0..3 {
            m[r][c] = inv.rotation[(r, c)];
        }
        m[r][3] = inv.translation[r];
    }
    m[3][3] = 1.0;
    m
}
