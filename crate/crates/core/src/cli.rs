//! Command-line surface: dataset generation, canonical fitting, deformation
//! training, rendering/interpolation, and evaluation.
//!
//! Exit codes are a stable scripting contract: 0 success, 2 input error,
//! 3 numerical abort.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    camera_to_world_matrix, manifest_to_observations, save_image_png16,
    save_image_png8, write_atomic, CameraConvention, Manifest, ManifestFrame, ObservationSet,
};
use crate::oracle::{generate_scene, OracleSpec, ViewpointPolicy};
use crate::render::Camera;
use crate::scene::{fit_canonical, FitConfig, GaussianCloud};
use crate::skeleton::{SkeletonFile, SkeletonGraph};
use crate::train::{evaluate, train_deformation, TrainConfig, TrainError};

/// Errors carry the exit code they map to.
pub enum AppError {
    /// Exit 2: bad inputs (paths, schemas, malformed files).
    Input(anyhow::Error),
    /// Exit 3: numerical abort (non-finite loss).
    Numerical(anyhow::Error),
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Input(_) => 2,
            AppError::Numerical(_) => 3,
        }
    }

    pub fn message(&self) -> String {
        match self {
            AppError::Input(e) | AppError::Numerical(e) => format!("{e:#}"),
        }
    }
}

fn input<E: Into<anyhow::Error>>(e: E) -> AppError {
    AppError::Input(e.into())
}

#[derive(Parser)]
#[command(
    name = "skelsplat",
    about = "Skeleton-driven deformable Gaussian splatting from sparse posed images"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Output root (default: $SKELSPLAT_OUT, then ./out).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed for all stochastic choices; identical inputs and seed produce
    /// identical artifacts.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CameraSource {
    Orbit,
    Manifest,
    Fixed,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ViewPolicyArg {
    Orbit,
    RandomSphere,
    Fixed,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a synthetic articulated dataset with known ground truth.
    MakeOracle {
        /// Output dataset directory.
        dir: PathBuf,
        #[arg(long, default_value_t = 2)]
        bones: usize,
        #[arg(long, default_value_t = 400)]
        points_per_part: usize,
        /// Peak joint angle, degrees.
        #[arg(long, default_value_t = 35.0)]
        amplitude_deg: f64,
        /// Non-rigid bulge amplitude, world units (0 = rigid parts).
        #[arg(long, default_value_t = 0.0)]
        bulge: f64,
        #[arg(long, default_value_t = 11)]
        timesteps: usize,
        #[arg(long, default_value_t = 128)]
        resolution: usize,
        #[arg(long, value_enum, default_value_t = ViewPolicyArg::Orbit)]
        views: ViewPolicyArg,
        #[arg(long, default_value_t = 8)]
        bundle_views: usize,
    },
    /// Fit the canonical Gaussian cloud from the t=0 multi-view bundle.
    FitCanonical {
        #[arg(long)]
        dataset: PathBuf,
        /// Init point set (JSON {"points": [[x,y,z]..], "colors": [[r,g,b]..]});
        /// defaults to `<dataset>/points.json`.
        #[arg(long)]
        init_points: Option<PathBuf>,
        #[arg(long, default_value_t = 2000)]
        iterations: usize,
        #[arg(long, default_value_t = 1)]
        sh_degree: usize,
    },
    /// Train the deformation field against sparse observations.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        skeleton: PathBuf,
        /// Canonical cloud checkpoint from fit-canonical.
        #[arg(long)]
        canonical: PathBuf,
        /// TOML training config; flags override its fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        /// Resume from a mid-run checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Render frames at explicit times.
    Render {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        canonical: PathBuf,
        /// Comma-separated times in [0, 1].
        #[arg(long, value_delimiter = ',')]
        times: Vec<f64>,
        #[arg(long, value_enum, default_value_t = CameraSource::Orbit)]
        camera: CameraSource,
        /// Dataset dir (needed for --camera manifest).
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value_t = 128)]
        resolution: usize,
        #[arg(long, default_value_t = 8)]
        bit_depth: u8,
    },
    /// Render a uniform time sweep over [0, 1] (motion interpolation).
    Interpolate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        canonical: PathBuf,
        #[arg(long, default_value_t = 101)]
        count: usize,
        #[arg(long, value_enum, default_value_t = CameraSource::Fixed)]
        camera: CameraSource,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value_t = 128)]
        resolution: usize,
        #[arg(long, default_value_t = 8)]
        bit_depth: u8,
    },
    /// Per-frame and aggregate PSNR/SSIM on a dataset split.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        canonical: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
    },
}

#[derive(Serialize, Deserialize)]
struct PointsFile {
    points: Vec<[f64; 3]>,
    colors: Vec<[f64; 3]>,
}

pub fn out_root(cli_out: &Option<PathBuf>) -> PathBuf {
    cli_out
        .clone()
        .or_else(|| std::env::var_os("SKELSPLAT_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn ensure_dirs(root: &Path) -> Result<(), AppError> {
    for sub in ["checkpoints", "renders", "metrics"] {
        std::fs::create_dir_all(root.join(sub)).map_err(input)?;
    }
    Ok(())
}

fn load_split(dataset: &Path, split: &str) -> Result<ObservationSet, AppError> {
    let path = dataset.join(format!("transforms_{split}.json"));
    if !path.exists() {
        return Err(input(anyhow!("manifest not found: {}", path.display())));
    }
    let manifest = Manifest::load(&path).map_err(input)?;
    manifest_to_observations(&manifest, dataset).map_err(input)
}

pub fn run(cli: Cli) -> Result<(), AppError> {
    let out = out_root(&cli.out);
    match cli.command {
        Command::MakeOracle {
            dir,
            bones,
            points_per_part,
            amplitude_deg,
            bulge,
            timesteps,
            resolution,
            views,
            bundle_views,
        } => cmd_make_oracle(
            &dir,
            bones,
            points_per_part,
            amplitude_deg,
            bulge,
            timesteps,
            resolution,
            views,
            bundle_views,
            cli.seed,
        ),
        Command::FitCanonical {
            dataset,
            init_points,
            iterations,
            sh_degree,
        } => cmd_fit_canonical(&out, &dataset, init_points, iterations, sh_degree),
        Command::Train {
            dataset,
            skeleton,
            canonical,
            config,
            steps,
            resume,
        } => cmd_train(&out, &dataset, &skeleton, &canonical, config, steps, resume, cli.seed),
        Command::Render {
            model,
            canonical,
            times,
            camera,
            dataset,
            resolution,
            bit_depth,
        } => cmd_render(
            &out, &model, &canonical, &times, camera, dataset, resolution, bit_depth,
        ),
        Command::Interpolate {
            model,
            canonical,
            count,
            camera,
            dataset,
            resolution,
            bit_depth,
        } => {
            let times: Vec<f64> = (0..count)
                .map(|i| i as f64 / (count.max(2) - 1) as f64)
                .collect();
            cmd_render(
                &out, &model, &canonical, &times, camera, dataset, resolution, bit_depth,
            )
        }
        Command::Eval {
            model,
            canonical,
            dataset,
            split,
        } => cmd_eval(&out, &model, &canonical, &dataset, split),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_make_oracle(
    dir: &Path,
    bones: usize,
    points_per_part: usize,
    amplitude_deg: f64,
    bulge: f64,
    timesteps: usize,
    resolution: usize,
    views: ViewPolicyArg,
    bundle_views: usize,
    seed: u64,
) -> Result<(), AppError> {
    let spec = OracleSpec {
        bone_count: bones,
        points_per_part,
        motion_amplitude: amplitude_deg.to_radians(),
        seed,
        bulge_amplitude: bulge,
    };
    let scene = generate_scene(&spec).map_err(input)?;
    let policy = match views {
        ViewPolicyArg::Orbit => ViewpointPolicy::Orbit,
        ViewPolicyArg::RandomSphere => ViewpointPolicy::RandomSphere { seed },
        ViewPolicyArg::Fixed => ViewpointPolicy::Fixed,
    };
    let times: Vec<f64> = (0..timesteps)
        .map(|k| k as f64 / (timesteps.max(2) - 1) as f64)
        .collect();
    let raster = crate::render::RasterConfig::default();
    let background = [0.0; 3];
    let observations = scene
        .render_observations(&times, policy, resolution, bundle_views, background, &raster)
        .map_err(input)?;

    std::fs::create_dir_all(dir.join("train")).map_err(input)?;
    std::fs::create_dir_all(dir.join("test")).map_err(input)?;

    let frame_entry = |camera: &Camera, time: f64, file_path: String| ManifestFrame {
        file_path,
        time,
        transform_matrix: camera_to_world_matrix(camera),
        fl_x: Some(camera.fx),
        fl_y: Some(camera.fy),
        cx: Some(camera.cx),
        cy: Some(camera.cy),
        extra: Default::default(),
    };

    let mut train_frames = Vec::new();
    for (i, obs) in observations.observations.iter().enumerate() {
        let rel = format!("train/r_{i:03}.png");
        save_image_png16(&dir.join(&rel), &obs.image).map_err(input)?;
        train_frames.push(frame_entry(&obs.camera, obs.time, rel));
    }
    // held-out split: a different orbit camera at each timestep
    let mut test_frames = Vec::new();
    for (k, &t) in times.iter().enumerate() {
        let az = std::f64::consts::TAU * (k as f64 + 0.5) / times.len() as f64 + 1.1;
        let camera = scene.orbit_camera(az, 0.25, resolution).map_err(input)?;
        let image = scene.render_ground_truth(&camera, t, background, &raster);
        let rel = format!("test/r_{k:03}.png");
        save_image_png16(&dir.join(&rel), &image).map_err(input)?;
        test_frames.push(frame_entry(&camera, t, rel));
    }

    let manifest = |frames: Vec<ManifestFrame>| Manifest {
        camera_angle_x: None,
        w: Some(resolution),
        h: Some(resolution),
        camera_convention: CameraConvention::OpenCv,
        background: Some(background),
        frames,
        extra: Default::default(),
    };
    manifest(train_frames)
        .save(&dir.join("transforms_train.json"))
        .map_err(input)?;
    manifest(test_frames)
        .save(&dir.join("transforms_test.json"))
        .map_err(input)?;

    let skeleton_json =
        serde_json::to_string_pretty(&SkeletonFile::from_graph(&scene.skeleton)).map_err(input)?;
    write_atomic(&dir.join("skeleton.json"), skeleton_json.as_bytes()).map_err(input)?;

    let points = PointsFile {
        points: scene
            .canonical_points()
            .iter()
            .map(|p| [p.x, p.y, p.z])
            .collect(),
        colors: scene.canonical_colors(),
    };
    write_atomic(
        &dir.join("points.json"),
        serde_json::to_string(&points).map_err(input)?.as_bytes(),
    )
    .map_err(input)?;
    println!(
        "oracle dataset: {} train frames, {} test frames, {} points",
        observations.observations.len(),
        times.len(),
        points.points.len()
    );
    Ok(())
}

fn cmd_fit_canonical(
    out: &Path,
    dataset: &Path,
    init_points: Option<PathBuf>,
    iterations: usize,
    sh_degree: usize,
) -> Result<(), AppError> {
    ensure_dirs(out)?;
    let set = load_split(dataset, "train")?;
    let t0_views: Vec<(Camera, ndarray::Array3<f64>)> = set
        .observations
        .iter()
        .filter(|o| o.time == 0.0)
        .map(|o| (o.camera.clone(), o.image.clone()))
        .collect();
    if t0_views.is_empty() {
        return Err(input(anyhow!("dataset has no frames at t = 0")));
    }
    let points_path = init_points.unwrap_or_else(|| dataset.join("points.json"));
    let text = std::fs::read_to_string(&points_path)
        .with_context(|| format!("reading init points {}", points_path.display()))
        .map_err(input)?;
    let pf: PointsFile = serde_json::from_str(&text).map_err(input)?;
    let points: Vec<Vector3<f64>> = pf
        .points
        .iter()
        .map(|p| Vector3::new(p[0], p[1], p[2]))
        .collect();
    let cloud = GaussianCloud::init_from_points(&points, &pf.colors, sh_degree).map_err(input)?;
    let cfg = FitConfig {
        iterations,
        background: set.background,
        ..Default::default()
    };
    let history = fit_canonical(&cloud, &t0_views, &cfg).map_err(input)?;
    let ckpt = out.join("checkpoints/canonical.ckpt");
    cloud.save(&ckpt).map_err(input)?;
    let mut csv = String::from("iteration,loss\n");
    for (i, l) in history.losses.iter().enumerate() {
        csv.push_str(&format!("{i},{l}\n"));
    }
    write_atomic(&out.join("metrics/fit_history.csv"), csv.as_bytes()).map_err(input)?;
    // preview renders from the bundle cameras
    for (i, (camera, _)) in t0_views.iter().take(4).enumerate() {
        let tape = crate::autodiff::Tape::eval();
        let tensors = cloud.as_constants(&tape);
        let img = crate::scene::render_cloud_on_tape(
            &tape,
            &tensors,
            cloud.sh_degree,
            camera,
            set.background,
            &cfg.raster,
        );
        let arr = img
            .value()
            .into_dimensionality::<ndarray::Ix3>()
            .expect("[H,W,3]");
        save_image_png8(&out.join(format!("renders/canonical_{i:02}.png")), &arr)
            .map_err(input)?;
    }
    println!(
        "canonical fit: {} gaussians, final loss {:.6} -> {}",
        cloud.len(),
        history.losses.last().copied().unwrap_or(f64::NAN),
        ckpt.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    out: &Path,
    dataset: &Path,
    skeleton_path: &Path,
    canonical: &Path,
    config: Option<PathBuf>,
    steps: Option<usize>,
    resume: Option<PathBuf>,
    seed: u64,
) -> Result<(), AppError> {
    ensure_dirs(out)?;
    let set = load_split(dataset, "train")?;
    let skeleton = load_skeleton(skeleton_path)?;
    let cloud = GaussianCloud::load(canonical).map_err(input)?;
    let mut cfg: TrainConfig = match config {
        Some(path) => {
            let text = std::fs::read_to_string(&path)
                .with_context(|| format!("reading config {}", path.display()))
                .map_err(input)?;
            toml::from_str(&text)
                .with_context(|| format!("parsing config {}", path.display()))
                .map_err(input)?
        }
        None => TrainConfig::default(),
    };
    if let Some(s) = steps {
        cfg.steps = s;
    }
    cfg.seed = seed;
    cfg.background = set.background;
    let effective = toml::to_string_pretty(&cfg).map_err(input)?;
    write_atomic(&out.join("effective-config.toml"), effective.as_bytes()).map_err(input)?;

    let ckpt_dir = out.join("checkpoints");
    let result = train_deformation(
        &cloud,
        skeleton,
        &set,
        &cfg,
        Some(&ckpt_dir),
        resume.as_deref(),
    );
    let (model, history) = match result {
        Ok(v) => v,
        Err(e @ TrainError::NanAbort { .. }) => {
            return Err(AppError::Numerical(e.into()));
        }
        Err(e) => return Err(input(e)),
    };
    model.save(&ckpt_dir.join("model.ckpt")).map_err(input)?;
    let mut csv = String::from("step,total,perceptual,motion,detail\n");
    for r in &history.records {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            r.step, r.total, r.perceptual, r.motion, r.detail
        ));
    }
    write_atomic(&out.join("metrics/loss_history.csv"), csv.as_bytes()).map_err(input)?;
    println!(
        "trained {} steps; final loss {:.6} -> {}",
        history.records.len(),
        history.records.last().map(|r| r.total).unwrap_or(f64::NAN),
        ckpt_dir.join("model.ckpt").display()
    );
    Ok(())
}

fn load_skeleton(path: &Path) -> Result<SkeletonGraph, AppError> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading skeleton {}", path.display()))
        .map_err(input)?;
    SkeletonFile::parse(&text).map_err(|e| input(anyhow!(e)))
}

#[allow(clippy::too_many_arguments)]
fn cmd_render(
    out: &Path,
    model_path: &Path,
    canonical: &Path,
    times: &[f64],
    camera: CameraSource,
    dataset: Option<PathBuf>,
    resolution: usize,
    bit_depth: u8,
) -> Result<(), AppError> {
    ensure_dirs(out)?;
    let cloud = GaussianCloud::load(canonical).map_err(input)?;
    let model = crate::deform::DeformationModel::load(model_path, &cloud).map_err(input)?;
    let raster = crate::render::RasterConfig::default();
    let background = [0.0; 3];

    let manifest_cams: Option<Vec<Camera>> = match camera {
        CameraSource::Manifest | CameraSource::Fixed if dataset.is_some() => {
            let set = load_split(dataset.as_ref().expect("checked"), "test")
                .or_else(|_| load_split(dataset.as_ref().expect("checked"), "train"))?;
            Some(set.observations.iter().map(|o| o.camera.clone()).collect())
        }
        CameraSource::Manifest => {
            return Err(input(anyhow!("--camera manifest requires --dataset")));
        }
        _ => None,
    };
    let orbit_cam = |az: f64| -> Result<Camera, AppError> {
        let centers = cloud.centers.value();
        let mut c = Vector3::zeros();
        for row in centers.rows() {
            c += Vector3::new(row[0], row[1], row[2]);
        }
        c /= centers.shape()[0].max(1) as f64;
        let radius = cloud.extent().max(0.5);
        let eye = c + Vector3::new(
            1.9 * radius * az.cos(),
            0.9 * radius,
            1.9 * radius * az.sin(),
        );
        Camera::look_at(
            eye,
            c,
            Vector3::y(),
            1.1 * resolution as f64,
            resolution,
            resolution,
        )
        .map_err(input)
    };

    for (i, &t_raw) in times.iter().enumerate() {
        let t = if (0.0..=1.0).contains(&t_raw) {
            t_raw
        } else {
            log::warn!("render: time {t_raw} outside [0, 1]; clamping");
            t_raw.clamp(0.0, 1.0)
        };
        let cam = match camera {
            CameraSource::Orbit => {
                orbit_cam(std::f64::consts::TAU * i as f64 / times.len().max(1) as f64)?
            }
            CameraSource::Fixed => match &manifest_cams {
                Some(cams) if !cams.is_empty() => cams[0].clone(),
                _ => orbit_cam(0.8)?,
            },
            CameraSource::Manifest => {
                let cams = manifest_cams.as_ref().expect("validated");
                if cams.is_empty() {
                    return Err(input(anyhow!("dataset has no cameras")));
                }
                cams[i % cams.len()].clone()
            }
        };
        let tape = crate::autodiff::Tape::eval();
        let (img, _) = model
            .render_on_tape(&tape, t, &cam, background, &raster, true)
            .map_err(input)?;
        let arr = img
            .value()
            .into_dimensionality::<ndarray::Ix3>()
            .expect("[H,W,3]");
        let path = out.join(format!("renders/frame_{i:04}.png"));
        match bit_depth {
            16 => save_image_png16(&path, &arr).map_err(input)?,
            _ => save_image_png8(&path, &arr).map_err(input)?,
        }
    }
    println!("wrote {} frames to {}", times.len(), out.join("renders").display());
    Ok(())
}

fn cmd_eval(
    out: &Path,
    model_path: &Path,
    canonical: &Path,
    dataset: &Path,
    split: SplitArg,
) -> Result<(), AppError> {
    ensure_dirs(out)?;
    let split_name = match split {
        SplitArg::Train => "train",
        SplitArg::Test => "test",
    };
    let set = load_split(dataset, split_name)?;
    let cloud = GaussianCloud::load(canonical).map_err(input)?;
    let model = crate::deform::DeformationModel::load(model_path, &cloud).map_err(input)?;
    let obs: Vec<&crate::dataset::Observation> = set
        .observations
        .iter()
        .filter(|o| !o.canonical_bundle)
        .collect();
    let table = evaluate(
        &model,
        &obs,
        &crate::render::RasterConfig::default(),
        set.background,
    )
    .map_err(input)?;
    write_atomic(
        &out.join(format!("metrics/eval_{split_name}.txt")),
        table.to_table().as_bytes(),
    )
    .map_err(input)?;
    write_atomic(
        &out.join(format!("metrics/eval_{split_name}.csv")),
        table.to_csv().as_bytes(),
    )
    .map_err(input)?;
    print!("{}", table.to_table());
    Ok(())
}
