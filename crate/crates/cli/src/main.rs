//! `neca`: generate synthetic data, train the neural-field avatar, render
//! it, and apply customizations (relighting, shadow edits, texture/shape
//! edits), plus evaluation against ground truth.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use serde::Serialize;

use neca_core::customize::{
    retexture_binding, shadow_mode, shadow_transfer_binding, validate_reshape, EditSpec,
    ReshapeResources,
};
use neca_core::encode::PoseDictionary;
use neca_core::fields::FieldParams;
use neca_core::io::{save_png_srgb, FloatImage};
use neca_core::oracle::{psnr, ssim, Dataset, SceneSpec};
use neca_core::render::{
    render_image, Camera, FrameContext, LightProbe, ModelCtx, Overrides, UvMask,
};
use neca_core::rig::{Pose, SkinnedMesh};
use neca_core::train::{build_model_spec, restore_checkpoint, train_loop, Checkpoint};
use neca_core::RunConfig;

#[derive(Parser)]
#[command(name = "neca", about = "Neural customizable avatar engine", disable_version_flag = true)]
struct Cli {
    /// Path to a JSON run configuration (defaults are used when omitted).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the configured random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Print the effective configuration as JSON and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with exact ground truth.
    GenData,
    /// Optimize the fields on a dataset; writes checkpoints and a loss log.
    Train {
        /// Dataset directory (output of gen-data).
        #[arg(long)]
        data: PathBuf,
        /// Resume from a checkpoint file.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Render one frame from a trained checkpoint.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Frame index supplying the camera (and, by default, the pose).
        #[arg(long)]
        frame: usize,
        /// Render this (possibly novel) pose index instead of the frame's.
        #[arg(long)]
        pose_index: Option<usize>,
    },
    /// Render under a different light probe.
    Relight {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        frame: usize,
        #[arg(long)]
        pose_index: Option<usize>,
        /// Light probe image (.nfimg, gray or RGB).
        #[arg(long)]
        probe: PathBuf,
    },
    /// Render with an edit applied (shadow/texture/shape changes).
    Edit {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        frame: usize,
        #[arg(long)]
        pose_index: Option<usize>,
        /// JSON edit description.
        #[arg(long)]
        edit: PathBuf,
    },
    /// Compare renders against ground truth; writes metrics.json.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Which frames to evaluate: train, val, or all.
        #[arg(long, default_value = "val")]
        split: String,
    },
}

fn main() {
    if let Err(e) = run() {
        // One machine-parsable line on stderr.
        let msg = format!("{:#}", e).replace('\n', " ");
        eprintln!("error: {}", msg);
        std::process::exit(1);
    }
}

fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("NECA_THREADS") {
        let n: usize = v.parse().context("NECA_THREADS must be a positive integer")?;
        if n == 0 {
            bail!("NECA_THREADS must be a positive integer");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("failed to size the worker pool")?;
    }
    Ok(())
}

fn run() -> anyhow::Result<()> {
    let cli = Cli::parse();
    init_threads()?;

    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.train.seed = seed;
        config.scene.seed = seed;
    }
    config.validate()?;

    if cli.print_config {
        println!("{}", config.to_json_pretty());
        return Ok(());
    }

    match &cli.command {
        Command::GenData => {
            neca_core::oracle::gen_dataset(&config.scene, &cli.out)?;
            println!("dataset written to {}", cli.out.display());
        }
        Command::Train { data, resume } => {
            let ds = Dataset::load(data)?;
            let resume_ck = match resume {
                Some(p) => Some(Checkpoint::load(p)?),
                None => None,
            };
            let out = train_loop(&ds, &config, Some(&cli.out), resume_ck.as_ref())?;
            let last = out.log.last();
            match last {
                Some(r) => println!(
                    "trained {} iterations, final loss {:.6}",
                    out.iteration, r.total
                ),
                None => println!("nothing to do (already at {} iterations)", out.iteration),
            }
        }
        Command::Render { checkpoint, data, frame, pose_index } => {
            let ds = Dataset::load(data)?;
            let (ck_config, params) = load_trained(checkpoint, &ds)?;
            let buffers = render_frame(
                &ck_config, &params, &ds, *frame, *pose_index, None, &Overrides::default(),
            )?;
            save_buffers(&buffers, &cli.out)?;
            println!("rendered frame {} to {}", frame, cli.out.display());
        }
        Command::Relight { checkpoint, data, frame, pose_index, probe } => {
            let ds = Dataset::load(data)?;
            let (ck_config, params) = load_trained(checkpoint, &ds)?;
            let probe = LightProbe::load(probe)?;
            let buffers = render_frame(
                &ck_config, &params, &ds, *frame, *pose_index, Some(probe), &Overrides::default(),
            )?;
            save_buffers(&buffers, &cli.out)?;
            println!("relit frame {} to {}", frame, cli.out.display());
        }
        Command::Edit { checkpoint, data, frame, pose_index, edit } => {
            let ds = Dataset::load(data)?;
            let (ck_config, params) = load_trained(checkpoint, &ds)?;
            let spec = EditSpec::load(edit)?;
            let buffers = render_edited(&ck_config, &params, &ds, *frame, *pose_index, &spec)?;
            save_buffers(&buffers, &cli.out)?;
            println!("edited frame {} to {}", frame, cli.out.display());
        }
        Command::Eval { checkpoint, data, split } => {
            let ds = Dataset::load(data)?;
            let (ck_config, params) = load_trained(checkpoint, &ds)?;
            let report = evaluate(&ck_config, &params, &ds, split)?;
            std::fs::create_dir_all(&cli.out)?;
            let path = cli.out.join("metrics.json");
            std::fs::write(&path, serde_json::to_string_pretty(&report)?)?;
            print_report(&report);
            println!("metrics written to {}", path.display());
        }
    }
    Ok(())
}

/// Load a checkpoint together with the configuration frozen inside it.
/// The dataset supplies the subject the parameter shapes are derived from.
fn load_trained(path: &Path, ds: &Dataset) -> anyhow::Result<(RunConfig, FieldParams)> {
    let ck = Checkpoint::load(path)?;
    let config = RunConfig::from_json_str(&ck.config_json)
        .context("checkpoint carries an unreadable configuration")?;
    let spec = build_model_spec(&config.model, &ds.mesh, ds.poses.len());
    let (params, _adam) = restore_checkpoint(spec, &ck)?;
    Ok((config, params))
}

/// Resolve the pose and pose blend for a render request. Training poses use
/// their own tri-plane; novel poses blend the nearest dictionary entries.
fn resolve_pose(
    config: &RunConfig,
    params: &FieldParams,
    ds: &Dataset,
    frame: usize,
    pose_index: Option<usize>,
) -> anyhow::Result<(Pose, Vec<(usize, f64)>)> {
    if frame >= ds.n_frames() {
        bail!("frame {} out of range ({} frames)", frame, ds.n_frames());
    }
    let pose = match pose_index {
        None => ds.poses[ds.frame_poses[frame]].clone(),
        Some(k) if k < ds.poses.len() => ds.poses[k].clone(),
        Some(k) => {
            let scene: &SceneSpec = &config.scene;
            scene.pose(k, ds.mesh.n_joints())
        }
    };
    let entries = ds
        .poses
        .iter()
        .enumerate()
        .map(|(i, p)| (p.clone(), params.triplane_f64(i)))
        .collect();
    let dict = PoseDictionary::new(entries)?;
    let blend = dict.blend_weights(&pose);
    Ok((pose, blend))
}

fn render_frame(
    config: &RunConfig,
    params: &FieldParams,
    ds: &Dataset,
    frame: usize,
    pose_index: Option<usize>,
    probe_override: Option<LightProbe>,
    overrides: &Overrides,
) -> anyhow::Result<neca_core::render::FrameBuffers> {
    let (pose, blend) = resolve_pose(config, params, ds, frame, pose_index)?;
    let camera: &Camera = &ds.cameras[frame];
    let frame_ctx = FrameContext::new(&ds.mesh, pose, blend, config.render.bbox_dilate)?;
    let model = ModelCtx::new(params, probe_override);
    Ok(render_image(&model, &frame_ctx, camera, &config.render, config.train.seed, overrides))
}

fn render_edited(
    config: &RunConfig,
    params: &FieldParams,
    ds: &Dataset,
    frame: usize,
    pose_index: Option<usize>,
    spec: &EditSpec,
) -> anyhow::Result<neca_core::render::FrameBuffers> {
    // Load edit resources up front; bindings below borrow them.
    let retex: Option<(FieldParams, UvMask, bool)> = match &spec.retexture {
        Some(r) => {
            let src = load_source_params(&r.source_checkpoint)?;
            let mask = neca_core::customize::load_uv_mask(&r.mask)?;
            Some((src, mask, r.swap_shadow))
        }
        None => None,
    };
    let transfer: Option<(FieldParams, UvMask)> = match &spec.shadow_transfer {
        Some(t) => {
            let src = load_source_params(&t.source_checkpoint)?;
            let mask = neca_core::customize::load_uv_mask(&t.mask)?;
            Some((src, mask))
        }
        None => None,
    };
    let reshape: Option<(SkinnedMesh, ReshapeResources)> = match &spec.reshape {
        Some(r) => {
            let edited = SkinnedMesh::load(&r.mesh)?;
            if validate_reshape(&ds.mesh, &edited)? {
                Some((edited, ReshapeResources::new(&ds.mesh)))
            } else {
                None // identity edit: render the original untouched
            }
        }
        None => None,
    };

    let mut overrides = Overrides {
        shadow_mode: shadow_mode(spec.shadow.as_ref()),
        ..Overrides::default()
    };
    if let Some((src, mask, swap)) = &retex {
        overrides.retexture = retexture_binding(params, src, mask, *swap)?;
    }
    if let Some((src, mask)) = &transfer {
        overrides.shadow_transfer = shadow_transfer_binding(params, src, mask)?;
    }

    let (pose, blend) = resolve_pose(config, params, ds, frame, pose_index)?;
    let camera = &ds.cameras[frame];
    let model = ModelCtx::new(params, None);
    let buffers = match &reshape {
        Some((edited, resources)) => {
            overrides.reshape = Some(resources.ctx(&ds.mesh));
            let frame_ctx = FrameContext::new(edited, pose, blend, config.render.bbox_dilate)?;
            render_image(&model, &frame_ctx, camera, &config.render, config.train.seed, &overrides)
        }
        None => {
            let frame_ctx = FrameContext::new(&ds.mesh, pose, blend, config.render.bbox_dilate)?;
            render_image(&model, &frame_ctx, camera, &config.render, config.train.seed, &overrides)
        }
    };
    Ok(buffers)
}

/// A retexture/transfer source: its subject comes from the scene spec
/// frozen in its own checkpoint.
fn load_source_params(path: &Path) -> anyhow::Result<FieldParams> {
    let ck = Checkpoint::load(path)?;
    let config = RunConfig::from_json_str(&ck.config_json)
        .context("source checkpoint carries an unreadable configuration")?;
    let mesh = config.scene.subject()?;
    let spec = build_model_spec(&config.model, &mesh, config.scene.n_poses);
    let (params, _adam) = restore_checkpoint(spec, &ck)?;
    Ok(params)
}

#[derive(Serialize)]
struct FrameMetrics {
    frame: usize,
    split: &'static str,
    psnr: f64,
    psnr_bbox: f64,
    ssim: f64,
}

#[derive(Serialize)]
struct EvalReport {
    frames: Vec<FrameMetrics>,
    mean_psnr: f64,
    mean_psnr_bbox: f64,
    mean_ssim: f64,
}

fn clamp01(img: &FloatImage) -> FloatImage {
    let mut out = img.clone();
    for v in &mut out.data {
        *v = v.clamp(0.0, 1.0);
    }
    out
}

/// Rectangular pixel mask covering the subject's mask bounding box.
fn bbox_mask(mask: &[bool], width: usize, height: usize) -> Vec<bool> {
    let (mut x0, mut y0, mut x1, mut y1) = (width, height, 0usize, 0usize);
    for y in 0..height {
        for x in 0..width {
            if mask[y * width + x] {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
    }
    let mut out = vec![false; width * height];
    if x0 > x1 {
        return out;
    }
    for y in y0..=y1 {
        for x in x0..=x1 {
            out[y * width + x] = true;
        }
    }
    out
}

fn evaluate(
    config: &RunConfig,
    params: &FieldParams,
    ds: &Dataset,
    split: &str,
) -> anyhow::Result<EvalReport> {
    let ids: Vec<(usize, &'static str)> = match split {
        "train" => ds.train_ids.iter().map(|&i| (i, "train")).collect(),
        "val" => ds.val_ids.iter().map(|&i| (i, "val")).collect(),
        "all" => {
            let mut v: Vec<(usize, &'static str)> =
                ds.train_ids.iter().map(|&i| (i, "train")).collect();
            v.extend(ds.val_ids.iter().map(|&i| (i, "val")));
            v.sort_unstable();
            v
        }
        other => bail!("unknown split '{}', expected train, val, or all", other),
    };
    let mut frames = Vec::with_capacity(ids.len());
    for (f, which) in ids {
        let buffers = render_frame(config, params, ds, f, None, None, &Overrides::default())?;
        let pred = clamp01(&buffers.rgb);
        let gt = &ds.frames[f];
        let rect = bbox_mask(&ds.masks[f], gt.width, gt.height);
        frames.push(FrameMetrics {
            frame: f,
            split: which,
            psnr: psnr(&pred, gt, None)?,
            psnr_bbox: psnr(&pred, gt, Some(&rect))?,
            ssim: ssim(&pred, gt)?,
        });
    }
    let n = frames.len().max(1) as f64;
    Ok(EvalReport {
        mean_psnr: frames.iter().map(|m| m.psnr).sum::<f64>() / n,
        mean_psnr_bbox: frames.iter().map(|m| m.psnr_bbox).sum::<f64>() / n,
        mean_ssim: frames.iter().map(|m| m.ssim).sum::<f64>() / n,
        frames,
    })
}

fn print_report(report: &EvalReport) {
    println!("{:>6} {:>6} {:>10} {:>10} {:>8}", "frame", "split", "psnr", "psnr_bbox", "ssim");
    for m in &report.frames {
        println!(
            "{:>6} {:>6} {:>10.3} {:>10.3} {:>8.4}",
            m.frame, m.split, m.psnr, m.psnr_bbox, m.ssim
        );
    }
    println!(
        "{:>6} {:>6} {:>10.3} {:>10.3} {:>8.4}",
        "mean", "-", report.mean_psnr, report.mean_psnr_bbox, report.mean_ssim
    );
}

fn save_buffers(buffers: &neca_core::render::FrameBuffers, out: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(out)?;
    save_png_srgb(&clamp01(&buffers.rgb), &out.join("rgb.png"))?;
    buffers.rgb.save(&out.join("rgb.nfimg"))?;
    buffers.alpha.save(&out.join("alpha.nfimg"))?;
    buffers.normal.save(&out.join("normal.nfimg"))?;
    buffers.albedo.save(&out.join("albedo.nfimg"))?;
    buffers.shadow.save(&out.join("shadow.nfimg"))?;
    buffers.depth.save(&out.join("depth.nfimg"))?;
    Ok(())
}
