//! The training loop: deterministic ray batches, exact gradients, Adam, and
//! periodic checkpoints.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, RunConfig};
use crate::encode::dilated_box;
use crate::fields::{init_params, FieldParams, ModelSpec};
use crate::oracle::Dataset;
use crate::render::pipeline::{backward_ray, eval_ray, FrameContext, ModelCtx, Overrides, RayUpstream};
use crate::rig::SkinnedMesh;
use crate::train::adam::{adam_step, lr_schedule, AdamState};
use crate::train::checkpoint::{Checkpoint, VERSION};
use crate::train::loss::{
    eikonal_term_grad, loss_color_grad, mask_term, normal_reg_term_grad, total_loss, LossParts,
};
use crate::{Error, Result};

/// Optimization settings. Loss weights follow the reference configuration;
/// the perceptual term is schema-retained but unused (weight 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub iterations: u64,
    pub rays_per_batch: usize,
    pub samples_per_ray: usize,
    pub lambda_p: f64,
    pub lambda_m: f64,
    pub lambda_e: f64,
    pub lambda_n: f64,
    pub lr_start: f64,
    pub lr_end: f64,
    /// Mask-loss sharpness: BCE of sigmoid(-rho * min SDF).
    pub rho: f64,
    pub seed: u64,
    pub checkpoint_every: u64,
    /// Fraction of rays drawn inside the mask's bounding box (rest uniform).
    pub mask_bbox_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 5000,
            rays_per_batch: 1024,
            samples_per_ray: 64,
            lambda_p: 0.0,
            lambda_m: 1.0,
            lambda_e: 0.1,
            lambda_n: 0.1,
            lr_start: 5e-4,
            lr_end: 1e-4,
            rho: 50.0,
            seed: 0,
            checkpoint_every: 1000,
            mask_bbox_fraction: 0.8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::InvalidConfig("iterations must be >= 1".into()));
        }
        if self.lambda_p < 0.0 || self.lambda_m < 0.0 || self.lambda_e < 0.0 || self.lambda_n < 0.0 {
            return Err(Error::InvalidConfig("loss weights must be non-negative".into()));
        }
        if self.lr_end > self.lr_start || self.lr_start <= 0.0 {
            return Err(Error::InvalidConfig("need 0 < lr_end <= lr_start".into()));
        }
        if self.rays_per_batch < 1 || self.samples_per_ray < 1 {
            return Err(Error::InvalidConfig("batch shape must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.mask_bbox_fraction) {
            return Err(Error::InvalidConfig("mask_bbox_fraction must be in [0,1]".into()));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogRecord {
    pub iter: u64,
    pub lr: f64,
    #[serde(rename = "L_c")]
    pub l_c: f64,
    #[serde(rename = "L_m")]
    pub l_m: f64,
    #[serde(rename = "L_e")]
    pub l_e: f64,
    #[serde(rename = "L_n")]
    pub l_n: f64,
    pub total: f64,
    pub wall_ms: f64,
}

pub struct TrainOutput {
    pub params: FieldParams,
    pub adam: AdamState,
    pub iteration: u64,
    pub log: Vec<LogRecord>,
}

/// Resolve the model shape from the configuration and the subject.
pub fn build_model_spec(cfg: &ModelConfig, mesh: &SkinnedMesh, n_poses: usize) -> ModelSpec {
    let (lo, hi) = mesh.aabb();
    let (box_lo, box_hi) = dilated_box(&lo, &hi, cfg.triplane.box_dilate);
    ModelSpec::new(
        cfg,
        mesh.vertices.len(),
        3 * mesh.n_joints(),
        n_poses,
        box_lo,
        box_hi,
    )
}

/// Parameter blocks + optimizer moments as a checkpoint.
pub fn make_checkpoint(params: &FieldParams, adam: &AdamState, iteration: u64, config: &RunConfig) -> Checkpoint {
    let mut blocks = Vec::with_capacity(params.layout.blocks.len() + 2);
    for b in &params.layout.blocks {
        blocks.push((
            b.name.clone(),
            b.dims.clone(),
            params.data[b.offset..b.offset + b.len].to_vec(),
        ));
    }
    blocks.push(("adam.m".into(), vec![adam.m.len()], adam.m.clone()));
    blocks.push(("adam.v".into(), vec![adam.v.len()], adam.v.clone()));
    Checkpoint {
        version: VERSION,
        iteration,
        config_json: config.to_json_canonical(),
        blocks,
    }
}

/// Restore parameters and optimizer state saved by [`make_checkpoint`].
pub fn restore_checkpoint(spec: ModelSpec, ck: &Checkpoint) -> Result<(FieldParams, AdamState)> {
    let mut params = FieldParams::zeros(spec);
    for b in params.layout.blocks.clone().iter() {
        let (_, dims, payload) = ck.block(&b.name)?;
        if *dims != b.dims {
            return Err(Error::Checkpoint(format!(
                "block '{}' has dims {:?}, expected {:?}",
                b.name, dims, b.dims
            )));
        }
        params.data[b.offset..b.offset + b.len].copy_from_slice(payload);
    }
    let total = params.layout.total;
    let (_, _, m) = ck.block("adam.m")?;
    let (_, _, v) = ck.block("adam.v")?;
    if m.len() != total || v.len() != total {
        return Err(Error::Checkpoint("optimizer moment size mismatch".into()));
    }
    let adam = AdamState {
        m: m.clone(),
        v: v.clone(),
        t: ck.iteration,
    };
    Ok((params, adam))
}

/// Deterministic per-iteration RNG derived from the master seed.
fn iter_rng(seed: u64, iter: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x2545_f491_4f6c_dd1d).wrapping_add(iter))
}

/// Tight pixel bounding box of a mask, or the full image when empty.
fn mask_bbox(mask: &[bool], width: usize, height: usize) -> (usize, usize, usize, usize) {
    let mut x0 = width;
    let mut y0 = height;
    let mut x1 = 0usize;
    let mut y1 = 0usize;
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
    if x0 > x1 {
        (0, 0, width - 1, height - 1)
    } else {
        (x0, y0, x1, y1)
    }
}

struct ChunkResult {
    grad: Vec<f64>,
    color_sum: f64,
    mask_sum: f64,
    eik_sum: f64,
    eik_count: usize,
    norm_sum: f64,
}

/// Gradient and loss parts for one iteration's ray batch. Rays are processed
/// in fixed-size chunks merged in order, so results do not depend on the
/// worker count.
#[allow(clippy::too_many_arguments)]
pub fn batch_gradient(
    model: &ModelCtx,
    frame_ctx: &FrameContext,
    rays: &[(crate::render::Ray, [f64; 3], bool, u64)],
    cfg: &TrainConfig,
    grad: &mut [f64],
) -> (LossParts, usize) {
    let overrides = Overrides::default();
    // First pass: which rays produce samples (cheap bbox test).
    let valid: Vec<bool> = rays
        .iter()
        .map(|(ray, _, _, _)| {
            crate::render::ray_sample_bounds(ray, &frame_ctx.box_lo, &frame_ctx.box_hi).is_some()
        })
        .collect();
    let n_valid = valid.iter().filter(|v| **v).count();
    if n_valid == 0 {
        return (LossParts::zero(), 0);
    }
    let n_ray_f = n_valid as f64;
    let n_sample_f = (n_valid * cfg.samples_per_ray) as f64;

    const CHUNK: usize = 16;
    let chunks: Vec<ChunkResult> = rays
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut res = ChunkResult {
                grad: vec![0.0; grad.len()],
                color_sum: 0.0,
                mask_sum: 0.0,
                eik_sum: 0.0,
                eik_count: 0,
                norm_sum: 0.0,
            };
            for (ray, gt_rgb, in_mask, ray_seed) in chunk {
                let mut rng = ChaCha8Rng::seed_from_u64(*ray_seed);
                let Some(eval) = eval_ray(
                    model,
                    frame_ctx,
                    ray,
                    cfg.samples_per_ray,
                    true,
                    &mut rng,
                    true,
                    &overrides,
                ) else {
                    continue;
                };
                // Color.
                let d_color = loss_color_grad(&eval.color, gt_rgb, n_valid);
                res.color_sum += (0..3)
                    .map(|c| (eval.color[c] - gt_rgb[c]).powi(2))
                    .sum::<f64>();
                // Mask.
                let (m_loss, m_grad) = mask_term(eval.d_min, *in_mask, cfg.rho);
                res.mask_sum += m_loss;
                let d_dmin = cfg.lambda_m * m_grad / n_ray_f;
                // Eikonal + normal regularizer per sample.
                let mut d_gradnorm = Vec::with_capacity(eval.samples.len());
                let mut d_nc = Vec::with_capacity(eval.samples.len());
                for s in &eval.samples {
                    res.eik_sum += (s.grad_d_norm - 1.0).powi(2);
                    res.eik_count += 1;
                    d_gradnorm.push(cfg.lambda_e * eikonal_term_grad(s.grad_d_norm) / n_sample_f);
                    res.norm_sum += (-s.n_c.dot(&s.n_s)).max(0.0);
                    d_nc.push(
                        cfg.lambda_n * normal_reg_term_grad(&s.n_c, &s.n_s) / n_sample_f,
                    );
                }
                let up = RayUpstream {
                    d_color,
                    d_alpha: 0.0,
                    d_dmin,
                    d_gradnorm,
                    d_nc,
                };
                backward_ray(model, frame_ctx, &eval, &up, &mut res.grad);
            }
            res
        })
        .collect();

    let mut parts = LossParts::zero();
    let mut eik_count = 0usize;
    for c in &chunks {
        for (g, cg) in grad.iter_mut().zip(&c.grad) {
            *g += cg;
        }
        parts.color += c.color_sum;
        parts.mask += c.mask_sum;
        parts.eikonal += c.eik_sum;
        parts.normal += c.norm_sum;
        eik_count += c.eik_count;
    }
    parts.color /= n_ray_f;
    parts.mask /= n_ray_f;
    if eik_count > 0 {
        parts.eikonal /= eik_count as f64;
        parts.normal /= eik_count as f64;
    }
    (parts, n_valid)
}

/// Run (or resume) training. Checkpoints and a JSONL loss log are written
/// under `out_dir` when given; a NaN loss aborts, leaving the last
/// checkpoint in place.
pub fn train_loop(
    dataset: &Dataset,
    config: &RunConfig,
    out_dir: Option<&Path>,
    resume: Option<&Checkpoint>,
) -> Result<TrainOutput> {
    config.validate()?;
    let cfg = &config.train;
    let spec = build_model_spec(&config.model, &dataset.mesh, dataset.poses.len());
    let (mut params, mut adam, start_iter) = match resume {
        Some(ck) => {
            let (p, a) = restore_checkpoint(spec, ck)?;
            let it = ck.iteration;
            (p, a, it)
        }
        None => {
            let p = init_params(spec, cfg.seed);
            let n = p.layout.total;
            (p, AdamState::new(n), 0)
        }
    };

    // Per-pose frame contexts; training poses bind their own tri-plane.
    let contexts: Vec<FrameContext> = dataset
        .poses
        .iter()
        .enumerate()
        .map(|(pid, pose)| {
            FrameContext::new(
                &dataset.mesh,
                pose.clone(),
                vec![(pid, 1.0)],
                config.render.bbox_dilate,
            )
        })
        .collect::<Result<_>>()?;
    let bboxes: Vec<(usize, usize, usize, usize)> = dataset
        .train_ids
        .iter()
        .map(|&f| {
            let cam = &dataset.cameras[f];
            mask_bbox(&dataset.masks[f], cam.width, cam.height)
        })
        .collect();

    let mut log_file = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            Some(std::fs::File::create(dir.join("log.jsonl"))?)
        }
        None => None,
    };
    let mut log = Vec::new();
    let mut grad = vec![0.0f64; params.layout.total];

    for iter in start_iter..cfg.iterations {
        let t0 = Instant::now();
        let mut rng = iter_rng(cfg.seed, iter);

        // One training frame per iteration.
        let fidx = rng.gen_range(0..dataset.train_ids.len());
        let frame_id = dataset.train_ids[fidx];
        let cam = &dataset.cameras[frame_id];
        let pose_id = dataset.frame_poses[frame_id];
        let frame_ctx = &contexts[pose_id];
        let mask = &dataset.masks[frame_id];
        let rgb = &dataset.frames[frame_id];
        let (bx0, by0, bx1, by1) = bboxes[fidx];

        // Pixel batch: mask-bbox biased + uniform remainder.
        let n_bbox = (cfg.rays_per_batch as f64 * cfg.mask_bbox_fraction) as usize;
        let mut rays = Vec::with_capacity(cfg.rays_per_batch);
        for r in 0..cfg.rays_per_batch {
            let (x, y) = if r < n_bbox {
                (rng.gen_range(bx0..=bx1), rng.gen_range(by0..=by1))
            } else {
                (rng.gen_range(0..cam.width), rng.gen_range(0..cam.height))
            };
            let ray = cam.pixel_ray(x, y);
            let px = rgb.pixel(x, y);
            let gt = [px[0], px[1], px[2]];
            let inside = mask[y * cam.width + x];
            let ray_seed: u64 = rng.gen();
            rays.push((ray, gt, inside, ray_seed));
        }

        let model = ModelCtx::new(&params, None);
        grad.iter_mut().for_each(|g| *g = 0.0);
        let (parts, _n_valid) = batch_gradient(&model, frame_ctx, &rays, cfg, &mut grad);
        drop(model);

        let total = total_loss(&parts, cfg.lambda_p, cfg.lambda_m, cfg.lambda_e, cfg.lambda_n);
        if !total.is_finite() {
            return Err(Error::NonFinite(format!("loss at iteration {}", iter)));
        }
        let lr = lr_schedule(iter, cfg.iterations, cfg.lr_start, cfg.lr_end);
        adam_step(&mut params.data, &grad, &mut adam, lr);
        // Keep the density scale above its floor and the probe non-negative.
        {
            let beta_min = params.spec.beta_min as f32;
            let b = params.block_mut("beta")?;
            if b[0] < beta_min {
                b[0] = beta_min;
            }
            for v in params.block_mut("probe")?.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        params.assert_finite()?;

        let record = LogRecord {
            iter,
            lr,
            l_c: parts.color,
            l_m: parts.mask,
            l_e: parts.eikonal,
            l_n: parts.normal,
            total,
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
        };
        if let Some(f) = log_file.as_mut() {
            writeln!(f, "{}", serde_json::to_string(&record)?)?;
        }
        log.push(record);

        let done = iter + 1;
        if let Some(dir) = out_dir {
            if done % cfg.checkpoint_every == 0 || done == cfg.iterations {
                let ck = make_checkpoint(&params, &adam, done, config);
                ck.save(&dir.join(format!("checkpoint_{:07}.ckpt", done)))?;
                ck.save(&dir.join("checkpoint_final.ckpt"))?;
            }
        }
    }

    Ok(TrainOutput {
        params,
        adam,
        iteration: cfg.iterations,
        log,
    })
}
