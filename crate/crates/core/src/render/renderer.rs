//! Full-frame rendering: rays over all pixels, per-pixel deterministic
//! sampling, and auxiliary buffers composited with the color weights.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::RenderConfig;
use crate::io::FloatImage;
use crate::render::camera::Camera;
use crate::render::composite::composite_weights;
use crate::render::pipeline::{eval_ray, FrameContext, ModelCtx, Overrides};

/// All buffers produced by one render. Auxiliary maps share color's
/// compositing weights.
pub struct FrameBuffers {
    pub rgb: FloatImage,
    pub alpha: FloatImage,
    pub normal: FloatImage,
    pub albedo: FloatImage,
    pub shadow: FloatImage,
    pub depth: FloatImage,
}

impl FrameBuffers {
    fn new(width: usize, height: usize) -> Self {
        FrameBuffers {
            rgb: FloatImage::new(width, height, 3),
            alpha: FloatImage::new(width, height, 1),
            normal: FloatImage::new(width, height, 3),
            albedo: FloatImage::new(width, height, 3),
            shadow: FloatImage::new(width, height, 1),
            depth: FloatImage::new(width, height, 1),
        }
    }
}

/// Deterministic per-pixel RNG stream, independent of traversal order and
/// worker count.
pub fn pixel_rng(seed: u64, x: usize, y: usize) -> ChaCha8Rng {
    let key = seed
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add((y as u64) << 32 | x as u64);
    ChaCha8Rng::seed_from_u64(key)
}

fn finite(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        0.0
    }
}

/// Render a full frame. Output is never NaN; rays that miss the sampling box
/// produce black, zero-alpha pixels (black background).
pub fn render_image(
    model: &ModelCtx,
    frame: &FrameContext,
    camera: &Camera,
    cfg: &RenderConfig,
    seed: u64,
    overrides: &Overrides,
) -> FrameBuffers {
    let width = camera.width;
    let height = camera.height;
    let mut out = FrameBuffers::new(width, height);

    // One row per task keeps results ordered and independent of threads.
    let rows: Vec<Vec<[f64; 12]>> = (0..height)
        .into_par_iter()
        .map(|y| {
            let mut row = vec![[0.0f64; 12]; width];
            for x in 0..width {
                let ray = camera.pixel_ray(x, y);
                let mut rng = pixel_rng(seed, x, y);
                let Some(eval) = eval_ray(
                    model,
                    frame,
                    &ray,
                    cfg.samples_per_ray,
                    cfg.stratified,
                    &mut rng,
                    false,
                    overrides,
                ) else {
                    continue;
                };
                let sigmas: Vec<f64> = eval.samples.iter().map(|s| s.sigma).collect();
                let (w, alpha) = composite_weights(&sigmas, &eval.deltas);
                let px = &mut row[x];
                px[0] = eval.color[0];
                px[1] = eval.color[1];
                px[2] = eval.color[2];
                px[3] = alpha;
                for (i, s) in eval.samples.iter().enumerate() {
                    let wi = w[i];
                    px[4] += wi * s.n_o.x;
                    px[5] += wi * s.n_o.y;
                    px[6] += wi * s.n_o.z;
                    px[7] += wi * s.a[0];
                    px[8] += wi * s.a[1];
                    px[9] += wi * s.a[2];
                    px[10] += wi * s.v;
                    px[11] += wi * eval.ts[i];
                }
            }
            row
        })
        .collect();

    for (y, row) in rows.iter().enumerate() {
        for (x, px) in row.iter().enumerate() {
            for c in 0..3 {
                out.rgb.pixel_mut(x, y)[c] = finite(px[c]);
                out.normal.pixel_mut(x, y)[c] = finite(px[4 + c]);
                out.albedo.pixel_mut(x, y)[c] = finite(px[7 + c]);
            }
            out.alpha.pixel_mut(x, y)[0] = finite(px[3]);
            out.shadow.pixel_mut(x, y)[0] = finite(px[10]);
            out.depth.pixel_mut(x, y)[0] = finite(px[11]);
        }
    }
    out
}
