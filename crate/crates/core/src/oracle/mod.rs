//! Ground truth: a synthetic articulated subject, an exact ray-traced
//! renderer, dataset generation, and image metrics.

pub mod capsule;
pub mod dataset;
pub mod metrics;
pub mod raytrace;

pub use capsule::{albedo_texture, albedo_texture_alt, make_capsule_person, BodySpec, N_PARTS};
pub use dataset::{gen_dataset, Dataset, SceneSpec};
pub use metrics::{pearson, psnr, ssim, PSNR_CAP};
pub use raytrace::{
    intersect_brute, intersect_bvh, occluded, ray_triangle, reference_render, GtFrame, RayHit,
};
