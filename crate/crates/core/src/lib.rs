// Index-based loops are kept where they mirror the tensor/matrix notation
// of the quantities being computed.
#![allow(clippy::needless_range_loop)]

//! Core engine for learning disentangled neural fields (signed distance,
//! albedo, shadow) plus an environment light probe for an articulated
//! character, and rendering/editing the result.
//!
//! Module map:
//! - [`rig`]: skinned template, forward/inverse LBS, nearest-surface queries,
//!   tangent frames.
//! - [`encode`]: CP-factorized tri-planes with a pose dictionary, tangent-space
//!   local coordinates, UV latent codes, positional encoding.
//! - [`fields`]: the three MLP fields, SDF-to-density, parameter storage and
//!   initialization.
//! - [`render`]: cameras, ray sampling, probe shading, volumetric compositing,
//!   and the fully differentiable per-ray pipeline.
//! - [`train`]: losses, Adam, schedule, training loop, checkpoints.
//! - [`customize`]: relighting, shadow edits, retexture, reshape.
//! - [`oracle`]: procedural ground-truth scenes, ray-traced reference renderer,
//!   dataset emission, PSNR/SSIM.

pub mod config;
pub mod customize;
pub mod encode;
pub mod error;
pub mod fields;
pub mod io;
pub mod oracle;
pub mod render;
pub mod rig;
pub mod train;

pub use config::RunConfig;
pub use error::Error;

pub type Result<T> = std::result::Result<T, Error>;
