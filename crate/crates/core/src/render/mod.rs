//! Cameras, light probe, ray sampling, shading, compositing, the assembled
//! differentiable sample pipeline, and full-frame rendering.

pub mod camera;
pub mod composite;
pub mod pipeline;
pub mod probe;
pub mod renderer;
pub mod sampling;
pub mod shading;

pub use camera::{generate_rays, load_cameras, save_cameras, Camera, Ray};
pub use composite::{composite, composite_backward, composite_weights};
pub use pipeline::{
    backward_ray, evaluate_sample, eval_ray, AxisRemap, FrameContext, ModelCtx, Overrides,
    RayEval, RayUpstream, ReshapeCtx, SampleEval, ShadowMode, SourceFields, UvMask,
};
pub use probe::{probe_geometry, LightProbe};
pub use renderer::{pixel_rng, render_image, FrameBuffers};
pub use sampling::{ray_box_bounds, ray_sample_bounds, sample_points};
pub use shading::{irradiance, shade, shade_backward, transform_normal};
