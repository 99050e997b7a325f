//! Articulated skinned template: forward/inverse linear blend skinning,
//! nearest-surface queries, vertex normals, and tangent-frame construction.

mod mesh;
mod skinning;
mod surface;
mod tbn;

pub use mesh::{load_poses, save_poses, Joint, Pose, SkinnedMesh};
pub use skinning::{
    blend_apply, blend_rotation, forward_kinematics, inverse_lbs, inverse_lbs_cached, lbs_deform,
    query_skin_weights,
};
pub use surface::{
    closest_point_on_triangle, nearest_surface, nearest_surface_brute, MeshBvh, SurfaceSample,
};
pub use tbn::{compute_tbn, face_tangent, tbn_at, vertex_normals, Frame, TbnBasis};
