//! Dual-space feature extraction: pose-aware features from CP-factorized
//! tri-planes with a pose dictionary, and subject-level features from
//! tangent-space local coordinates plus UV latent codes.

mod coords;
mod posedict;
mod triplane;

pub use coords::{
    alt_local_coord, local_tangent_coord, positional_encoding, positional_encoding_backward,
    positional_encoding_len, subject_feature, uv_latent, LocalCoordMode,
};
pub use posedict::{PoseDictionary, TOP_K};
pub use triplane::{
    dilated_box, FactorizedTriPlane, PlaneFactors, TriPlaneDims, TriPlaneTrace, PLANE_AXES,
};
