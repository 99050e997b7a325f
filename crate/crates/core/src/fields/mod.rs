//! Learnable fields: network architectures, flat parameter storage, and the
//! signed-distance-to-density transform.

pub mod density;
pub mod mlp;
pub mod params;

pub use density::{sdf_to_density, sdf_to_density_grad};
pub use mlp::{sigmoid, Activation, MlpSpec, MlpTrace, MlpView};
pub use params::{init_params, FieldParams, ModelSpec, Net, ParamBlock, ParamLayout};
