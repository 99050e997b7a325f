//! Shared fixtures for the criterion benchmarks.

use neca_core::config::ModelConfig;
use neca_core::fields::{init_params, FieldParams, ModelSpec};
use neca_core::oracle::{make_capsule_person, BodySpec};
use neca_core::rig::SkinnedMesh;

pub fn bench_mesh() -> SkinnedMesh {
    make_capsule_person(&BodySpec::default(), 16, 42).expect("default body is valid")
}

pub fn bench_params(mesh: &SkinnedMesh) -> FieldParams {
    let cfg = ModelConfig::default();
    let (lo, hi) = mesh.aabb();
    let spec = ModelSpec::new(
        &cfg,
        mesh.vertices.len(),
        3 * mesh.n_joints(),
        2,
        [lo.x, lo.y, lo.z],
        [hi.x, hi.y, hi.z],
    );
    init_params(spec, 42)
}
