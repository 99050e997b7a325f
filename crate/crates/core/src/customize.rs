//! Customization: relighting, shadow control, shadow/texture transfer
//! between subjects, and shape edits. These build the inference-time
//! substitutions consumed by the renderer; edits that turn out to be
//! identities are dropped entirely so the output stays bit-identical to an
//! unedited render.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::fields::FieldParams;
use crate::io::load_mask_png;
use crate::render::{AxisRemap, LightProbe, ReshapeCtx, ShadowMode, SourceFields, UvMask};
use crate::rig::{SkinnedMesh, TbnBasis};
use crate::{Error, Result};

/// A JSON edit description (the `edit` command's input).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EditSpec {
    pub shadow: Option<ShadowSpec>,
    pub shadow_transfer: Option<TransferSpec>,
    pub retexture: Option<RetextureSpec>,
    pub reshape: Option<ReshapeSpec>,
}

/// Shadow override: `off` disables shadowing (factor 1), `constant` forces
/// a fixed factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum ShadowSpec {
    Off,
    Constant { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferSpec {
    pub source_checkpoint: PathBuf,
    pub mask: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetextureSpec {
    pub source_checkpoint: PathBuf,
    pub mask: PathBuf,
    #[serde(default)]
    pub swap_shadow: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReshapeSpec {
    pub mesh: PathBuf,
}

impl EditSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let spec: EditSpec = serde_json::from_reader(std::io::BufReader::new(file))?;
        Ok(spec)
    }
}

/// Shadow override as a render-time mode. No spec means the learned field.
pub fn shadow_mode(spec: Option<&ShadowSpec>) -> ShadowMode {
    match spec {
        None => ShadowMode::Learned,
        Some(ShadowSpec::Off) => ShadowMode::Constant(1.0),
        Some(ShadowSpec::Constant { value }) => ShadowMode::Constant(*value),
    }
}

/// Load a UV-space mask from an 8-bit grayscale PNG (texels >= 128 are in).
pub fn load_uv_mask(path: &Path) -> Result<UvMask> {
    let (width, height, data) = load_mask_png(path)?;
    Ok(UvMask { width, height, data })
}

/// Relighting probe. Validation (shape, non-negativity) happens on load.
pub fn load_relight_probe(path: &Path) -> Result<LightProbe> {
    LightProbe::load(path)
}

fn remap_between(target: &FieldParams, source: &FieldParams) -> AxisRemap {
    let t = &target.spec.tp_dims;
    let s = &source.spec.tp_dims;
    AxisRemap::between(
        &nalgebra::Point3::new(t.box_lo[0], t.box_lo[1], t.box_lo[2]),
        &nalgebra::Point3::new(t.box_hi[0], t.box_hi[1], t.box_hi[2]),
        &nalgebra::Point3::new(s.box_lo[0], s.box_lo[1], s.box_lo[2]),
        &nalgebra::Point3::new(s.box_hi[0], s.box_hi[1], s.box_hi[2]),
    )
}

fn is_identity_remap(r: &AxisRemap) -> bool {
    r.scale == [1.0; 3] && r.offset == [0.0; 3]
}

/// Same parameter vector and conditioning shape: substituting the source
/// for the target changes nothing.
fn is_identity_source(target: &FieldParams, source: &FieldParams) -> bool {
    target.spec == source.spec
        && target
            .data
            .iter()
            .zip(&source.data)
            .all(|(a, b)| a.to_bits() == b.to_bits())
}

fn check_compatible(target: &FieldParams, source: &FieldParams, with_shadow: bool) -> Result<()> {
    let t = &target.spec;
    let s = &source.spec;
    let mut ok = t.geo == s.geo && t.albedo == s.albedo && t.latent_dim == s.latent_dim;
    if with_shadow {
        ok = ok && t.shadow == s.shadow;
    }
    if !ok {
        return Err(Error::Edit(
            "source and target field networks have different architectures".into(),
        ));
    }
    Ok(())
}

/// Texture transfer: inside the mask, albedo (and optionally shadow) come
/// from the source subject queried at bbox-remapped canonical points.
/// Returns `None` when the edit is an identity (empty mask, or the source
/// is bitwise the target with an identity remap).
pub fn retexture_binding<'a>(
    target: &FieldParams,
    source: &'a FieldParams,
    mask: &'a UvMask,
    swap_shadow: bool,
) -> Result<Option<(SourceFields<'a>, &'a UvMask, bool)>> {
    check_compatible(target, source, swap_shadow)?;
    if mask.data.iter().all(|m| !m) {
        return Ok(None);
    }
    let remap = remap_between(target, source);
    if is_identity_remap(&remap) && is_identity_source(target, source) {
        return Ok(None);
    }
    Ok(Some((SourceFields::new(source, remap), mask, swap_shadow)))
}

/// Shadow transfer: inside the mask the shadow field comes from the source
/// subject. Same identity short-circuits as [`retexture_binding`].
pub fn shadow_transfer_binding<'a>(
    target: &FieldParams,
    source: &'a FieldParams,
    mask: &'a UvMask,
) -> Result<Option<(SourceFields<'a>, &'a UvMask)>> {
    check_compatible(target, source, true)?;
    if mask.data.iter().all(|m| !m) {
        return Ok(None);
    }
    let remap = remap_between(target, source);
    if is_identity_remap(&remap) && is_identity_source(target, source) {
        return Ok(None);
    }
    Ok(Some((SourceFields::new(source, remap), mask)))
}

/// Validate a shape edit against the original subject. The edited mesh must
/// keep the original's topology, UVs, skeleton, and weights; only vertex
/// positions may move. Returns false when the edit is an identity.
pub fn validate_reshape(original: &SkinnedMesh, edited: &SkinnedMesh) -> Result<bool> {
    edited.validate()?;
    if edited.triangles != original.triangles
        || edited.uvs != original.uvs
        || edited.skin_weights != original.skin_weights
        || edited.skeleton.len() != original.skeleton.len()
    {
        return Err(Error::Edit(
            "edited mesh must share the original topology, UVs, weights, and skeleton".into(),
        ));
    }
    Ok(edited.vertices != original.vertices)
}

/// Resources a reshape render needs from the *original* subject. The frame
/// itself is built over the edited mesh; queries are pulled back here.
pub struct ReshapeResources {
    pub tbn: TbnBasis,
}

impl ReshapeResources {
    pub fn new(original: &SkinnedMesh) -> Self {
        ReshapeResources {
            tbn: crate::rig::compute_tbn(&original.vertices, &original.triangles, &original.uvs),
        }
    }

    pub fn ctx<'a>(&'a self, original: &'a SkinnedMesh) -> ReshapeCtx<'a> {
        ReshapeCtx {
            orig_vertices: &original.vertices,
            orig_canon_tbn: &self.tbn,
        }
    }
}
