use serde::{Deserialize, Serialize};

use crate::encode::LocalCoordMode;
use crate::oracle::SceneSpec;
use crate::train::TrainConfig;
use crate::{Error, Result};

/// Canonical JSON run configuration covering every module's tunables.
/// Unknown keys are rejected; a dumped config re-parses identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub scene: SceneSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub render: RenderConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub triplane: TriPlaneConfig,
    /// Per-vertex latent code width.
    pub code_dim: usize,
    pub geo: MlpConfig,
    pub shadow: MlpConfig,
    pub albedo: MlpConfig,
    /// Width of the geometry latent `h` fed to the shadow and albedo nets.
    pub latent_dim: usize,
    /// Positional-encoding frequency counts.
    pub freq_local: usize,
    pub freq_canonical: usize,
    pub freq_dir: usize,
    pub softplus_sharpness: f64,
    pub beta_init: f64,
    pub beta_min: f64,
    pub probe_height: usize,
    pub probe_width: usize,
    /// Initial texel value of the learnable gray probe.
    pub probe_init: f64,
    /// Radius of the sphere the SDF is initialized to.
    pub sphere_init_radius: f64,
    /// Central-difference step for spatial SDF gradients (canonical units).
    pub fd_epsilon: f64,
    pub local_coord_mode: LocalCoordMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            triplane: TriPlaneConfig::default(),
            code_dim: 16,
            geo: MlpConfig {
                width: 64,
                depth: 4,
                skip_layer: Some(2),
            },
            shadow: MlpConfig {
                width: 64,
                depth: 3,
                skip_layer: None,
            },
            albedo: MlpConfig {
                width: 64,
                depth: 3,
                skip_layer: None,
            },
            latent_dim: 32,
            freq_local: 4,
            freq_canonical: 6,
            freq_dir: 4,
            softplus_sharpness: 100.0,
            beta_init: 0.1,
            beta_min: 1e-4,
            probe_height: 16,
            probe_width: 32,
            probe_init: 0.8,
            sphere_init_radius: 0.35,
            fd_epsilon: 1e-3,
            local_coord_mode: LocalCoordMode::Tangent,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TriPlaneConfig {
    pub l_xy: usize,
    pub l_z: usize,
    pub d: usize,
    pub r: usize,
    /// Fractional dilation of the canonical mesh AABB forming the domain box.
    pub box_dilate: f64,
}

impl Default for TriPlaneConfig {
    fn default() -> Self {
        TriPlaneConfig {
            l_xy: 24,
            l_z: 12,
            d: 8,
            r: 4,
            box_dilate: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MlpConfig {
    pub width: usize,
    pub depth: usize,
    /// Hidden-layer index whose input is concatenated with the network input.
    pub skip_layer: Option<usize>,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            width: 64,
            depth: 3,
            skip_layer: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    pub samples_per_ray: usize,
    /// Fractional dilation of the posed-mesh AABB bounding ray samples.
    pub bbox_dilate: f64,
    pub stratified: bool,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            samples_per_ray: 32,
            bbox_dilate: 0.15,
            stratified: true,
        }
    }
}

impl RunConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)?;
        Self::from_json_str(&s)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Canonical single-line JSON, used in checkpoints.
    pub fn to_json_canonical(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        if m.triplane.r < 1 || m.triplane.l_xy < 2 || m.triplane.l_z < 2 {
            return Err(Error::InvalidConfig("triplane dims too small".into()));
        }
        if m.beta_init <= m.beta_min || m.beta_min <= 0.0 {
            return Err(Error::InvalidConfig("beta_init must exceed beta_min > 0".into()));
        }
        for (name, mlp) in [("geo", &m.geo), ("shadow", &m.shadow), ("albedo", &m.albedo)] {
            if mlp.width < 1 || mlp.depth < 1 {
                return Err(Error::InvalidConfig(format!("{} mlp too small", name)));
            }
            if let Some(skip) = mlp.skip_layer {
                if skip >= mlp.depth {
                    return Err(Error::InvalidConfig(format!(
                        "{} skip layer {} out of depth {}",
                        name, skip, mlp.depth
                    )));
                }
            }
        }
        self.train.validate()?;
        self.scene.validate()?;
        if self.render.samples_per_ray < 1 {
            return Err(Error::InvalidConfig("samples_per_ray must be >= 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let cfg = RunConfig::default();
        let s = cfg.to_json_pretty();
        let back = RunConfig::from_json_str(&s).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::from_json_str(r#"{"modle": {}}"#);
        assert!(err.is_err());
    }
}
