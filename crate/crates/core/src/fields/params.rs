//! Flat parameter storage for every learnable quantity.
//!
//! All parameters live in one `Vec<f32>` partitioned into named blocks, so
//! checkpoints, the optimizer, and gradient buffers all share one layout.
//! Compute happens in `f64`; storing in `f32` makes a save/load round trip
//! lossless, which in turn makes resumed runs bit-identical.

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{MlpConfig, ModelConfig};
use crate::encode::{
    positional_encoding_len, FactorizedTriPlane, LocalCoordMode, TriPlaneDims,
};
use crate::fields::mlp::{Activation, MlpSpec, MlpView};
use crate::{Error, Result};

/// Fully resolved model shape: the static configuration combined with the
/// quantities that depend on the subject (vertex count, pose count, domain box).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub geo: MlpSpec,
    pub shadow: MlpSpec,
    pub albedo: MlpSpec,
    pub tp_dims: TriPlaneDims,
    pub n_poses: usize,
    pub n_vertices: usize,
    pub code_dim: usize,
    pub latent_dim: usize,
    /// Length of a flattened pose vector (3 per joint).
    pub pose_dim: usize,
    pub freq_local: usize,
    pub freq_canonical: usize,
    pub freq_dir: usize,
    pub probe_height: usize,
    pub probe_width: usize,
    pub probe_channels: usize,
    pub beta_init: f64,
    pub beta_min: f64,
    pub probe_init: f64,
    pub fd_epsilon: f64,
    pub local_coord_mode: LocalCoordMode,
    /// Center and radius of the sphere prior added to the raw SDF output.
    pub sphere_center: [f64; 3],
    pub sphere_radius: f64,
}

fn mlp_spec(cfg: &MlpConfig, input_dim: usize, output_dim: usize, hidden: Activation, output: Activation) -> MlpSpec {
    MlpSpec {
        input_dim,
        width: cfg.width,
        depth: cfg.depth,
        output_dim,
        hidden_activation: hidden,
        output_activation: output,
        skip_layer: cfg.skip_layer,
    }
}

impl ModelSpec {
    pub fn new(
        cfg: &ModelConfig,
        n_vertices: usize,
        pose_dim: usize,
        n_poses: usize,
        box_lo: [f64; 3],
        box_hi: [f64; 3],
    ) -> Self {
        let tp_dims = TriPlaneDims {
            l_xy: cfg.triplane.l_xy,
            l_z: cfg.triplane.l_z,
            d: cfg.triplane.d,
            r: cfg.triplane.r,
            box_lo,
            box_hi,
        };
        let enc_canon = positional_encoding_len(3, cfg.freq_canonical);
        let enc_local = positional_encoding_len(3, cfg.freq_local);
        let enc_dir = positional_encoding_len(3, cfg.freq_dir);
        let subject_dim = enc_local + cfg.code_dim;
        let pose_feat_dim = 3 * cfg.triplane.d + pose_dim;
        let geo_in = enc_canon + subject_dim + pose_feat_dim;
        let geo = mlp_spec(
            &cfg.geo,
            geo_in,
            1 + cfg.latent_dim,
            Activation::Softplus {
                sharpness: cfg.softplus_sharpness,
            },
            Activation::Identity,
        );
        let shadow = mlp_spec(
            &cfg.shadow,
            2 * enc_dir + cfg.latent_dim,
            1,
            Activation::Relu,
            Activation::Sigmoid,
        );
        let albedo = mlp_spec(
            &cfg.albedo,
            enc_canon + cfg.latent_dim,
            3,
            Activation::Relu,
            Activation::Sigmoid,
        );
        let sphere_center = [
            0.5 * (box_lo[0] + box_hi[0]),
            0.5 * (box_lo[1] + box_hi[1]),
            0.5 * (box_lo[2] + box_hi[2]),
        ];
        ModelSpec {
            geo,
            shadow,
            albedo,
            tp_dims,
            n_poses,
            n_vertices,
            code_dim: cfg.code_dim,
            latent_dim: cfg.latent_dim,
            pose_dim,
            freq_local: cfg.freq_local,
            freq_canonical: cfg.freq_canonical,
            freq_dir: cfg.freq_dir,
            probe_height: cfg.probe_height,
            probe_width: cfg.probe_width,
            probe_channels: 1,
            beta_init: cfg.beta_init,
            beta_min: cfg.beta_min,
            probe_init: cfg.probe_init,
            fd_epsilon: cfg.fd_epsilon,
            local_coord_mode: cfg.local_coord_mode,
            sphere_center,
            sphere_radius: cfg.sphere_init_radius,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlock {
    pub name: String,
    pub dims: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone)]
pub struct ParamLayout {
    pub blocks: Vec<ParamBlock>,
    pub total: usize,
    index: HashMap<String, usize>,
}

impl ParamLayout {
    pub fn build(spec: &ModelSpec) -> Self {
        let mut blocks = Vec::new();
        let mut offset = 0usize;
        let mut push = |name: String, dims: Vec<usize>, blocks: &mut Vec<ParamBlock>| {
            let len: usize = dims.iter().product();
            blocks.push(ParamBlock {
                name,
                dims,
                offset,
                len,
            });
            offset += len;
        };
        for (prefix, mlp) in [("geo", &spec.geo), ("shadow", &spec.shadow), ("albedo", &spec.albedo)] {
            for i in 0..mlp.n_layers() {
                let (fin, fout) = mlp.layer_dims(i);
                push(format!("{}.w{}", prefix, i), vec![fout, fin], &mut blocks);
                push(format!("{}.b{}", prefix, i), vec![fout], &mut blocks);
            }
        }
        push("codes".into(), vec![spec.n_vertices, spec.code_dim], &mut blocks);
        push(
            "probe".into(),
            vec![spec.probe_height, spec.probe_width, spec.probe_channels],
            &mut blocks,
        );
        push("beta".into(), vec![1], &mut blocks);
        for p in 0..spec.n_poses {
            push(format!("triplane.{}", p), vec![spec.tp_dims.param_count()], &mut blocks);
        }
        let index = blocks
            .iter()
            .enumerate()
            .map(|(i, b)| (b.name.clone(), i))
            .collect();
        ParamLayout {
            blocks,
            total: offset,
            index,
        }
    }

    pub fn block(&self, name: &str) -> Result<&ParamBlock> {
        self.index
            .get(name)
            .map(|&i| &self.blocks[i])
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter block '{}'", name)))
    }
}

/// All learnable parameters plus the spec and layout that interpret them.
#[derive(Debug, Clone)]
pub struct FieldParams {
    pub spec: ModelSpec,
    pub layout: Arc<ParamLayout>,
    pub data: Vec<f32>,
}

/// Which of the three networks a view or gradient refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Net {
    Geo,
    Shadow,
    Albedo,
}

impl Net {
    pub fn prefix(&self) -> &'static str {
        match self {
            Net::Geo => "geo",
            Net::Shadow => "shadow",
            Net::Albedo => "albedo",
        }
    }
}

impl FieldParams {
    pub fn zeros(spec: ModelSpec) -> Self {
        let layout = Arc::new(ParamLayout::build(&spec));
        let data = vec![0.0f32; layout.total];
        FieldParams { spec, layout, data }
    }

    pub fn block(&self, name: &str) -> Result<&[f32]> {
        let b = self.layout.block(name)?;
        Ok(&self.data[b.offset..b.offset + b.len])
    }

    pub fn block_mut(&mut self, name: &str) -> Result<&mut [f32]> {
        let b = self.layout.block(name)?.clone();
        Ok(&mut self.data[b.offset..b.offset + b.len])
    }

    pub fn net_spec(&self, net: Net) -> &MlpSpec {
        match net {
            Net::Geo => &self.spec.geo,
            Net::Shadow => &self.spec.shadow,
            Net::Albedo => &self.spec.albedo,
        }
    }

    pub fn mlp_view(&self, net: Net) -> MlpView<'_> {
        let spec = self.net_spec(net);
        let prefix = net.prefix();
        let mut layers = Vec::with_capacity(spec.n_layers());
        for i in 0..spec.n_layers() {
            let wb = self
                .layout
                .block(&format!("{}.w{}", prefix, i))
                .expect("layout has mlp weight block");
            let bb = self
                .layout
                .block(&format!("{}.b{}", prefix, i))
                .expect("layout has mlp bias block");
            layers.push((
                self.data[wb.offset..wb.offset + wb.len]
                    .iter()
                    .map(|&v| v as f64)
                    .collect(),
                self.data[bb.offset..bb.offset + bb.len]
                    .iter()
                    .map(|&v| v as f64)
                    .collect(),
                wb.offset,
                bb.offset,
            ));
        }
        MlpView {
            spec: match net {
                Net::Geo => &self.spec.geo,
                Net::Shadow => &self.spec.shadow,
                Net::Albedo => &self.spec.albedo,
            },
            layers,
        }
    }

    /// Vertex code slice (flat `[n_vertices * code_dim]`).
    pub fn codes(&self) -> &[f32] {
        self.block("codes").expect("layout has codes")
    }

    /// Probe texels as f64, row-major `[H][W][C]`.
    pub fn probe_f64(&self) -> Vec<f64> {
        self.block("probe")
            .expect("layout has probe")
            .iter()
            .map(|&v| v as f64)
            .collect()
    }

    /// Effective density scale, lower-bounded by `beta_min`.
    pub fn beta(&self) -> f64 {
        let raw = self.block("beta").expect("layout has beta")[0] as f64;
        raw.max(self.spec.beta_min)
    }

    /// Offset of a pose's triplane block inside the flat buffer.
    pub fn triplane_offset(&self, pose: usize) -> usize {
        self.layout
            .block(&format!("triplane.{}", pose))
            .expect("layout has triplane block")
            .offset
    }

    /// Materialize one pose's triplane as f64 for sampling.
    pub fn triplane_f64(&self, pose: usize) -> FactorizedTriPlane {
        let b = self
            .layout
            .block(&format!("triplane.{}", pose))
            .expect("layout has triplane block");
        let flat: Vec<f64> = self.data[b.offset..b.offset + b.len]
            .iter()
            .map(|&v| v as f64)
            .collect();
        FactorizedTriPlane::from_flat(self.spec.tp_dims.clone(), &flat)
    }

    pub fn assert_finite(&self) -> Result<()> {
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter buffer".into()));
        }
        Ok(())
    }
}

fn xavier_fill(rng: &mut ChaCha8Rng, w: &mut [f32], fin: usize, fout: usize, scale: f64) {
    let bound = scale * (6.0 / (fin + fout) as f64).sqrt();
    for v in w.iter_mut() {
        *v = rng.gen_range(-bound..bound) as f32;
    }
}

/// Deterministic initialization. The geometry head starts near zero so the
/// SDF begins at its analytic sphere prior; sigmoid heads start at 0.5;
/// triplane factors and vertex codes start small so pose/subject features
/// perturb rather than dominate early training.
pub fn init_params(spec: ModelSpec, seed: u64) -> FieldParams {
    let mut params = FieldParams::zeros(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5eed));
    for net in [Net::Geo, Net::Shadow, Net::Albedo] {
        let mlp = params.net_spec(net).clone();
        for i in 0..mlp.n_layers() {
            let (fin, fout) = mlp.layer_dims(i);
            // The last layer starts small so outputs begin near the heads'
            // neutral values (0 pre-sigmoid, sphere prior for the SDF).
            let scale = if i == mlp.depth { 1e-2 } else { 1.0 };
            let name = format!("{}.w{}", net.prefix(), i);
            let mut w = std::mem::take(&mut params.data);
            {
                let b = params.layout.block(&name).unwrap();
                xavier_fill(&mut rng, &mut w[b.offset..b.offset + b.len], fin, fout, scale);
            }
            params.data = w;
            // Biases stay zero.
        }
    }
    {
        let codes = params.block_mut("codes").unwrap();
        for v in codes.iter_mut() {
            *v = rng.gen_range(-0.1..0.1);
        }
    }
    let probe_init = params.spec.probe_init as f32;
    params
        .block_mut("probe")
        .unwrap()
        .iter_mut()
        .for_each(|v| *v = probe_init);
    let beta_init = params.spec.beta_init as f32;
    params.block_mut("beta").unwrap()[0] = beta_init;
    for p in 0..params.spec.n_poses {
        let name = format!("triplane.{}", p);
        let tp = params.block_mut(&name).unwrap();
        for v in tp.iter_mut() {
            *v = rng.gen_range(-0.1..0.1);
        }
    }
    params
}
