//! The assembled per-sample field evaluation and its exact backward pass.
//!
//! A query point in observation space is skinned back to canonical space,
//! encoded (tangent-local coordinate + UV latent, pose-blended tri-plane
//! feature), pushed through the geometry / shadow / albedo networks, shaded
//! against the probe, and composited along the ray. The forward pass records
//! every intermediate needed to replay gradients for all learnable
//! parameters: network weights, vertex codes, tri-plane factors, probe
//! texels, and the density scale.
//!
//! Spatial SDF gradients (normals, eikonal) use central differences with the
//! surface and pose features held fixed; each of the seven geometry
//! evaluations is itself differentiated with respect to the parameters.

use nalgebra::{Matrix3, Matrix4, Point3, Vector2, Vector3};
use rand::Rng;

use crate::encode::{
    positional_encoding, positional_encoding_backward, positional_encoding_len, uv_latent,
    FactorizedTriPlane, LocalCoordMode, TriPlaneTrace,
};
use crate::fields::{sdf_to_density_grad, FieldParams, MlpTrace, MlpView, Net};
use crate::render::camera::Ray;
use crate::render::composite::composite_backward;
use crate::render::probe::LightProbe;
use crate::render::sampling::{ray_sample_bounds, sample_points};
use crate::render::shading::{shade, shade_backward, transform_normal};
use crate::rig::{
    compute_tbn, forward_kinematics, inverse_lbs_cached, lbs_deform, nearest_surface, tbn_at,
    Frame, MeshBvh, Pose, SkinnedMesh, SurfaceSample, TbnBasis,
};
use crate::{Error, Result};

/// Everything derived from one (mesh, pose) pair, shared across all rays of
/// a frame and across training iterations on the same pose.
pub struct FrameContext<'a> {
    pub mesh: &'a SkinnedMesh,
    pub pose: Pose,
    pub transforms: Vec<Matrix4<f64>>,
    pub inv_transforms: Vec<Matrix4<f64>>,
    pub posed_vertices: Vec<Point3<f64>>,
    pub posed_bvh: MeshBvh,
    pub posed_tbn: TbnBasis,
    /// Dilated posed-mesh bounding box limiting ray samples.
    pub box_lo: Point3<f64>,
    pub box_hi: Point3<f64>,
    /// Canonical-pose acceleration and frames (template normals, reshape).
    pub canon_bvh: MeshBvh,
    pub canon_tbn: TbnBasis,
    /// Flattened joint rotations appended to the pose feature.
    pub pose_vec: Vec<f64>,
    /// Tri-plane blend: (training-pose index, convex weight).
    pub blend: Vec<(usize, f64)>,
}

impl<'a> FrameContext<'a> {
    pub fn new(
        mesh: &'a SkinnedMesh,
        pose: Pose,
        blend: Vec<(usize, f64)>,
        bbox_dilate: f64,
    ) -> Result<Self> {
        let transforms = forward_kinematics(mesh, &pose)?;
        let inv_transforms: Vec<_> = transforms
            .iter()
            .map(|m| {
                m.try_inverse()
                    .ok_or_else(|| Error::InvalidPose("singular joint transform".into()))
            })
            .collect::<Result<_>>()?;
        let posed_vertices = lbs_deform(mesh, &pose)?;
        let posed_bvh = MeshBvh::build(&posed_vertices, &mesh.triangles);
        let posed_tbn = compute_tbn(&posed_vertices, &mesh.triangles, &mesh.uvs);
        let (mut lo, mut hi) = (posed_vertices[0], posed_vertices[0]);
        for p in &posed_vertices {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        for k in 0..3 {
            let pad = (hi[k] - lo[k]) * bbox_dilate;
            lo[k] -= pad;
            hi[k] += pad;
        }
        let canon_bvh = MeshBvh::build(&mesh.vertices, &mesh.triangles);
        let canon_tbn = compute_tbn(&mesh.vertices, &mesh.triangles, &mesh.uvs);
        let pose_vec = pose.flat_rotations();
        Ok(FrameContext {
            mesh,
            pose,
            transforms,
            inv_transforms,
            posed_vertices,
            posed_bvh,
            posed_tbn,
            box_lo: lo,
            box_hi: hi,
            canon_bvh,
            canon_tbn,
            pose_vec,
            blend,
        })
    }
}

/// Parameter snapshot materialized for evaluation: f64 tri-planes for the
/// poses in use, the probe (learned or an override), and the density scale.
pub struct ModelCtx<'a> {
    pub params: &'a FieldParams,
    pub probe: LightProbe,
    /// Indexed by training-pose id; only the ids in use are populated.
    pub triplanes: Vec<Option<FactorizedTriPlane>>,
    pub beta: f64,
    /// Whether the probe is the learned one (gradients flow to it).
    pub probe_is_learned: bool,
    /// Weight views widened to `f64` once, not per query.
    pub geo_view: MlpView<'a>,
    pub albedo_view: MlpView<'a>,
    pub shadow_view: MlpView<'a>,
}

impl<'a> ModelCtx<'a> {
    pub fn new(params: &'a FieldParams, probe_override: Option<LightProbe>) -> Self {
        let probe_is_learned = probe_override.is_none();
        let probe = probe_override.unwrap_or_else(|| {
            LightProbe::new(
                params.spec.probe_height,
                params.spec.probe_width,
                params.spec.probe_channels,
                params.probe_f64().iter().map(|v| v.max(0.0)).collect(),
            )
            .expect("learned probe has valid shape")
        });
        let mut triplanes = Vec::with_capacity(params.spec.n_poses);
        for p in 0..params.spec.n_poses {
            triplanes.push(Some(params.triplane_f64(p)));
        }
        ModelCtx {
            params,
            probe,
            triplanes,
            beta: params.beta(),
            probe_is_learned,
            geo_view: params.mlp_view(Net::Geo),
            albedo_view: params.mlp_view(Net::Albedo),
            shadow_view: params.mlp_view(Net::Shadow),
        }
    }

    /// Geometry network with the analytic sphere prior on the distance head:
    /// `d = mlp_d(...) + (|x_c - center| - r0)`.
    pub fn geo_forward(
        &self,
        x_c: &Point3<f64>,
        geo_input: &[f64],
        trace: Option<&mut MlpTrace>,
    ) -> (f64, Vec<f64>) {
        let out = self.geo_view.forward(geo_input, trace);
        let c = self.params.spec.sphere_center;
        let prior = (x_c - Point3::new(c[0], c[1], c[2])).norm() - self.params.spec.sphere_radius;
        (out[0] + prior, out[1..].to_vec())
    }
}

/// Shadow handling during evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShadowMode {
    Learned,
    Constant(f64),
}

/// Boolean mask over UV space, nearest-texel lookup.
#[derive(Debug, Clone)]
pub struct UvMask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl UvMask {
    pub fn contains(&self, u: f64, v: f64) -> bool {
        let x = ((u.clamp(0.0, 1.0) * self.width as f64) as usize).min(self.width - 1);
        let y = ((v.clamp(0.0, 1.0) * self.height as f64) as usize).min(self.height - 1);
        self.data[y * self.width + x]
    }
}

/// Per-axis affine map between two canonical bounding boxes.
#[derive(Debug, Clone)]
pub struct AxisRemap {
    pub scale: [f64; 3],
    pub offset: [f64; 3],
}

impl AxisRemap {
    pub fn between(t_lo: &Point3<f64>, t_hi: &Point3<f64>, s_lo: &Point3<f64>, s_hi: &Point3<f64>) -> Self {
        let mut scale = [1.0; 3];
        let mut offset = [0.0; 3];
        for k in 0..3 {
            let dt = t_hi[k] - t_lo[k];
            scale[k] = if dt.abs() > 1e-12 {
                (s_hi[k] - s_lo[k]) / dt
            } else {
                1.0
            };
            offset[k] = s_lo[k] - t_lo[k] * scale[k];
        }
        AxisRemap { scale, offset }
    }

    pub fn apply(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::new(
            p.x * self.scale[0] + self.offset[0],
            p.y * self.scale[1] + self.offset[1],
            p.z * self.scale[2] + self.offset[2],
        )
    }
}

/// A second trained subject whose fields are queried at bbox-remapped
/// canonical points (texture / shadow transfer).
pub struct SourceFields<'a> {
    pub params: &'a FieldParams,
    pub remap: AxisRemap,
    /// Weight views widened to `f64` once, not per query.
    pub geo_view: MlpView<'a>,
    pub albedo_view: MlpView<'a>,
    pub shadow_view: MlpView<'a>,
}

impl<'a> SourceFields<'a> {
    pub fn new(params: &'a FieldParams, remap: AxisRemap) -> Self {
        SourceFields {
            params,
            remap,
            geo_view: params.mlp_view(Net::Geo),
            albedo_view: params.mlp_view(Net::Albedo),
            shadow_view: params.mlp_view(Net::Shadow),
        }
    }
}

/// Shape-edit mapping: queries near the edited mesh are pulled back to the
/// original subject's canonical space through the shared (triangle,
/// barycentric, tangent-offset) parameterization.
pub struct ReshapeCtx<'a> {
    pub orig_vertices: &'a [Point3<f64>],
    pub orig_canon_tbn: &'a TbnBasis,
}

/// Inference-time substitutions. `Default` is the unedited model.
pub struct Overrides<'a> {
    pub shadow_mode: ShadowMode,
    pub shadow_transfer: Option<(SourceFields<'a>, &'a UvMask)>,
    /// (source, mask, also substitute the shadow field).
    pub retexture: Option<(SourceFields<'a>, &'a UvMask, bool)>,
    pub reshape: Option<ReshapeCtx<'a>>,
}

impl Default for Overrides<'_> {
    fn default() -> Self {
        Overrides {
            shadow_mode: ShadowMode::Learned,
            shadow_transfer: None,
            retexture: None,
            reshape: None,
        }
    }
}

/// Full record of one sample evaluation, sufficient for the backward pass.
pub struct SampleEval {
    pub x_o: Point3<f64>,
    pub x_c: Point3<f64>,
    pub sample: SurfaceSample,
    pub s_o: Vec<f64>,
    pub p_o: Vec<f64>,
    /// Tri-plane interpolation traces, aligned with `FrameContext::blend`.
    pub tp_traces: Vec<TriPlaneTrace>,
    pub geo_center: MlpTrace,
    /// Geometry traces at the six central-difference offsets (+x, -x, ...).
    pub geo_offsets: Vec<MlpTrace>,
    pub d: f64,
    pub h: Vec<f64>,
    /// Unnormalized spatial SDF gradient and its norm.
    pub grad_d: Vector3<f64>,
    pub grad_d_norm: f64,
    pub n_c: Vector3<f64>,
    /// Interpolated canonical template normal at the nearest canonical
    /// surface point of x_c (normal regularization target).
    pub n_s: Vector3<f64>,
    pub sigma: f64,
    pub shadow_trace: MlpTrace,
    pub v: f64,
    pub albedo_trace: MlpTrace,
    pub a: [f64; 3],
    pub blend_rot: Matrix3<f64>,
    pub n_o: Vector3<f64>,
    pub color: [f64; 3],
}

fn bary_uv(mesh: &SkinnedMesh, sample: &SurfaceSample) -> Vector2<f64> {
    let [i, j, k] = mesh.triangles[sample.tri_id];
    let (u, v) = (sample.bary[0], sample.bary[1]);
    let w = 1.0 - u - v;
    mesh.uvs[i] * u + mesh.uvs[j] * v + mesh.uvs[k] * w
}

fn bary_point(vertices: &[Point3<f64>], tri: &[usize; 3], bary: [f64; 2]) -> Point3<f64> {
    let (u, v) = (bary[0], bary[1]);
    let w = 1.0 - u - v;
    Point3::from(
        vertices[tri[0]].coords * u + vertices[tri[1]].coords * v + vertices[tri[2]].coords * w,
    )
}

fn normalize_or(v: Vector3<f64>, fallback: Vector3<f64>) -> (Vector3<f64>, f64) {
    let n = v.norm();
    if n > 1e-12 {
        (v / n, n)
    } else {
        (fallback, n)
    }
}

/// Gradient of `u / |u|` pulled back from a gradient on the normalized vector.
fn normalize_backward(u: &Vector3<f64>, g_n: &Vector3<f64>) -> Vector3<f64> {
    let len = u.norm();
    if len <= 1e-12 {
        return Vector3::zeros();
    }
    let n = u / len;
    (g_n - n * n.dot(g_n)) / len
}

/// Evaluate every field at one observation-space point along a ray.
///
/// `record` controls whether backward-pass traces are kept (training);
/// inference passes `record = false` and may supply `overrides`.
pub fn evaluate_sample(
    model: &ModelCtx,
    frame: &FrameContext,
    x_o: &Point3<f64>,
    ray_dir: &Vector3<f64>,
    record: bool,
    overrides: &Overrides,
) -> SampleEval {
    let spec = &model.params.spec;
    let mesh = frame.mesh;

    // Nearest posed-surface point and its tangent frame.
    let sample = nearest_surface(x_o, &frame.posed_vertices, &mesh.triangles, Some(&frame.posed_bvh));
    let frame_s: Frame = tbn_at(&frame.posed_tbn, &mesh.triangles, &sample);
    let x_l = frame_s.tbn * (x_o - sample.point);
    let local_coord: Vec<f64> = match spec.local_coord_mode {
        LocalCoordMode::Tangent => vec![x_l.x, x_l.y, x_l.z],
        mode => crate::encode::alt_local_coord(mode, &frame_s, &sample, x_o),
    };

    // Skin weights interpolated at the surface sample (used for the inverse
    // warp and the normal transform).
    let skin_weights = {
        let [a, b, c] = mesh.triangles[sample.tri_id];
        let (u, v) = (sample.bary[0], sample.bary[1]);
        let w = 1.0 - u - v;
        let nj = mesh.n_joints();
        let mut out = vec![0.0; nj];
        for j in 0..nj {
            out[j] =
                u * mesh.skin_weights[a][j] + v * mesh.skin_weights[b][j] + w * mesh.skin_weights[c][j];
        }
        out
    };

    // Canonical query point.
    let x_c = if let Some(rs) = &overrides.reshape {
        // Shape edit: carry (triangle, barycentric, tangent offset) over to
        // the original canonical surface.
        let tri = &mesh.triangles[sample.tri_id];
        let x_s_orig = bary_point(rs.orig_vertices, tri, sample.bary);
        let m_orig = tbn_at(rs.orig_canon_tbn, &mesh.triangles, &sample);
        let m_inv = m_orig
            .tbn
            .try_inverse()
            .unwrap_or_else(|| m_orig.tbn.transpose());
        x_s_orig + m_inv * x_l
    } else {
        inverse_lbs_cached(x_o, &skin_weights, &frame.inv_transforms)
    };

    // Subject feature: encoded local coordinate + UV latent code.
    let codes = model.params.codes();
    let mut s_o = positional_encoding(&local_coord, spec.freq_local);
    s_o.extend(uv_latent(codes, spec.code_dim, &mesh.triangles, &sample));

    // Pose feature: convex blend of tri-plane samples + raw pose vector.
    let d3 = 3 * spec.tp_dims.d;
    let mut tp_feat = vec![0.0; d3];
    let mut tp_traces = Vec::with_capacity(frame.blend.len());
    for &(pid, w) in &frame.blend {
        let tp = model.triplanes[pid]
            .as_ref()
            .expect("blended pose tri-plane materialized");
        let (f, trace) = tp.sample(&x_c);
        for k in 0..d3 {
            tp_feat[k] += w * f[k];
        }
        tp_traces.push(trace);
    }
    let mut p_o = tp_feat;
    p_o.extend_from_slice(&frame.pose_vec);

    // Geometry network at the center point.
    let build_geo_input = |x: &Point3<f64>| -> Vec<f64> {
        let mut input = positional_encoding(&[x.x, x.y, x.z], spec.freq_canonical);
        input.extend_from_slice(&s_o);
        input.extend_from_slice(&p_o);
        input
    };
    let mut geo_center = MlpTrace::default();
    let (d, h) = model.geo_forward(
        &x_c,
        &build_geo_input(&x_c),
        if record { Some(&mut geo_center) } else { None },
    );

    // Spatial gradient by central differences; s_o and p_o held fixed.
    let eps = spec.fd_epsilon;
    let mut geo_offsets = Vec::with_capacity(if record { 6 } else { 0 });
    let mut grad_d = Vector3::zeros();
    for k in 0..3 {
        let mut d_pm = [0.0; 2];
        for (s, sign) in [(0usize, 1.0f64), (1, -1.0)] {
            let mut xq = x_c;
            xq[k] += sign * eps;
            let mut t = MlpTrace::default();
            let (dq, _) = model.geo_forward(
                &xq,
                &build_geo_input(&xq),
                if record { Some(&mut t) } else { None },
            );
            if record {
                geo_offsets.push(t);
            }
            d_pm[s] = dq;
        }
        grad_d[k] = (d_pm[0] - d_pm[1]) / (2.0 * eps);
    }
    let (n_c, grad_d_norm) = normalize_or(grad_d, Vector3::new(0.0, 0.0, 1.0));

    // Template normal at the nearest canonical surface point (regularizer).
    let canon_sample = nearest_surface(&x_c, &mesh.vertices, &mesh.triangles, Some(&frame.canon_bvh));
    let n_s = {
        let [i, j, k] = mesh.triangles[canon_sample.tri_id];
        let (u, v) = (canon_sample.bary[0], canon_sample.bary[1]);
        let w = 1.0 - u - v;
        let (n, _) = normalize_or(
            frame.canon_tbn.normals[i] * u
                + frame.canon_tbn.normals[j] * v
                + frame.canon_tbn.normals[k] * w,
            Vector3::new(0.0, 0.0, 1.0),
        );
        n
    };

    let sigma = crate::fields::sdf_to_density(d, model.beta);

    // Texture / shadow-source substitution (inference only).
    let uv = bary_uv(mesh, &sample);
    let retex = overrides
        .retexture
        .as_ref()
        .filter(|(_, mask, _)| mask.contains(uv.x, uv.y));
    let transfer = overrides
        .shadow_transfer
        .as_ref()
        .filter(|(_, mask)| mask.contains(uv.x, uv.y));

    // Albedo (possibly from the source subject at a remapped point).
    let enc_h_albedo = |x: &Point3<f64>, h: &[f64], params: &FieldParams| -> Vec<f64> {
        let mut input = positional_encoding(&[x.x, x.y, x.z], params.spec.freq_canonical);
        input.extend_from_slice(h);
        input
    };
    let mut albedo_trace = MlpTrace::default();
    let a: [f64; 3];
    if let Some((src, _, _)) = retex {
        let x_src = src.remap.apply(&x_c);
        let mut src_input = positional_encoding(&[x_src.x, x_src.y, x_src.z], src.params.spec.freq_canonical);
        src_input.extend_from_slice(&s_o);
        src_input.extend_from_slice(&p_o);
        let src_out = src.geo_view.forward(&src_input, None);
        let h_src = &src_out[1..];
        let a_in = enc_h_albedo(&x_src, h_src, src.params);
        let out = src.albedo_view.forward(&a_in, None);
        a = [out[0], out[1], out[2]];
    } else {
        let a_in = enc_h_albedo(&x_c, &h, model.params);
        let out = model.albedo_view.forward(
            &a_in,
            if record { Some(&mut albedo_trace) } else { None },
        );
        a = [out[0], out[1], out[2]];
    }

    // Shadow.
    let mut shadow_trace = MlpTrace::default();
    let shadow_input = |n_c: &Vector3<f64>, h: &[f64], params: &FieldParams| -> Vec<f64> {
        let mut input = positional_encoding(&[ray_dir.x, ray_dir.y, ray_dir.z], params.spec.freq_dir);
        input.extend(positional_encoding(&[n_c.x, n_c.y, n_c.z], params.spec.freq_dir));
        input.extend_from_slice(h);
        input
    };
    let v = match overrides.shadow_mode {
        ShadowMode::Constant(k) => k,
        ShadowMode::Learned => {
            let source = transfer
                .map(|(src, _)| src)
                .or_else(|| retex.and_then(|(src, _, swap)| if *swap { Some(src) } else { None }));
            if let Some(src) = source {
                let x_src = src.remap.apply(&x_c);
                let mut src_input =
                    positional_encoding(&[x_src.x, x_src.y, x_src.z], src.params.spec.freq_canonical);
                src_input.extend_from_slice(&s_o);
                src_input.extend_from_slice(&p_o);
                let src_out = src.geo_view.forward(&src_input, None);
                let h_src = &src_out[1..];
                src.shadow_view.forward(&shadow_input(&n_c, h_src, src.params), None)[0]
            } else {
                model.shadow_view.forward(
                    &shadow_input(&n_c, &h, model.params),
                    if record { Some(&mut shadow_trace) } else { None },
                )[0]
            }
        }
    };

    // Normal to observation space and shading.
    let blend_rot = crate::rig::blend_rotation(&skin_weights, &frame.transforms);
    let n_o = transform_normal(&n_c, &skin_weights, &frame.transforms);
    let color = shade(&a, v, &n_o, &model.probe);

    SampleEval {
        x_o: *x_o,
        x_c,
        sample,
        s_o,
        p_o,
        tp_traces,
        geo_center,
        geo_offsets,
        d,
        h,
        grad_d,
        grad_d_norm,
        n_c,
        n_s,
        sigma,
        shadow_trace,
        v,
        albedo_trace,
        a,
        blend_rot,
        n_o,
        color,
    }
}

/// One ray fully evaluated: samples, intervals, and the composited outputs.
pub struct RayEval {
    pub ray: Ray,
    pub ts: Vec<f64>,
    pub deltas: Vec<f64>,
    pub samples: Vec<SampleEval>,
    pub color: [f64; 3],
    pub alpha: f64,
    /// Minimum SDF along the ray and the sample attaining it.
    pub d_min: f64,
    pub argmin: usize,
}

/// Forward pass over one ray for training; `None` if the ray misses the
/// sampling box.
#[allow(clippy::too_many_arguments)]
pub fn eval_ray(
    model: &ModelCtx,
    frame: &FrameContext,
    ray: &Ray,
    n_samples: usize,
    stratified: bool,
    rng: &mut impl Rng,
    record: bool,
    overrides: &Overrides,
) -> Option<RayEval> {
    let (near, far) = ray_sample_bounds(ray, &frame.box_lo, &frame.box_hi)?;
    let (ts, deltas) = sample_points(near, far, n_samples, stratified, rng);
    let mut samples = Vec::with_capacity(n_samples);
    for &t in &ts {
        let x_o = ray.origin + ray.dir * t;
        samples.push(evaluate_sample(model, frame, &x_o, &ray.dir, record, overrides));
    }
    let sigmas: Vec<f64> = samples.iter().map(|s| s.sigma).collect();
    let colors: Vec<[f64; 3]> = samples.iter().map(|s| s.color).collect();
    let (color, alpha) = crate::render::composite::composite(&sigmas, &deltas, &colors);
    let (argmin, d_min) = samples
        .iter()
        .enumerate()
        .map(|(i, s)| (i, s.d))
        .fold((0usize, f64::INFINITY), |acc, (i, d)| {
            if d < acc.1 {
                (i, d)
            } else {
                acc
            }
        });
    Some(RayEval {
        ray: *ray,
        ts,
        deltas,
        samples,
        color,
        alpha,
        d_min,
        argmin,
    })
}

/// Upstream gradients for one ray, produced by the loss layer.
pub struct RayUpstream {
    /// d(loss)/d(composited rgb).
    pub d_color: [f64; 3],
    /// d(loss)/d(total alpha).
    pub d_alpha: f64,
    /// d(loss)/d(min SDF along the ray), applied at the argmin sample.
    pub d_dmin: f64,
    /// Per sample: d(loss)/d |grad d| (eikonal term).
    pub d_gradnorm: Vec<f64>,
    /// Per sample: d(loss)/d n_c from the normal regularizer.
    pub d_nc: Vec<Vector3<f64>>,
}

/// Replay one recorded ray and accumulate parameter gradients into `grad`
/// (flat layout of `model.params`).
pub fn backward_ray(model: &ModelCtx, frame: &FrameContext, eval: &RayEval, up: &RayUpstream, grad: &mut [f64]) {
    let spec = &model.params.spec;
    let n = eval.samples.len();
    let sigmas: Vec<f64> = eval.samples.iter().map(|s| s.sigma).collect();
    let colors: Vec<[f64; 3]> = eval.samples.iter().map(|s| s.color).collect();
    let (g_sigma, g_color) =
        composite_backward(&sigmas, &eval.deltas, &colors, &up.d_color, up.d_alpha);

    let layout = &model.params.layout;
    let probe_block = layout.block("probe").expect("probe block").clone();
    let beta_block = layout.block("beta").expect("beta block").clone();
    let codes_block = layout.block("codes").expect("codes block").clone();

    let enc_canon = positional_encoding_len(3, spec.freq_canonical);
    let enc_local = positional_encoding_len(3, spec.freq_local);
    let enc_dir = positional_encoding_len(3, spec.freq_dir);
    let d3 = 3 * spec.tp_dims.d;

    for i in 0..n {
        let s = &eval.samples[i];
        let mut g_h = vec![0.0f64; spec.latent_dim];
        let mut g_nc = Vector3::zeros();

        // Shading.
        let (g_a, g_v, g_no) = {
            let pg = if model.probe_is_learned {
                Some(&mut grad[probe_block.offset..probe_block.offset + probe_block.len])
            } else {
                None
            };
            shade_backward(&s.a, s.v, &s.n_o, &model.probe, &g_color[i], pg)
        };

        // Albedo network.
        {
            let view = &model.albedo_view;
            let g_in = view.backward(&s.albedo_trace, &[g_a[0], g_a[1], g_a[2]], grad);
            for (k, g) in g_in[enc_canon..].iter().enumerate() {
                g_h[k] += g;
            }
        }

        // Shadow network.
        {
            let view = &model.shadow_view;
            let g_in = view.backward(&s.shadow_trace, &[g_v], grad);
            let nc_enc = &g_in[enc_dir..2 * enc_dir];
            let g_nc_raw =
                positional_encoding_backward(&[s.n_c.x, s.n_c.y, s.n_c.z], spec.freq_dir, nc_enc);
            g_nc += Vector3::new(g_nc_raw[0], g_nc_raw[1], g_nc_raw[2]);
            for (k, g) in g_in[2 * enc_dir..].iter().enumerate() {
                g_h[k] += g;
            }
        }

        // Observation-space normal path: n_o = normalize(R n_c).
        {
            let m = s.blend_rot * s.n_c;
            let g_m = normalize_backward(&m, &g_no);
            g_nc += s.blend_rot.transpose() * g_m;
        }

        // Normal regularizer upstream.
        g_nc += up.d_nc[i];

        // Spatial gradient: n_c = grad_d / |grad_d|, eikonal on |grad_d|.
        let mut g_grad_d = normalize_backward(&s.grad_d, &g_nc);
        if s.grad_d_norm > 1e-12 {
            g_grad_d += up.d_gradnorm[i] * (s.grad_d / s.grad_d_norm);
        }

        // Density and mask paths into the center SDF value.
        let (_, dsdd, dsdb) = sdf_to_density_grad(s.d, model.beta);
        let mut g_d_center = g_sigma[i] * dsdd;
        if i == eval.argmin {
            g_d_center += up.d_dmin;
        }
        {
            // Gradient reaches the raw beta parameter only above the clamp.
            let raw = model.params.data[beta_block.offset] as f64;
            if raw >= spec.beta_min {
                grad[beta_block.offset] += g_sigma[i] * dsdb;
            }
        }

        // Geometry network: center + six offset evaluations share s_o, p_o.
        let geo_view = &model.geo_view;
        let mut g_so = vec![0.0f64; s.s_o.len()];
        let mut g_po = vec![0.0f64; s.p_o.len()];
        let accumulate_tail = |g_in: &[f64], g_so: &mut [f64], g_po: &mut [f64]| {
            for (k, g) in g_in[enc_canon..enc_canon + g_so.len()].iter().enumerate() {
                g_so[k] += g;
            }
            for (k, g) in g_in[enc_canon + g_so.len()..].iter().enumerate() {
                g_po[k] += g;
            }
        };
        {
            let mut upstream = vec![0.0f64; 1 + spec.latent_dim];
            upstream[0] = g_d_center;
            upstream[1..].copy_from_slice(&g_h);
            let g_in = geo_view.backward(&s.geo_center, &upstream, grad);
            accumulate_tail(&g_in, &mut g_so, &mut g_po);
        }
        let inv_2eps = 1.0 / (2.0 * spec.fd_epsilon);
        for k in 0..3 {
            for (ofs, sign) in [(0usize, 1.0f64), (1, -1.0)] {
                let g_doff = sign * g_grad_d[k] * inv_2eps;
                if g_doff == 0.0 {
                    continue;
                }
                let mut upstream = vec![0.0f64; 1 + spec.latent_dim];
                upstream[0] = g_doff;
                let g_in = geo_view.backward(&s.geo_offsets[2 * k + ofs], &upstream, grad);
                accumulate_tail(&g_in, &mut g_so, &mut g_po);
            }
        }

        // Subject feature tail: UV latent codes.
        {
            let [va, vb, vc] = frame.mesh.triangles[s.sample.tri_id];
            let (u, v) = (s.sample.bary[0], s.sample.bary[1]);
            let w = 1.0 - u - v;
            let cd = spec.code_dim;
            for k in 0..cd {
                let g = g_so[enc_local + k];
                grad[codes_block.offset + va * cd + k] += u * g;
                grad[codes_block.offset + vb * cd + k] += v * g;
                grad[codes_block.offset + vc * cd + k] += w * g;
            }
        }

        // Pose feature head: blended tri-plane factors.
        for (bi, &(pid, w)) in frame.blend.iter().enumerate() {
            let tp = model.triplanes[pid].as_ref().expect("blended tri-plane");
            let upstream: Vec<f64> = g_po[..d3].iter().map(|g| g * w).collect();
            let tb = layout
                .block(&format!("triplane.{}", pid))
                .expect("triplane block");
            tp.sample_backward(
                &s.tp_traces[bi],
                &upstream,
                &mut grad[tb.offset..tb.offset + tb.len],
            );
        }
    }
}
