use nalgebra::{Matrix4, Vector3};

use crate::render::probe::LightProbe;
use crate::rig::blend_rotation;

/// Normal carried from canonical to observation space: rotation block of the
/// blended forward transform, renormalized.
pub fn transform_normal(n_c: &Vector3<f64>, weights: &[f64], transforms: &[Matrix4<f64>]) -> Vector3<f64> {
    let r = blend_rotation(weights, transforms);
    let n = r * n_c;
    let len = n.norm();
    if len > 0.0 {
        n / len
    } else {
        *n_c
    }
}

/// Linear RGB from albedo, shadow scalar, observation-space normal, and the
/// probe: per channel, `a * v * sum_i I_i * max(n . w_i, 0) * dw_i`.
pub fn shade(a: &[f64; 3], v: f64, n_o: &Vector3<f64>, probe: &LightProbe) -> [f64; 3] {
    let e = irradiance(n_o, probe);
    [a[0] * v * e[0], a[1] * v * e[1], a[2] * v * e[2]]
}

/// Clamped-cosine irradiance per channel.
pub fn irradiance(n_o: &Vector3<f64>, probe: &LightProbe) -> [f64; 3] {
    let mut e = [0.0; 3];
    for t in 0..probe.n_texels() {
        let cos = n_o.dot(&probe.dir(t));
        if cos <= 0.0 {
            continue;
        }
        let w = cos * probe.solid_angle(t);
        if probe.channels == 1 {
            let c = probe.radiance(t, 0) * w;
            e[0] += c;
            e[1] += c;
            e[2] += c;
        } else {
            for ch in 0..3 {
                e[ch] += probe.radiance(t, ch) * w;
            }
        }
    }
    e
}

/// Gradients of `shade` with respect to its differentiable inputs.
///
/// Given the upstream gradient on the RGB output, returns
/// (d/da, d/dv, d/dn_o) and scatters the probe-texel gradient into
/// `probe_grad` (length H*W*C) when provided.
pub fn shade_backward(
    a: &[f64; 3],
    v: f64,
    n_o: &Vector3<f64>,
    probe: &LightProbe,
    upstream: &[f64; 3],
    probe_grad: Option<&mut [f64]>,
) -> ([f64; 3], f64, Vector3<f64>) {
    let e = irradiance(n_o, probe);
    let grad_a = [
        upstream[0] * v * e[0],
        upstream[1] * v * e[1],
        upstream[2] * v * e[2],
    ];
    let grad_v = upstream[0] * a[0] * e[0] + upstream[1] * a[1] * e[1] + upstream[2] * a[2] * e[2];
    // g_ch = upstream_ch * a_ch * v weights both the normal and probe paths.
    let g = [upstream[0] * a[0] * v, upstream[1] * a[1] * v, upstream[2] * a[2] * v];
    let mut grad_n = Vector3::zeros();
    let mut pg = probe_grad;
    for t in 0..probe.n_texels() {
        let dir = probe.dir(t);
        let cos = n_o.dot(&dir);
        if cos <= 0.0 {
            continue;
        }
        let dw = probe.solid_angle(t);
        if probe.channels == 1 {
            let i = probe.radiance(t, 0);
            let gsum = g[0] + g[1] + g[2];
            grad_n += dir * (i * dw * gsum);
            if let Some(buf) = pg.as_deref_mut() {
                buf[t] += cos * dw * gsum;
            }
        } else {
            let mut gi = 0.0;
            for ch in 0..3 {
                gi += probe.radiance(t, ch) * g[ch];
                if let Some(buf) = pg.as_deref_mut() {
                    buf[t * 3 + ch] += cos * dw * g[ch];
                }
            }
            grad_n += dir * (dw * gi);
        }
    }
    (grad_a, grad_v, grad_n)
}
