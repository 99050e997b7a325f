//! Loss terms. Every term is a mean over its batch so weights are
//! independent of batch size.

use nalgebra::Vector3;

/// Mean over rays of the squared RGB distance.
pub fn loss_color(pred: &[[f64; 3]], gt: &[[f64; 3]]) -> f64 {
    assert_eq!(pred.len(), gt.len());
    if pred.is_empty() {
        return 0.0;
    }
    let sum: f64 = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| (0..3).map(|c| (p[c] - g[c]).powi(2)).sum::<f64>())
        .sum();
    sum / pred.len() as f64
}

/// d loss_color / d pred for one ray, given the batch size used in the mean.
pub fn loss_color_grad(pred: &[f64; 3], gt: &[f64; 3], n_rays: usize) -> [f64; 3] {
    let s = 2.0 / n_rays as f64;
    [
        s * (pred[0] - gt[0]),
        s * (pred[1] - gt[1]),
        s * (pred[2] - gt[2]),
    ]
}

pub const LOG_CLAMP: f64 = 1e-7;

/// Binary cross-entropy of `sigmoid(-rho * d_min)` against the mask bit,
/// with log arguments clamped for stability. Mean over rays.
pub fn loss_mask(d_min: &[f64], mask: &[bool], rho: f64) -> f64 {
    assert_eq!(d_min.len(), mask.len());
    if d_min.is_empty() {
        return 0.0;
    }
    let sum: f64 = d_min
        .iter()
        .zip(mask)
        .map(|(&d, &m)| mask_term(d, m, rho).0)
        .sum();
    sum / d_min.len() as f64
}

/// (loss term, d term / d d_min) for one ray.
pub fn mask_term(d_min: f64, inside: bool, rho: f64) -> (f64, f64) {
    let p = crate::fields::sigmoid(-rho * d_min);
    let dp_dd = -rho * p * (1.0 - p);
    if inside {
        let q = p.max(LOG_CLAMP);
        let loss = -q.ln();
        let grad = if p > LOG_CLAMP { -dp_dd / q } else { 0.0 };
        (loss, grad)
    } else {
        let q = (1.0 - p).max(LOG_CLAMP);
        let loss = -q.ln();
        let grad = if 1.0 - p > LOG_CLAMP { dp_dd / q } else { 0.0 };
        (loss, grad)
    }
}

/// Mean of `(|grad d| - 1)^2` over all samples.
pub fn loss_eikonal(grad_norms: &[f64]) -> f64 {
    if grad_norms.is_empty() {
        return 0.0;
    }
    grad_norms.iter().map(|g| (g - 1.0).powi(2)).sum::<f64>() / grad_norms.len() as f64
}

/// d eikonal term / d |grad d| for one sample (before the mean divisor).
pub fn eikonal_term_grad(grad_norm: f64) -> f64 {
    2.0 * (grad_norm - 1.0)
}

/// Mean hinge `max(-n_c . n_s, 0)` pushing predicted normals to agree with
/// the template.
pub fn loss_normal_reg(n_c: &[Vector3<f64>], n_s: &[Vector3<f64>]) -> f64 {
    assert_eq!(n_c.len(), n_s.len());
    if n_c.is_empty() {
        return 0.0;
    }
    n_c.iter()
        .zip(n_s)
        .map(|(a, b)| (-a.dot(b)).max(0.0))
        .sum::<f64>()
        / n_c.len() as f64
}

/// d hinge / d n_c for one sample: `-n_s` when active, zero otherwise.
pub fn normal_reg_term_grad(n_c: &Vector3<f64>, n_s: &Vector3<f64>) -> Vector3<f64> {
    if -n_c.dot(n_s) > 0.0 {
        -n_s
    } else {
        Vector3::zeros()
    }
}

/// Per-part loss report.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossParts {
    pub color: f64,
    pub perceptual: f64,
    pub mask: f64,
    pub eikonal: f64,
    pub normal: f64,
}

impl LossParts {
    pub fn zero() -> Self {
        LossParts {
            color: 0.0,
            perceptual: 0.0,
            mask: 0.0,
            eikonal: 0.0,
            normal: 0.0,
        }
    }
}

/// Weighted sum `L_c + lp*L_p + lm*L_m + le*L_e + ln*L_n`.
pub fn total_loss(parts: &LossParts, lp: f64, lm: f64, le: f64, ln: f64) -> f64 {
    parts.color + lp * parts.perceptual + lm * parts.mask + le * parts.eikonal + ln * parts.normal
}
