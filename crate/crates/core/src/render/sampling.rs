use nalgebra::{Point3, Vector3};
use rand::Rng;

use crate::render::camera::Ray;

/// [near, far] of the ray against an axis-aligned box, or `None` on a miss.
/// `near` is clamped to zero for origins inside the box.
pub fn ray_box_bounds(
    origin: &Point3<f64>,
    dir: &Vector3<f64>,
    lo: &Point3<f64>,
    hi: &Point3<f64>,
) -> Option<(f64, f64)> {
    let mut t0 = 0.0f64;
    let mut t1 = f64::INFINITY;
    for k in 0..3 {
        if dir[k].abs() < 1e-15 {
            if origin[k] < lo[k] || origin[k] > hi[k] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[k];
        let mut a = (lo[k] - origin[k]) * inv;
        let mut b = (hi[k] - origin[k]) * inv;
        if a > b {
            std::mem::swap(&mut a, &mut b);
        }
        t0 = t0.max(a);
        t1 = t1.min(b);
        if t0 > t1 {
            return None;
        }
    }
    Some((t0, t1))
}

/// Depth-ordered sample distances and intervals along `[near, far]`.
///
/// The segment is split into N equal bins; each sample sits at the bin's
/// jitter position (stratified) or midpoint. The interval of sample i is
/// `t_{i+1} - t_i`, and the last interval runs to `far`.
pub fn sample_points(
    near: f64,
    far: f64,
    n: usize,
    stratified: bool,
    rng: &mut impl Rng,
) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1 && far > near);
    let bin = (far - near) / n as f64;
    let ts: Vec<f64> = (0..n)
        .map(|i| {
            let u = if stratified { rng.gen_range(0.0..1.0) } else { 0.5 };
            near + (i as f64 + u) * bin
        })
        .collect();
    let deltas: Vec<f64> = (0..n)
        .map(|i| {
            if i + 1 < n {
                ts[i + 1] - ts[i]
            } else {
                far - ts[i]
            }
        })
        .collect();
    (ts, deltas)
}

/// Sample bounds for one ray: intersection with the dilated posed-mesh box.
pub fn ray_sample_bounds(
    ray: &Ray,
    box_lo: &Point3<f64>,
    box_hi: &Point3<f64>,
) -> Option<(f64, f64)> {
    let (near, far) = ray_box_bounds(&ray.origin, &ray.dir, box_lo, box_hi)?;
    if far <= near + 1e-12 {
        return None;
    }
    Some((near, far))
}
