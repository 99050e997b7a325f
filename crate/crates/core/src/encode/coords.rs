use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::rig::{Frame, SurfaceSample};

/// Local coordinate flavor for the subject-level feature. `Tangent` is the
/// default; the others are ablation alternatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LocalCoordMode {
    #[default]
    Tangent,
    RelativePosition,
    Direction,
    Uvh,
}

/// `x_l = M(x_s*) (x_o - x_s*)`: the query offset expressed in the tangent
/// frame of its nearest surface point. Invariant under global rigid motion
/// of mesh and query together.
pub fn local_tangent_coord(frame: &Frame, sample: &SurfaceSample, x_o: &Point3<f64>) -> Vector3<f64> {
    frame.tbn * (x_o - sample.point)
}

/// The ablation alternatives: relative position, unit direction (zero at the
/// surface point itself), and (u, v, h).
pub fn alt_local_coord(
    mode: LocalCoordMode,
    frame: &Frame,
    sample: &SurfaceSample,
    x_o: &Point3<f64>,
) -> Vec<f64> {
    match mode {
        LocalCoordMode::Tangent => {
            let x_l = local_tangent_coord(frame, sample, x_o);
            vec![x_l.x, x_l.y, x_l.z]
        }
        LocalCoordMode::RelativePosition => {
            let c = x_o - sample.point;
            vec![c.x, c.y, c.z]
        }
        LocalCoordMode::Direction => {
            let c = x_o - sample.point;
            let n = c.norm();
            // Points on (or within rounding noise of) the surface have no
            // meaningful direction; return zero instead of normalized noise.
            if n > 1e-12 {
                vec![c.x / n, c.y / n, c.z / n]
            } else {
                vec![0.0, 0.0, 0.0]
            }
        }
        LocalCoordMode::Uvh => {
            let h = (x_o - sample.point).norm();
            vec![sample.bary[0], sample.bary[1], h]
        }
    }
}

/// Barycentric interpolation of per-vertex latent codes:
/// `g_s = u*C_a + v*C_b + (1-u-v)*C_c`.
pub fn uv_latent<T: Copy + Into<f64>>(
    codes: &[T],
    code_dim: usize,
    triangles: &[[usize; 3]],
    sample: &SurfaceSample,
) -> Vec<f64> {
    let [a, b, c] = triangles[sample.tri_id];
    let (u, v) = (sample.bary[0], sample.bary[1]);
    let w = 1.0 - u - v;
    (0..code_dim)
        .map(|k| {
            u * codes[a * code_dim + k].into()
                + v * codes[b * code_dim + k].into()
                + w * codes[c * code_dim + k].into()
        })
        .collect()
}

/// NeRF-style positional encoding: `x` followed by
/// `(sin(2^k pi x), cos(2^k pi x))` per component for `k = 0..n_freq-1`.
/// Output length is `dim * (1 + 2 * n_freq)`.
pub fn positional_encoding(x: &[f64], n_freq: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len() * (1 + 2 * n_freq));
    out.extend_from_slice(x);
    let mut scale = std::f64::consts::PI;
    for _ in 0..n_freq {
        for v in x {
            out.push((scale * v).sin());
        }
        for v in x {
            out.push((scale * v).cos());
        }
        scale *= 2.0;
    }
    out
}

pub fn positional_encoding_len(dim: usize, n_freq: usize) -> usize {
    dim * (1 + 2 * n_freq)
}

/// Pull an upstream gradient on the encoded vector back to the raw input.
pub fn positional_encoding_backward(x: &[f64], n_freq: usize, upstream: &[f64]) -> Vec<f64> {
    let dim = x.len();
    debug_assert_eq!(upstream.len(), positional_encoding_len(dim, n_freq));
    let mut grad = upstream[..dim].to_vec();
    let mut scale = std::f64::consts::PI;
    let mut idx = dim;
    for _ in 0..n_freq {
        for (d, v) in x.iter().enumerate() {
            grad[d] += upstream[idx + d] * scale * (scale * v).cos();
        }
        idx += dim;
        for (d, v) in x.iter().enumerate() {
            grad[d] -= upstream[idx + d] * scale * (scale * v).sin();
        }
        idx += dim;
        scale *= 2.0;
    }
    grad
}

/// Subject-level feature: encoded local coordinate concatenated with the UV
/// latent code.
#[allow(clippy::too_many_arguments)]
pub fn subject_feature(
    mode: LocalCoordMode,
    frame: &Frame,
    sample: &SurfaceSample,
    x_o: &Point3<f64>,
    codes: &[f64],
    code_dim: usize,
    triangles: &[[usize; 3]],
    n_freq: usize,
) -> Vec<f64> {
    let coord = alt_local_coord(mode, frame, sample, x_o);
    let mut out = positional_encoding(&coord, n_freq);
    out.extend(uv_latent(codes, code_dim, triangles, sample));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rig::{compute_tbn, nearest_surface, tbn_at};
    use nalgebra::{Rotation3, Vector2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    type QuadMesh = (Vec<Point3<f64>>, Vec<[usize; 3]>, Vec<Vector2<f64>>);

    fn quad() -> QuadMesh {
        (
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(1.0, 1.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
            vec![
                Vector2::new(0.0, 0.0),
                Vector2::new(1.0, 0.0),
                Vector2::new(1.0, 1.0),
                Vector2::new(0.0, 1.0),
            ],
        )
    }

    #[test]
    fn tangent_coord_zero_at_surface_and_height_along_normal() {
        let (v, t, uv) = quad();
        let basis = compute_tbn(&v, &t, &uv);
        let x_o = Point3::new(0.4, 0.3, 0.0);
        let sample = nearest_surface(&x_o, &v, &t, None);
        let frame = tbn_at(&basis, &t, &sample);
        let x_l = local_tangent_coord(&frame, &sample, &x_o);
        assert!(x_l.norm() < 1e-12);

        let lifted = Point3::new(0.4, 0.3, 0.25);
        let sample = nearest_surface(&lifted, &v, &t, None);
        let frame = tbn_at(&basis, &t, &sample);
        let x_l = local_tangent_coord(&frame, &sample, &lifted);
        assert!((x_l - Vector3::new(0.0, 0.0, 0.25)).norm() < 1e-9);
    }

    #[test]
    fn tangent_coord_rigid_invariant() {
        let (v, t, uv) = quad();
        let basis = compute_tbn(&v, &t, &uv);
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..50 {
            let x_o = Point3::new(
                rng.gen_range(-0.5..1.5),
                rng.gen_range(-0.5..1.5),
                rng.gen_range(-0.5..0.5),
            );
            let sample = nearest_surface(&x_o, &v, &t, None);
            let frame = tbn_at(&basis, &t, &sample);
            let x_l = local_tangent_coord(&frame, &sample, &x_o);

            let rot = Rotation3::from_scaled_axis(Vector3::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            ));
            let shift = Vector3::new(
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
            );
            let v2: Vec<Point3<f64>> = v.iter().map(|p| rot * p + shift).collect();
            let x2 = rot * x_o + shift;
            let basis2 = compute_tbn(&v2, &t, &uv);
            let sample2 = nearest_surface(&x2, &v2, &t, None);
            let frame2 = tbn_at(&basis2, &t, &sample2);
            let x_l2 = local_tangent_coord(&frame2, &sample2, &x2);
            assert!((x_l - x_l2).norm() < 1e-6, "{:?} vs {:?}", x_l, x_l2);
        }
    }

    #[test]
    fn alternatives_match_their_formulas() {
        let (v, t, uv) = quad();
        let basis = compute_tbn(&v, &t, &uv);
        let base = Point3::new(0.4, 0.3, 0.0);
        let sample = nearest_surface(&base, &v, &t, None);
        let frame = tbn_at(&basis, &t, &sample);

        let shifted = Point3::new(1.4, 0.3, 0.0);
        let sample_s = nearest_surface(&shifted, &v, &t, None);
        let frame_s = tbn_at(&basis, &t, &sample_s);
        let rel = alt_local_coord(LocalCoordMode::RelativePosition, &frame_s, &sample_s, &shifted);
        assert!((rel[0] - 0.4).abs() < 1e-9 && rel[1].abs() < 1e-9 && rel[2].abs() < 1e-9);

        let above = Point3::new(0.4, 0.3, 2.0);
        let sample_a = nearest_surface(&above, &v, &t, None);
        let frame_a = tbn_at(&basis, &t, &sample_a);
        let dir = alt_local_coord(LocalCoordMode::Direction, &frame_a, &sample_a, &above);
        assert!((dir[2] - 1.0).abs() < 1e-12 && dir[0].abs() < 1e-12);

        // Direction degenerates to zero at the surface point itself.
        let dir0 = alt_local_coord(LocalCoordMode::Direction, &frame, &sample, &base);
        assert_eq!(dir0, vec![0.0, 0.0, 0.0]);

        // UVH at a centroid, h = 0.5.
        let centroid = Point3::new(2.0 / 3.0, 1.0 / 3.0, 0.5);
        let sample_c = nearest_surface(&centroid, &v, &t, None);
        let frame_c = tbn_at(&basis, &t, &sample_c);
        let uvh = alt_local_coord(LocalCoordMode::Uvh, &frame_c, &sample_c, &centroid);
        assert!((uvh[0] - 1.0 / 3.0).abs() < 1e-9);
        assert!((uvh[1] - 1.0 / 3.0).abs() < 1e-9);
        assert!((uvh[2] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn uv_latent_interpolates_codes() {
        let (_, t, _) = quad();
        let codes: Vec<f64> = vec![
            1.0, 2.0, // vertex 0
            3.0, 4.0, // vertex 1
            5.0, 6.0, // vertex 2
            7.0, 8.0, // vertex 3
        ];
        let at_vertex = SurfaceSample {
            point: Point3::origin(),
            tri_id: 0,
            bary: [1.0, 0.0],
            distance: 0.0,
        };
        assert_eq!(uv_latent(&codes, 2, &t, &at_vertex), vec![1.0, 2.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let u = rng.gen_range(0.0..1.0);
            let v = rng.gen_range(0.0..(1.0 - u));
            let s = SurfaceSample {
                point: Point3::origin(),
                tri_id: 0,
                bary: [u, v],
                distance: 0.0,
            };
            let g = uv_latent(&codes, 2, &t, &s);
            let w = 1.0 - u - v;
            assert!((g[0] - (u * 1.0 + v * 3.0 + w * 5.0)).abs() < 1e-12);
            assert!((g[1] - (u * 2.0 + v * 4.0 + w * 6.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn positional_encoding_matches_examples() {
        assert_eq!(positional_encoding(&[0.25, -0.5], 0), vec![0.25, -0.5]);

        let g = positional_encoding(&[0.0], 2);
        assert_eq!(g.len(), 5);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[1], 0.0); // sin
        assert_eq!(g[2], 1.0); // cos

        let g = positional_encoding(&[0.5], 1);
        assert!((g[0] - 0.5).abs() < 1e-15);
        assert!((g[1] - 1.0).abs() < 1e-15); // sin(pi/2)
        assert!(g[2].abs() < 1e-15); // cos(pi/2)
        assert_eq!(g.len(), positional_encoding_len(1, 1));
    }

    #[test]
    fn positional_encoding_backward_matches_fd() {
        let x = vec![0.31, -0.73, 0.11];
        let n_freq = 4;
        let up: Vec<f64> = (0..positional_encoding_len(3, n_freq))
            .map(|i| 0.1 * (i as f64 + 1.0))
            .collect();
        let grad = positional_encoding_backward(&x, n_freq, &up);
        let eps = 1e-6;
        for d in 0..3 {
            let mut hi = x.clone();
            hi[d] += eps;
            let mut lo = x.clone();
            lo[d] -= eps;
            let fh: f64 = positional_encoding(&hi, n_freq).iter().zip(&up).map(|(a, b)| a * b).sum();
            let fl: f64 = positional_encoding(&lo, n_freq).iter().zip(&up).map(|(a, b)| a * b).sum();
            let fd = (fh - fl) / (2.0 * eps);
            assert!((fd - grad[d]).abs() < 1e-5, "{} vs {}", fd, grad[d]);
        }
    }
}
