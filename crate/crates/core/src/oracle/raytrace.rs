//! Reference renderer: exact surface rendering of the posed mesh by ray
//! tracing, with per-texel shadow rays against the light probe. Ground
//! truth for the learned model.

use nalgebra::{Point3, Vector2, Vector3};
use rayon::prelude::*;

use crate::io::FloatImage;
use crate::render::{Camera, LightProbe};
use crate::rig::{lbs_deform, MeshBvh, Pose, SkinnedMesh};
use crate::Result;

/// Ray/triangle intersection (Moller-Trumbore, no backface culling).
/// Returns (t, u, v) with u, v the barycentric weights of the second and
/// third vertices.
pub fn ray_triangle(
    origin: &Point3<f64>,
    dir: &Vector3<f64>,
    v0: &Point3<f64>,
    v1: &Point3<f64>,
    v2: &Point3<f64>,
) -> Option<(f64, f64, f64)> {
    let e1 = v1 - v0;
    let e2 = v2 - v0;
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv = 1.0 / det;
    let s = origin - v0;
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&q) * inv;
    if t <= 1e-9 {
        return None;
    }
    Some((t, u, v))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub t: f64,
    pub tri: usize,
    pub u: f64,
    pub v: f64,
}

/// Nearest hit by exhaustive triangle tests. Ties at identical distance go
/// to the lower triangle index.
pub fn intersect_brute(
    origin: &Point3<f64>,
    dir: &Vector3<f64>,
    vertices: &[Point3<f64>],
    triangles: &[[usize; 3]],
) -> Option<RayHit> {
    let mut best: Option<RayHit> = None;
    for (i, tri) in triangles.iter().enumerate() {
        if let Some((t, u, v)) = ray_triangle(
            origin,
            dir,
            &vertices[tri[0]],
            &vertices[tri[1]],
            &vertices[tri[2]],
        ) {
            if best.is_none_or(|b| t < b.t) {
                best = Some(RayHit { t, tri: i, u, v });
            }
        }
    }
    best
}

/// Nearest hit through the BVH; agrees with [`intersect_brute`] exactly.
pub fn intersect_bvh(
    origin: &Point3<f64>,
    dir: &Vector3<f64>,
    vertices: &[Point3<f64>],
    triangles: &[[usize; 3]],
    bvh: &MeshBvh,
) -> Option<RayHit> {
    let inv_dir = [1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z];
    let mut best: Option<RayHit> = None;
    let mut cands = Vec::new();
    bvh.for_each_candidate_ray(origin, &inv_dir, f64::INFINITY, &mut |t| {
        cands.push(t)
    });
    // Fixed evaluation order keeps tie-breaking identical to the brute scan.
    cands.sort_unstable();
    for i in cands {
        let tri = &triangles[i];
        if let Some((t, u, v)) = ray_triangle(
            origin,
            dir,
            &vertices[tri[0]],
            &vertices[tri[1]],
            &vertices[tri[2]],
        ) {
            if best.is_none_or(|b| t < b.t) {
                best = Some(RayHit { t, tri: i, u, v });
            }
        }
    }
    best
}

/// True when anything blocks the ray (used for shadow rays).
pub fn occluded(
    origin: &Point3<f64>,
    dir: &Vector3<f64>,
    vertices: &[Point3<f64>],
    triangles: &[[usize; 3]],
    bvh: &MeshBvh,
) -> bool {
    let inv_dir = [1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z];
    let mut hit = false;
    bvh.for_each_candidate_ray(origin, &inv_dir, f64::INFINITY, &mut |i| {
        if !hit {
            let tri = &triangles[i];
            hit = ray_triangle(
                origin,
                dir,
                &vertices[tri[0]],
                &vertices[tri[1]],
                &vertices[tri[2]],
            )
            .is_some();
        }
    });
    hit
}

/// One exact frame: linear RGB, coverage mask, and per-pixel albedo,
/// world normal, and shadow factor at the first hit.
pub struct GtFrame {
    pub rgb: FloatImage,
    pub mask: Vec<bool>,
    pub albedo: FloatImage,
    pub normal: FloatImage,
    pub shadow: FloatImage,
}

/// Shadowed clamped-cosine shading at a surface point. Mirrors the
/// arithmetic of [`crate::render::shade`] term by term, so with all texels
/// visible the result is bit-identical to `shade(a, 1, n, probe)`.
/// Returns (rgb, scalar shadow factor).
fn shade_with_visibility(
    a: &[f64; 3],
    n: &Vector3<f64>,
    probe: &LightProbe,
    visible: impl Fn(usize) -> bool,
) -> ([f64; 3], f64) {
    let mut e = [0.0; 3];
    let mut num = 0.0; // mean-channel visible energy
    let mut den = 0.0; // mean-channel unshadowed energy
    for t in 0..probe.n_texels() {
        let cos = n.dot(&probe.dir(t));
        if cos <= 0.0 {
            continue;
        }
        let w = cos * probe.solid_angle(t);
        let mean = if probe.channels == 1 {
            probe.radiance(t, 0)
        } else {
            (probe.radiance(t, 0) + probe.radiance(t, 1) + probe.radiance(t, 2)) / 3.0
        };
        den += mean * w;
        if !visible(t) {
            continue;
        }
        num += mean * w;
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
    let shadow = if den < 1e-6 { 1.0 } else { num / den };
    ([a[0] * e[0], a[1] * e[1], a[2] * e[2]], shadow)
}

/// Render the posed mesh exactly: first-hit surface shading with per-texel
/// shadow rays. `texture` maps interpolated UV to albedo.
pub fn reference_render(
    mesh: &SkinnedMesh,
    pose: &Pose,
    camera: &Camera,
    probe: &LightProbe,
    texture: &(dyn Fn(f64, f64) -> [f64; 3] + Sync),
) -> Result<GtFrame> {
    let posed = lbs_deform(mesh, pose)?;
    let bvh = MeshBvh::build(&posed, &mesh.triangles);
    let (w, h) = (camera.width, camera.height);
    let eps = 1e-4 * mesh.diameter();

    let rows: Vec<Vec<[f64; 11]>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut row = Vec::with_capacity(w);
            for x in 0..w {
                let ray = camera.pixel_ray(x, y);
                let Some(hit) = intersect_bvh(&ray.origin, &ray.dir, &posed, &mesh.triangles, &bvh)
                else {
                    row.push([0.0; 11]);
                    continue;
                };
                let [i0, i1, i2] = mesh.triangles[hit.tri];
                let p = ray.origin + ray.dir * hit.t;
                let n = (posed[i1] - posed[i0])
                    .cross(&(posed[i2] - posed[i0]))
                    .normalize();
                let w0 = 1.0 - hit.u - hit.v;
                let uv: Vector2<f64> =
                    mesh.uvs[i0] * w0 + mesh.uvs[i1] * hit.u + mesh.uvs[i2] * hit.v;
                let a = texture(uv.x, uv.y);
                let origin = p + n * eps;
                let (rgb, shadow) = shade_with_visibility(&a, &n, probe, |t| {
                    !occluded(&origin, &probe.dir(t), &posed, &mesh.triangles, &bvh)
                });
                row.push([
                    rgb[0], rgb[1], rgb[2], n.x, n.y, n.z, shadow, 1.0, a[0], a[1], a[2],
                ]);
            }
            row
        })
        .collect();

    let mut out = GtFrame {
        rgb: FloatImage::new(w, h, 3),
        mask: vec![false; w * h],
        albedo: FloatImage::new(w, h, 3),
        normal: FloatImage::new(w, h, 3),
        shadow: FloatImage::new(w, h, 1),
    };
    for (y, row) in rows.iter().enumerate() {
        for (x, px) in row.iter().enumerate() {
            if px[7] == 0.0 {
                continue;
            }
            out.mask[y * w + x] = true;
            out.rgb.pixel_mut(x, y).copy_from_slice(&px[0..3]);
            out.normal.pixel_mut(x, y).copy_from_slice(&px[3..6]);
            out.shadow.pixel_mut(x, y)[0] = px[6];
            out.albedo.pixel_mut(x, y).copy_from_slice(&px[8..11]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::capsule::{albedo_texture, make_capsule_person, BodySpec};
    use crate::render::{irradiance, shade, Camera};
    use nalgebra::Point3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn test_mesh() -> SkinnedMesh {
        make_capsule_person(&BodySpec::default(), 16, 1).unwrap()
    }

    #[test]
    fn bvh_and_brute_agree_exactly() {
        let mesh = test_mesh();
        let pose = Pose::identity(mesh.n_joints());
        let posed = lbs_deform(&mesh, &pose).unwrap();
        let bvh = MeshBvh::build(&posed, &mesh.triangles);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let origin = Point3::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-1.5..2.0),
                rng.gen_range(-2.0..2.0),
            );
            let dir = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            )
            .normalize();
            let a = intersect_brute(&origin, &dir, &posed, &mesh.triangles);
            let b = intersect_bvh(&origin, &dir, &posed, &mesh.triangles, &bvh);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn unshadowed_point_matches_shade_bitwise() {
        // With every texel visible the reference shading must equal the
        // model's shading function exactly.
        let probe = LightProbe::constant(8, 16, 3, 0.4);
        let a = [0.3, 0.6, 0.9];
        let n = Vector3::new(0.2, 0.9, -0.1).normalize();
        let (rgb, shadow) = shade_with_visibility(&a, &n, &probe, |_| true);
        let expect = shade(&a, 1.0, &n, &probe);
        assert_eq!(rgb, expect);
        assert_eq!(shadow, 1.0);
    }

    #[test]
    fn shadow_factor_is_visible_fraction_of_energy() {
        let probe = LightProbe::constant(8, 16, 1, 1.0);
        let n = Vector3::new(0.0, 1.0, 0.0);
        // Nothing visible: zero color, zero shadow factor.
        let (rgb, s) = shade_with_visibility(&[1.0; 3], &n, &probe, |_| false);
        assert_eq!(rgb, [0.0; 3]);
        assert_eq!(s, 0.0);
        // Degenerate denominator guard.
        let dark = LightProbe::constant(8, 16, 1, 0.0);
        let (_, s) = shade_with_visibility(&[1.0; 3], &n, &dark, |_| true);
        assert_eq!(s, 1.0);
    }

    #[test]
    fn reference_frame_is_consistent() {
        let mesh = test_mesh();
        let pose = Pose::identity(mesh.n_joints());
        let camera = Camera::look_at(
            48,
            48,
            45.0,
            Point3::new(0.0, 0.3, 2.2),
            Point3::new(0.0, 0.3, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
        );
        let probe = LightProbe::constant(8, 16, 1, 0.25);
        let frame = reference_render(&mesh, &pose, &camera, &probe, &albedo_texture).unwrap();
        let covered = frame.mask.iter().filter(|m| **m).count();
        assert!(covered > 200, "subject should cover the view ({})", covered);
        for y in 0..48 {
            for x in 0..48 {
                let i = y * 48 + x;
                let rgb = frame.rgb.pixel(x, y);
                if !frame.mask[i] {
                    assert!(rgb.iter().all(|c| *c == 0.0));
                    continue;
                }
                let a = frame.albedo.pixel(x, y);
                let n = Vector3::new(
                    frame.normal.pixel(x, y)[0],
                    frame.normal.pixel(x, y)[1],
                    frame.normal.pixel(x, y)[2],
                );
                assert!((n.norm() - 1.0).abs() < 1e-9);
                // First hit on a closed surface: normals face the camera.
                assert!(n.dot(&camera.pixel_ray(x, y).dir) < 0.0);
                let s = frame.shadow.pixel(x, y)[0];
                assert!((0.0..=1.0).contains(&s));
                // rgb <= unshadowed shading, channelwise.
                let e = irradiance(&n, &probe);
                for c in 0..3 {
                    assert!(rgb[c] <= a[c] * e[c] + 1e-12);
                    assert!(rgb[c] >= 0.0);
                }
            }
        }
    }
}
