use nalgebra::{Matrix3, Point3, Vector2, Vector3};

use super::surface::SurfaceSample;

/// Per-vertex tangent frame data, computed for a given vertex configuration
/// (rest or posed) sharing the mesh topology and UVs.
#[derive(Debug, Clone)]
pub struct TbnBasis {
    pub normals: Vec<Vector3<f64>>,
    pub tangents: Vec<Vector3<f64>>,
    pub bitangents: Vec<Vector3<f64>>,
    /// Triangles whose UV Jacobian was singular; their tangents fell back to
    /// an arbitrary unit vector orthogonal to the face normal.
    pub uv_degenerate: Vec<usize>,
}

const UV_DET_EPS: f64 = 1e-10;

/// Area-weighted vertex normals: unnormalized face normals `e1 x e2`
/// accumulated per vertex, then normalized.
pub fn vertex_normals(
    vertices: &[Point3<f64>],
    triangles: &[[usize; 3]],
) -> Vec<Vector3<f64>> {
    let mut acc = vec![Vector3::zeros(); vertices.len()];
    for tri in triangles {
        let [a, b, c] = *tri;
        let nf = (vertices[b] - vertices[a]).cross(&(vertices[c] - vertices[a]));
        acc[a] += nf;
        acc[b] += nf;
        acc[c] += nf;
    }
    for n in &mut acc {
        let len = n.norm();
        if len > 0.0 {
            *n /= len;
        }
    }
    acc
}

/// Per-face tangent/bitangent from the UV linear system
/// `[e1; e2] = [du1 dv1; du2 dv2] * [t; b]`. Returns `None` for a
/// UV-degenerate face.
pub fn face_tangent(
    vertices: &[Point3<f64>],
    uvs: &[Vector2<f64>],
    tri: &[usize; 3],
) -> Option<(Vector3<f64>, Vector3<f64>)> {
    let [a, b, c] = *tri;
    let e1 = vertices[b] - vertices[a];
    let e2 = vertices[c] - vertices[a];
    let du1 = uvs[b].x - uvs[a].x;
    let dv1 = uvs[b].y - uvs[a].y;
    let du2 = uvs[c].x - uvs[a].x;
    let dv2 = uvs[c].y - uvs[a].y;
    let det = du1 * dv2 - dv1 * du2;
    if det.abs() <= UV_DET_EPS {
        return None;
    }
    let inv = 1.0 / det;
    let t = (e1 * dv2 - e2 * dv1) * inv;
    let bt = (e2 * du1 - e1 * du2) * inv;
    Some((t, bt))
}

/// Deterministic unit tangent orthogonal to `n`: project +x, else +y.
fn fallback_tangent(n: &Vector3<f64>) -> Vector3<f64> {
    for axis in [Vector3::x(), Vector3::y()] {
        let t = axis - n * n.dot(&axis);
        let len = t.norm();
        if len > 1e-8 {
            return t / len;
        }
    }
    // n is (anti)parallel to both x and y: impossible for a unit vector,
    // but keep a total function.
    Vector3::z()
}

/// Build per-vertex TBN: face tangents accumulated with the same area
/// weighting as normals, then normalized.
pub fn compute_tbn(
    vertices: &[Point3<f64>],
    triangles: &[[usize; 3]],
    uvs: &[Vector2<f64>],
) -> TbnBasis {
    let normals = vertex_normals(vertices, triangles);
    let mut t_acc = vec![Vector3::zeros(); vertices.len()];
    let mut b_acc = vec![Vector3::zeros(); vertices.len()];
    let mut uv_degenerate = Vec::new();

    for (f, tri) in triangles.iter().enumerate() {
        let [a, b, c] = *tri;
        let nf = (vertices[b] - vertices[a]).cross(&(vertices[c] - vertices[a]));
        let area_w = nf.norm();
        let (tf, bf) = match face_tangent(vertices, uvs, tri) {
            Some(tb) => tb,
            None => {
                uv_degenerate.push(f);
                let n = nf / area_w.max(1e-300);
                let tf = fallback_tangent(&n);
                (tf, n.cross(&tf))
            }
        };
        let (tf_n, bf_n) = (normalize_or_zero(tf), normalize_or_zero(bf));
        for v in [a, b, c] {
            t_acc[v] += tf_n * area_w;
            b_acc[v] += bf_n * area_w;
        }
    }

    let tangents: Vec<_> = t_acc.into_iter().map(normalize_or_zero).collect();
    let bitangents: Vec<_> = b_acc.into_iter().map(normalize_or_zero).collect();
    TbnBasis {
        normals,
        tangents,
        bitangents,
        uv_degenerate,
    }
}

fn normalize_or_zero(v: Vector3<f64>) -> Vector3<f64> {
    let n = v.norm();
    if n > 0.0 {
        v / n
    } else {
        v
    }
}

/// Interpolated, orthonormalized tangent frame at a surface sample.
#[derive(Debug, Clone, Copy)]
pub struct Frame {
    pub normal: Vector3<f64>,
    pub tangent: Vector3<f64>,
    pub bitangent: Vector3<f64>,
    /// Rows are `[t, b, n]`.
    pub tbn: Matrix3<f64>,
}

/// Barycentric interpolation of the vertex frames, renormalized, with the
/// tangent Gram-Schmidt-orthogonalized against the normal and
/// `b = n x t` recomputed. The resulting matrix is right-handed orthonormal.
pub fn tbn_at(basis: &TbnBasis, triangles: &[[usize; 3]], sample: &SurfaceSample) -> Frame {
    let [a, b, c] = triangles[sample.tri_id];
    let (u, v) = (sample.bary[0], sample.bary[1]);
    let w = 1.0 - u - v;
    let n = normalize_or_zero(basis.normals[a] * u + basis.normals[b] * v + basis.normals[c] * w);
    let t_raw =
        normalize_or_zero(basis.tangents[a] * u + basis.tangents[b] * v + basis.tangents[c] * w);
    let mut t = t_raw - n * n.dot(&t_raw);
    let t_len = t.norm();
    if t_len > 1e-10 {
        t /= t_len;
    } else {
        t = fallback_tangent(&n);
    }
    let bt = n.cross(&t);
    let tbn = Matrix3::from_rows(&[t.transpose(), bt.transpose(), n.transpose()]);
    Frame {
        normal: n,
        tangent: t,
        bitangent: bt,
        tbn,
    }
}
