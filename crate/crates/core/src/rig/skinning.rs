use nalgebra::{Matrix3, Matrix4, Point3, Rotation3, Vector3};

use super::mesh::{validate_skeleton, Pose, SkinnedMesh};
use super::surface::{nearest_surface, MeshBvh};
use crate::{Error, Result};

/// Per-joint rigid transforms mapping canonical space to observation space.
///
/// Each transform is `G_posed(b) * G_rest(b)^-1`, where `G` composes local
/// joint transforms along the parent chain. The identity pose with zero root
/// translation yields the identity for every joint.
pub fn forward_kinematics(mesh: &SkinnedMesh, pose: &Pose) -> Result<Vec<Matrix4<f64>>> {
    validate_skeleton(&mesh.skeleton)?;
    pose.validate(mesh.n_joints())?;

    let n = mesh.n_joints();
    let mut g_rest = vec![Matrix4::identity(); n];
    let mut g_posed = vec![Matrix4::identity(); n];

    for b in 0..n {
        let local_rest = mesh.skeleton[b].rest;
        let r = pose.joint_rotations[b];
        let axis_angle = Vector3::new(r[0], r[1], r[2]);
        let mut local_posed = local_rest * rotation_matrix4(axis_angle);
        if mesh.skeleton[b].parent < 0 {
            let t = pose.root_translation;
            local_posed = translation_matrix4(Vector3::new(t[0], t[1], t[2])) * local_posed;
        }
        let parent = mesh.skeleton[b].parent;
        if parent < 0 {
            g_rest[b] = local_rest;
            g_posed[b] = local_posed;
        } else {
            let p = parent as usize;
            // Parents precede children by construction order; if not, the
            // chain walk still terminates because validate_skeleton passed.
            g_rest[b] = g_rest[p] * local_rest;
            g_posed[b] = g_posed[p] * local_posed;
        }
    }

    let mut out = Vec::with_capacity(n);
    for b in 0..n {
        let inv = g_rest[b]
            .try_inverse()
            .ok_or_else(|| Error::InvalidSkeleton(format!("joint {} rest transform singular", b)))?;
        out.push(g_posed[b] * inv);
    }
    Ok(out)
}

/// Linear blend skinning: `x_posed(v) = sum_b W_vb * B_b * x_rest(v)`.
pub fn lbs_deform(mesh: &SkinnedMesh, pose: &Pose) -> Result<Vec<Point3<f64>>> {
    let transforms = forward_kinematics(mesh, pose)?;
    Ok(mesh
        .vertices
        .iter()
        .zip(&mesh.skin_weights)
        .map(|(x, weights)| blend_apply(x, weights, &transforms))
        .collect())
}

/// The approximate LBS inverse: `x_c = sum_b W_b * B_b^-1 * x_o`.
pub fn inverse_lbs(x_o: &Point3<f64>, weights: &[f64], transforms: &[Matrix4<f64>]) -> Point3<f64> {
    debug_assert_eq!(weights.len(), transforms.len());
    let mut acc = Vector3::zeros();
    for (w, b) in weights.iter().zip(transforms) {
        if *w == 0.0 {
            continue;
        }
        let inv = b.try_inverse().expect("rigid transform is invertible");
        acc += *w * apply_mat4(&inv, x_o).coords;
    }
    Point3::from(acc)
}

/// Like [`inverse_lbs`] but with the inverses precomputed once per pose.
pub fn inverse_lbs_cached(
    x_o: &Point3<f64>,
    weights: &[f64],
    inverse_transforms: &[Matrix4<f64>],
) -> Point3<f64> {
    let mut acc = Vector3::zeros();
    for (w, inv) in weights.iter().zip(inverse_transforms) {
        if *w == 0.0 {
            continue;
        }
        acc += *w * apply_mat4(inv, x_o).coords;
    }
    Point3::from(acc)
}

/// Skin weights for a free-space point: barycentric interpolation of the
/// vertex weight rows at the nearest posed-surface point.
pub fn query_skin_weights(
    x_o: &Point3<f64>,
    mesh: &SkinnedMesh,
    posed_vertices: &[Point3<f64>],
    bvh: Option<&MeshBvh>,
) -> Result<Vec<f64>> {
    if mesh.triangles.is_empty() {
        return Err(Error::InvalidMesh("empty mesh".into()));
    }
    let sample = nearest_surface(x_o, posed_vertices, &mesh.triangles, bvh);
    let [a, b, c] = mesh.triangles[sample.tri_id];
    let (u, v) = (sample.bary[0], sample.bary[1]);
    let w = 1.0 - u - v;
    let nj = mesh.n_joints();
    let mut out = vec![0.0; nj];
    for j in 0..nj {
        out[j] =
            u * mesh.skin_weights[a][j] + v * mesh.skin_weights[b][j] + w * mesh.skin_weights[c][j];
    }
    Ok(out)
}

/// Blended forward transform `sum_b W_b B_b` applied to a point.
pub fn blend_apply(x: &Point3<f64>, weights: &[f64], transforms: &[Matrix4<f64>]) -> Point3<f64> {
    let mut acc = Vector3::zeros();
    for (w, b) in weights.iter().zip(transforms) {
        if *w == 0.0 {
            continue;
        }
        acc += *w * apply_mat4(b, x).coords;
    }
    Point3::from(acc)
}

/// Rotation block of the blended forward transform `sum_b W_b B_b`.
pub fn blend_rotation(weights: &[f64], transforms: &[Matrix4<f64>]) -> Matrix3<f64> {
    let mut acc = Matrix3::zeros();
    for (w, b) in weights.iter().zip(transforms) {
        if *w == 0.0 {
            continue;
        }
        acc += *w * b.fixed_view::<3, 3>(0, 0);
    }
    acc
}

pub(crate) fn apply_mat4(m: &Matrix4<f64>, p: &Point3<f64>) -> Point3<f64> {
    let r = m.fixed_view::<3, 3>(0, 0);
    let t = m.fixed_view::<3, 1>(0, 3);
    Point3::from(r * p.coords + t)
}

fn rotation_matrix4(axis_angle: Vector3<f64>) -> Matrix4<f64> {
    let rot = Rotation3::from_scaled_axis(axis_angle);
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(rot.matrix());
    m
}

fn translation_matrix4(t: Vector3<f64>) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rig::mesh::Joint;
    use nalgebra::Vector2;

    /// Minimal two-triangle quad bound to a small chain skeleton.
    pub(crate) fn quad_mesh(n_joints: usize) -> SkinnedMesh {
        let mut skeleton = Vec::new();
        for b in 0..n_joints {
            skeleton.push(Joint {
                parent: b as i32 - 1,
                rest: Matrix4::identity(),
            });
        }
        let mut w = vec![0.0; n_joints];
        w[0] = 1.0;
        SkinnedMesh {
            vertices: vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(1.0, 1.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
            ],
            triangles: vec![[0, 1, 2], [0, 2, 3]],
            uvs: vec![
                Vector2::new(0.0, 0.0),
                Vector2::new(1.0, 0.0),
                Vector2::new(1.0, 1.0),
                Vector2::new(0.0, 1.0),
            ],
            skin_weights: vec![w.clone(); 4],
            skeleton,
            vertex_codes: vec![],
        }
    }

    #[test]
    fn identity_pose_gives_identity_transforms() {
        let mesh = quad_mesh(3);
        let pose = Pose::identity(3);
        let transforms = forward_kinematics(&mesh, &pose).unwrap();
        for b in &transforms {
            assert!((b - Matrix4::identity()).norm() < 1e-12);
        }
    }

    #[test]
    fn root_rotation_about_z() {
        let mesh = quad_mesh(1);
        let pose = Pose {
            joint_rotations: vec![[0.0, 0.0, std::f64::consts::FRAC_PI_2]],
            root_translation: [0.0; 3],
        };
        let b = forward_kinematics(&mesh, &pose).unwrap()[0];
        let p = apply_mat4(&b, &Point3::new(1.0, 0.0, 0.0));
        assert!((p - Point3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn three_joint_chain_matches_matrix_chain_oracle() {
        // Oracle: explicit 4x4 chain products, written out independently.
        let mut mesh = quad_mesh(3);
        mesh.skeleton[1].rest = translation_matrix4(Vector3::new(0.0, 1.0, 0.0));
        mesh.skeleton[2].rest = translation_matrix4(Vector3::new(0.0, 1.0, 0.3));
        let pose = Pose {
            joint_rotations: vec![[0.1, -0.2, 0.3], [0.0, 0.5, -0.1], [0.7, 0.0, 0.2]],
            root_translation: [0.2, -0.1, 0.4],
        };
        let got = forward_kinematics(&mesh, &pose).unwrap();

        let rot = |r: [f64; 3]| rotation_matrix4(Vector3::new(r[0], r[1], r[2]));
        let trans = translation_matrix4(Vector3::new(0.2, -0.1, 0.4));
        let l0 = trans * mesh.skeleton[0].rest * rot(pose.joint_rotations[0]);
        let l1 = mesh.skeleton[1].rest * rot(pose.joint_rotations[1]);
        let l2 = mesh.skeleton[2].rest * rot(pose.joint_rotations[2]);
        let g0 = l0;
        let g1 = g0 * l1;
        let g2 = g1 * l2;
        let r0 = mesh.skeleton[0].rest;
        let r1 = r0 * mesh.skeleton[1].rest;
        let r2 = r1 * mesh.skeleton[2].rest;
        let expect = [
            g0 * r0.try_inverse().unwrap(),
            g1 * r1.try_inverse().unwrap(),
            g2 * r2.try_inverse().unwrap(),
        ];
        for (g, e) in got.iter().zip(&expect) {
            assert!((g - e).norm() < 1e-10, "fk mismatch:\n{}\n{}", g, e);
        }
    }

    #[test]
    fn fk_rotation_blocks_are_orthonormal() {
        let mut mesh = quad_mesh(3);
        mesh.skeleton[1].rest = translation_matrix4(Vector3::new(0.0, 0.7, 0.0));
        mesh.skeleton[2].rest = translation_matrix4(Vector3::new(0.4, 0.0, 0.0));
        let pose = Pose {
            joint_rotations: vec![[0.3, 0.1, -0.4], [1.0, 0.0, 0.2], [0.0, -0.8, 0.1]],
            root_translation: [1.0, 2.0, 3.0],
        };
        for b in forward_kinematics(&mesh, &pose).unwrap() {
            let r = b.fixed_view::<3, 3>(0, 0).into_owned();
            assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-6);
        }
    }

    #[test]
    fn cyclic_skeleton_rejected() {
        let mut mesh = quad_mesh(3);
        mesh.skeleton[0].parent = 2; // 0 -> 2 -> 1 -> 0
        mesh.skeleton[1].parent = 0;
        mesh.skeleton[2].parent = 1;
        assert!(forward_kinematics(&mesh, &Pose::identity(3)).is_err());
    }

    #[test]
    fn lbs_identity_returns_rest() {
        let mesh = quad_mesh(2);
        let posed = lbs_deform(&mesh, &Pose::identity(2)).unwrap();
        for (a, b) in posed.iter().zip(&mesh.vertices) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn lbs_single_joint_translation() {
        let mesh = quad_mesh(1);
        let pose = Pose {
            joint_rotations: vec![[0.0; 3]],
            root_translation: [0.5, -1.0, 2.0],
        };
        let posed = lbs_deform(&mesh, &pose).unwrap();
        for (a, b) in posed.iter().zip(&mesh.vertices) {
            assert!((a - (b + Vector3::new(0.5, -1.0, 2.0))).norm() < 1e-12);
        }
    }

    #[test]
    fn lbs_matches_brute_force_weighted_sum() {
        let mut mesh = quad_mesh(3);
        mesh.skeleton[1].rest = translation_matrix4(Vector3::new(0.0, 1.0, 0.0));
        mesh.skeleton[2].rest = translation_matrix4(Vector3::new(0.5, 0.0, 0.0));
        mesh.skin_weights = vec![
            vec![0.5, 0.3, 0.2],
            vec![0.1, 0.6, 0.3],
            vec![0.0, 0.0, 1.0],
            vec![0.25, 0.25, 0.5],
        ];
        let pose = Pose {
            joint_rotations: vec![[0.2, 0.0, 0.1], [0.0, 0.4, 0.0], [-0.3, 0.0, 0.5]],
            root_translation: [0.1, 0.2, 0.3],
        };
        let transforms = forward_kinematics(&mesh, &pose).unwrap();
        let posed = lbs_deform(&mesh, &pose).unwrap();
        for (v, x) in mesh.vertices.iter().enumerate() {
            let mut expect = Vector3::zeros();
            for b in 0..3 {
                expect += mesh.skin_weights[v][b] * apply_mat4(&transforms[b], x).coords;
            }
            assert!((posed[v].coords - expect).norm() < 1e-12);
        }
    }

    #[test]
    fn inverse_lbs_identity_and_translation() {
        let x = Point3::new(0.3, 0.7, -0.2);
        let id = vec![Matrix4::identity()];
        assert_eq!(inverse_lbs(&x, &[1.0], &id), x);

        let t = translation_matrix4(Vector3::new(1.0, 2.0, 3.0));
        let back = inverse_lbs(&x, &[1.0], &[t]);
        assert!((back - Point3::new(-0.7, -1.3, -3.2)).norm() < 1e-12);
    }

    #[test]
    fn query_weights_at_vertex_and_centroid() {
        let mut mesh = quad_mesh(2);
        mesh.skin_weights = vec![
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.5, 0.5],
            vec![0.25, 0.75],
        ];
        let posed = mesh.vertices.clone();
        let w = query_skin_weights(&Point3::new(0.0, 0.0, 0.5), &mesh, &posed, None).unwrap();
        assert!((w[0] - 1.0).abs() < 1e-12 && w[1].abs() < 1e-12);

        // Equal rows -> the common row at a centroid.
        mesh.skin_weights = vec![vec![0.4, 0.6]; 4];
        let centroid = Point3::new(2.0 / 3.0, 1.0 / 3.0, 0.0);
        let w = query_skin_weights(&centroid, &mesh, &posed, None).unwrap();
        assert!((w[0] - 0.4).abs() < 1e-12 && (w[1] - 0.6).abs() < 1e-12);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
