use nalgebra::{Matrix4, Point3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One joint of the skeleton. `rest` is the local (parent-relative) rest
/// transform; the root's rest transform is relative to the world.
#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub parent: i32,
    pub rest: Matrix4<f64>,
}

/// Rest-pose triangle mesh + skeleton + per-vertex skinning weights,
/// UVs, and latent codes.
#[derive(Debug, Clone, PartialEq)]
pub struct SkinnedMesh {
    pub vertices: Vec<Point3<f64>>,
    pub triangles: Vec<[usize; 3]>,
    pub uvs: Vec<Vector2<f64>>,
    /// Row `v` holds the weight of vertex `v` for each joint; rows sum to 1.
    pub skin_weights: Vec<Vec<f64>>,
    pub skeleton: Vec<Joint>,
    /// Per-vertex latent codes; all rows share one dimension (default 16).
    pub vertex_codes: Vec<Vec<f64>>,
}

/// Axis-angle joint rotations plus a root translation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub joint_rotations: Vec<[f64; 3]>,
    pub root_translation: [f64; 3],
}

impl Pose {
    pub fn identity(n_joints: usize) -> Self {
        Pose {
            joint_rotations: vec![[0.0; 3]; n_joints],
            root_translation: [0.0; 3],
        }
    }

    /// Flattened joint rotations, used for pose similarity and as the
    /// appended pose vector of the tri-plane feature.
    pub fn flat_rotations(&self) -> Vec<f64> {
        self.joint_rotations.iter().flatten().copied().collect()
    }

    pub fn validate(&self, n_joints: usize) -> Result<()> {
        if self.joint_rotations.len() != n_joints {
            return Err(Error::InvalidPose(format!(
                "expected {} joint rotations, got {}",
                n_joints,
                self.joint_rotations.len()
            )));
        }
        for (j, r) in self.joint_rotations.iter().enumerate() {
            let norm = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
            if !norm.is_finite() || norm >= 2.0 * std::f64::consts::PI {
                return Err(Error::InvalidPose(format!(
                    "joint {} axis-angle norm {} out of range",
                    j, norm
                )));
            }
        }
        if self.root_translation.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidPose("non-finite root translation".into()));
        }
        Ok(())
    }
}

impl SkinnedMesh {
    pub fn n_joints(&self) -> usize {
        self.skeleton.len()
    }

    pub fn triangle(&self, t: usize) -> [Point3<f64>; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Axis-aligned bounding box of the rest-pose vertices.
    pub fn aabb(&self) -> (Point3<f64>, Point3<f64>) {
        aabb_of(&self.vertices)
    }

    pub fn diameter(&self) -> f64 {
        let (lo, hi) = self.aabb();
        (hi - lo).norm()
    }

    pub fn validate(&self) -> Result<()> {
        let nv = self.vertices.len();
        if nv == 0 || self.triangles.is_empty() {
            return Err(Error::InvalidMesh("empty mesh".into()));
        }
        if self.uvs.len() != nv || self.skin_weights.len() != nv {
            return Err(Error::InvalidMesh("per-vertex array length mismatch".into()));
        }
        if !self.vertex_codes.is_empty() && self.vertex_codes.len() != nv {
            return Err(Error::InvalidMesh("vertex_codes length mismatch".into()));
        }
        let nj = self.skeleton.len();
        for (v, row) in self.skin_weights.iter().enumerate() {
            if row.len() != nj {
                return Err(Error::InvalidMesh(format!(
                    "skin weight row {} has {} entries, expected {}",
                    v,
                    row.len(),
                    nj
                )));
            }
            if row.iter().any(|w| *w < 0.0 || !w.is_finite()) {
                return Err(Error::InvalidMesh(format!("negative weight at vertex {}", v)));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidMesh(format!(
                    "skin weight row {} sums to {}",
                    v, s
                )));
            }
        }
        for (t, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|&i| i >= nv) {
                return Err(Error::InvalidMesh(format!("triangle {} index out of range", t)));
            }
            let [a, b, c] = self.triangle(t);
            let area2 = (b - a).cross(&(c - a)).norm();
            if area2 <= 1e-12 * self.diameter() * self.diameter() {
                return Err(Error::InvalidMesh(format!("degenerate triangle {}", t)));
            }
        }
        validate_skeleton(&self.skeleton)?;
        Ok(())
    }
}

pub(crate) fn aabb_of(points: &[Point3<f64>]) -> (Point3<f64>, Point3<f64>) {
    let mut lo = Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut hi = Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in points {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    (lo, hi)
}

/// Parent indices must form a forest rooted at -1 with no cycles.
pub(crate) fn validate_skeleton(skeleton: &[Joint]) -> Result<()> {
    let n = skeleton.len();
    if n == 0 {
        return Err(Error::InvalidSkeleton("no joints".into()));
    }
    for (b, joint) in skeleton.iter().enumerate() {
        if joint.parent >= b as i32 {
            // Parents must precede children; equality means self-parenting.
            if joint.parent == b as i32 {
                return Err(Error::InvalidSkeleton(format!("joint {} is its own parent", b)));
            }
        }
        if joint.parent >= n as i32 || joint.parent < -1 {
            return Err(Error::InvalidSkeleton(format!(
                "joint {} parent {} out of range",
                b, joint.parent
            )));
        }
        // Walk to the root; a cycle would exceed n steps.
        let mut cur = joint.parent;
        let mut steps = 0;
        while cur >= 0 {
            cur = skeleton[cur as usize].parent;
            steps += 1;
            if steps > n {
                return Err(Error::InvalidSkeleton(format!("cycle through joint {}", b)));
            }
        }
    }
    Ok(())
}

// ---- JSON mesh / pose file formats ----

#[derive(Serialize, Deserialize)]
struct JointJson {
    parent: i32,
    rest: [f64; 16],
}

#[derive(Serialize, Deserialize)]
struct MeshJson {
    vertices: Vec<[f64; 3]>,
    triangles: Vec<[usize; 3]>,
    uvs: Vec<[f64; 2]>,
    skin_weights: Vec<Vec<f64>>,
    skeleton: Vec<JointJson>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    vertex_codes: Vec<Vec<f64>>,
}

impl SkinnedMesh {
    pub fn to_json(&self) -> serde_json::Value {
        let doc = MeshJson {
            vertices: self.vertices.iter().map(|p| [p.x, p.y, p.z]).collect(),
            triangles: self.triangles.clone(),
            uvs: self.uvs.iter().map(|u| [u.x, u.y]).collect(),
            skin_weights: self.skin_weights.clone(),
            skeleton: self
                .skeleton
                .iter()
                .map(|j| JointJson {
                    parent: j.parent,
                    rest: row_major(&j.rest),
                })
                .collect(),
            vertex_codes: self.vertex_codes.clone(),
        };
        serde_json::to_value(doc).expect("mesh serialization")
    }

    pub fn from_json(value: serde_json::Value) -> Result<Self> {
        let doc: MeshJson = serde_json::from_value(value)?;
        let mesh = SkinnedMesh {
            vertices: doc.vertices.iter().map(|v| Point3::new(v[0], v[1], v[2])).collect(),
            triangles: doc.triangles,
            uvs: doc.uvs.iter().map(|u| Vector2::new(u[0], u[1])).collect(),
            skin_weights: doc.skin_weights,
            skeleton: doc
                .skeleton
                .into_iter()
                .map(|j| Joint {
                    parent: j.parent,
                    rest: from_row_major(&j.rest),
                })
                .collect(),
            vertex_codes: doc.vertex_codes,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), &self.to_json())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let value = serde_json::from_reader(std::io::BufReader::new(file))?;
        Self::from_json(value)
    }
}

fn row_major(m: &Matrix4<f64>) -> [f64; 16] {
    let mut out = [0.0; 16];
    for r in 0..4 {
        for c in 0..4 {
            out[r * 4 + c] = m[(r, c)];
        }
    }
    out
}

fn from_row_major(v: &[f64; 16]) -> Matrix4<f64> {
    let mut m = Matrix4::zeros();
    for r in 0..4 {
        for c in 0..4 {
            m[(r, c)] = v[r * 4 + c];
        }
    }
    m
}

/// Load a JSON array of poses.
pub fn load_poses(path: &std::path::Path) -> Result<Vec<Pose>> {
    let file = std::fs::File::open(path)?;
    let poses: Vec<Pose> = serde_json::from_reader(std::io::BufReader::new(file))?;
    Ok(poses)
}

pub fn save_poses(path: &std::path::Path, poses: &[Pose]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    serde_json::to_writer(std::io::BufWriter::new(file), poses)?;
    Ok(())
}

#[allow(unused)]
pub(crate) fn unit_vector3(v: Vector3<f64>) -> Vector3<f64> {
    let n = v.norm();
    if n > 0.0 {
        v / n
    } else {
        v
    }
}
