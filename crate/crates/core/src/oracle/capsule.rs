//! Synthetic articulated subject: a person made of skinned capsules, with
//! per-part UV charts and a known procedural albedo. Used as ground truth.

use nalgebra::{Matrix4, Point3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::rig::{Joint, SkinnedMesh};
use crate::{Error, Result};

/// Body proportions and tessellation of the capsule person.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BodySpec {
    pub torso_length: f64,
    pub torso_radius: f64,
    pub head_length: f64,
    pub head_radius: f64,
    pub neck_length: f64,
    pub upper_arm_length: f64,
    pub lower_arm_length: f64,
    pub arm_radius: f64,
    pub upper_leg_length: f64,
    pub lower_leg_length: f64,
    pub leg_radius: f64,
    /// Vertices around each capsule ring.
    pub ring_segments: usize,
    /// Rings along each cylinder section.
    pub axial_segments: usize,
    /// Rings per hemispherical cap.
    pub cap_segments: usize,
    /// Length of the weight-blend zone at a part's parent end.
    pub collar: f64,
}

impl Default for BodySpec {
    fn default() -> Self {
        BodySpec {
            torso_length: 0.5,
            torso_radius: 0.13,
            head_length: 0.1,
            head_radius: 0.1,
            neck_length: 0.05,
            upper_arm_length: 0.26,
            lower_arm_length: 0.24,
            arm_radius: 0.05,
            upper_leg_length: 0.4,
            lower_leg_length: 0.38,
            leg_radius: 0.065,
            ring_segments: 12,
            axial_segments: 4,
            cap_segments: 3,
            collar: 0.06,
        }
    }
}

impl BodySpec {
    pub fn validate(&self) -> Result<()> {
        let lens = [
            ("torso_length", self.torso_length),
            ("torso_radius", self.torso_radius),
            ("head_length", self.head_length),
            ("head_radius", self.head_radius),
            ("upper_arm_length", self.upper_arm_length),
            ("lower_arm_length", self.lower_arm_length),
            ("arm_radius", self.arm_radius),
            ("upper_leg_length", self.upper_leg_length),
            ("lower_leg_length", self.lower_leg_length),
            ("leg_radius", self.leg_radius),
            ("collar", self.collar),
        ];
        for (name, v) in lens {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "body dimension '{}' must be positive, got {}",
                    name, v
                )));
            }
        }
        if self.neck_length < 0.0 {
            return Err(Error::InvalidConfig("neck_length must be non-negative".into()));
        }
        if self.ring_segments < 3 || self.axial_segments < 1 || self.cap_segments < 1 {
            return Err(Error::InvalidConfig("capsule tessellation too coarse".into()));
        }
        Ok(())
    }
}

/// One body part: a capsule owned by one bone.
struct PartSpec {
    bone: usize,
    parent: i32,
    /// Capsule axis start (the joint position) and end, rest pose, world.
    p0: Point3<f64>,
    p1: Point3<f64>,
    radius: f64,
}

pub const N_PARTS: usize = 11;

fn layout_parts(b: &BodySpec) -> Result<Vec<PartSpec>> {
    let half_torso = b.torso_length / 2.0;
    let pelvis = Point3::new(0.0, 0.0, 0.0);
    let chest = Point3::new(0.0, half_torso, 0.0);
    let neck_top = Point3::new(0.0, b.torso_length + b.neck_length, 0.0);
    let shoulder_x = b.torso_radius + b.arm_radius * 0.8;
    let shoulder_y = b.torso_length - b.arm_radius;
    let arm_dir = Vector3::new(0.35, -1.0, 0.0).normalize();
    let hip_x = b.torso_radius - b.leg_radius * 0.9;
    let leg_dir = Vector3::new(0.08, -1.0, 0.0).normalize();

    let mut parts = Vec::with_capacity(N_PARTS);
    // 0: lower torso (root bone), 1: chest, 2: head.
    parts.push(PartSpec { bone: 0, parent: -1, p0: pelvis, p1: chest, radius: b.torso_radius });
    parts.push(PartSpec {
        bone: 1,
        parent: 0,
        p0: chest,
        p1: Point3::new(0.0, b.torso_length, 0.0),
        radius: b.torso_radius,
    });
    parts.push(PartSpec {
        bone: 2,
        parent: 1,
        p0: neck_top,
        p1: neck_top + Vector3::new(0.0, b.head_length, 0.0),
        radius: b.head_radius,
    });
    // 3/4 left arm, 5/6 right arm (upper then lower).
    for (side, first_bone) in [(1.0f64, 3usize), (-1.0, 5)] {
        let mirror = Vector3::new(side * arm_dir.x, arm_dir.y, arm_dir.z);
        let shoulder = Point3::new(side * shoulder_x, shoulder_y, 0.0);
        let elbow = shoulder + mirror * b.upper_arm_length;
        let wrist = elbow + mirror * b.lower_arm_length;
        parts.push(PartSpec { bone: first_bone, parent: 1, p0: shoulder, p1: elbow, radius: b.arm_radius });
        parts.push(PartSpec {
            bone: first_bone + 1,
            parent: first_bone as i32,
            p0: elbow,
            p1: wrist,
            radius: b.arm_radius,
        });
    }
    // 7/8 left leg, 9/10 right leg.
    for (side, first_bone) in [(1.0f64, 7usize), (-1.0, 9)] {
        let mirror = Vector3::new(side * leg_dir.x, leg_dir.y, leg_dir.z);
        let hip = Point3::new(side * hip_x, 0.0, 0.0);
        let knee = hip + mirror * b.upper_leg_length;
        let ankle = knee + mirror * b.lower_leg_length;
        parts.push(PartSpec { bone: first_bone, parent: 0, p0: hip, p1: knee, radius: b.leg_radius });
        parts.push(PartSpec {
            bone: first_bone + 1,
            parent: first_bone as i32,
            p0: knee,
            p1: ankle,
            radius: b.leg_radius,
        });
    }
    for p in &parts {
        if (p.p1 - p.p0).norm() <= 1e-9 || p.radius <= 0.0 {
            return Err(Error::InvalidMesh(format!(
                "degenerate body part for bone {} (zero length or radius)",
                p.bone
            )));
        }
    }
    Ok(parts)
}

/// Append one watertight capsule (cylinder + hemispherical caps) to the
/// vertex/triangle lists. UVs live in the part's horizontal chart strip.
#[allow(clippy::too_many_arguments)]
fn emit_capsule(
    part_idx: usize,
    part: &PartSpec,
    b: &BodySpec,
    vertices: &mut Vec<Point3<f64>>,
    triangles: &mut Vec<[usize; 3]>,
    uvs: &mut Vec<Vector2<f64>>,
    axial_s: &mut Vec<f64>,
) {
    let axis = part.p1 - part.p0;
    let len = axis.norm();
    let w = axis / len;
    // A stable orthonormal frame around the axis.
    let pick = if w.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let u_ax = w.cross(&pick).normalize();
    let v_ax = w.cross(&u_ax);
    let r = part.radius;
    let n_ring = b.ring_segments;
    let caps = b.cap_segments;
    let ax = b.axial_segments;
    let n_rows = 2 * caps + ax + 1; // ring rows between the two apexes

    // UV chart: u spans the part's strip with a small margin, v runs
    // pole-to-pole along the capsule.
    let chart_w = 1.0 / N_PARTS as f64;
    let u_lo = part_idx as f64 * chart_w + 0.05 * chart_w;
    let u_hi = (part_idx + 1) as f64 * chart_w - 0.05 * chart_w;
    let total_len = 2.0 * r + len;

    let base = vertices.len();
    // Bottom apex.
    vertices.push(part.p0 - w * r);
    uvs.push(Vector2::new(0.5 * (u_lo + u_hi), 0.0));
    axial_s.push(-r);
    // Ring rows.
    for row in 0..n_rows {
        // Position of this row along the swept profile.
        let (center, ring_r, s) = if row < caps {
            let t = (row + 1) as f64 / (caps + 1) as f64 * std::f64::consts::FRAC_PI_2;
            let s = -r * t.cos();
            (part.p0 + w * s, r * t.sin(), s)
        } else if row <= caps + ax {
            let s = (row - caps) as f64 / ax as f64 * len;
            (part.p0 + w * s, r, s)
        } else {
            let k = row - caps - ax;
            let t = k as f64 / (caps + 1) as f64 * std::f64::consts::FRAC_PI_2;
            let s = len + r * t.sin();
            (part.p1 + w * (s - len), r * t.cos(), s)
        };
        let v_tex = (s + r) / total_len;
        for j in 0..n_ring {
            let phi = j as f64 / n_ring as f64 * std::f64::consts::TAU;
            vertices.push(center + (u_ax * phi.cos() + v_ax * phi.sin()) * ring_r);
            let frac = j as f64 / n_ring as f64;
            // Fold the angle so texel u is continuous across the seam.
            let folded = 1.0 - 2.0 * (frac - 0.5).abs();
            uvs.push(Vector2::new(u_lo + folded * (u_hi - u_lo), v_tex));
            axial_s.push(s);
        }
    }
    // Top apex.
    vertices.push(part.p1 + w * r);
    uvs.push(Vector2::new(0.5 * (u_lo + u_hi), 1.0));
    axial_s.push(len + r);

    let ring = |row: usize, j: usize| base + 1 + row * n_ring + (j % n_ring);
    let apex_bottom = base;
    let apex_top = base + 1 + n_rows * n_ring;
    // Bottom fan (outward winding: counter-clockwise seen from outside).
    for j in 0..n_ring {
        triangles.push([apex_bottom, ring(0, j + 1), ring(0, j)]);
    }
    // Quad strips.
    for row in 0..n_rows - 1 {
        for j in 0..n_ring {
            let a = ring(row, j);
            let bq = ring(row, j + 1);
            let c = ring(row + 1, j);
            let d = ring(row + 1, j + 1);
            triangles.push([a, bq, d]);
            triangles.push([a, d, c]);
        }
    }
    // Top fan.
    for j in 0..n_ring {
        triangles.push([apex_top, ring(n_rows - 1, j), ring(n_rows - 1, j + 1)]);
    }
}

fn translation(p: Point3<f64>) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    m[(0, 3)] = p.x;
    m[(1, 3)] = p.y;
    m[(2, 3)] = p.z;
    m
}

/// Build the articulated capsule person. Deterministic for a given spec and
/// seed (the seed only drives the per-vertex latent codes).
pub fn make_capsule_person(body: &BodySpec, code_dim: usize, seed: u64) -> Result<SkinnedMesh> {
    body.validate()?;
    let parts = layout_parts(body)?;

    // Skeleton: one joint per part, positioned at the capsule's start.
    let mut skeleton = Vec::with_capacity(parts.len());
    for p in &parts {
        let parent_pos = if p.parent >= 0 {
            parts[p.parent as usize].p0
        } else {
            Point3::origin()
        };
        skeleton.push(Joint {
            parent: p.parent,
            rest: translation(Point3::from(p.p0 - parent_pos)),
        });
    }

    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    let mut uvs = Vec::new();
    let mut axial_s = Vec::new();
    let mut part_of = Vec::new();
    for (i, p) in parts.iter().enumerate() {
        let before = vertices.len();
        emit_capsule(i, p, body, &mut vertices, &mut triangles, &mut uvs, &mut axial_s);
        part_of.resize(vertices.len(), i);
        debug_assert!(vertices.len() > before);
    }

    // Skin weights: each vertex belongs to its part's bone, blending toward
    // the parent bone inside the collar zone at the part's start.
    let n_joints = parts.len();
    let mut skin_weights = Vec::with_capacity(vertices.len());
    for (v, _) in vertices.iter().enumerate() {
        let part = &parts[part_of[v]];
        let mut row = vec![0.0; n_joints];
        if part.parent >= 0 {
            let s = axial_s[v].max(0.0);
            if s < body.collar {
                let wp = 0.5 * (1.0 - s / body.collar);
                row[part.parent as usize] = wp;
                row[part.bone] = 1.0 - wp;
            } else {
                row[part.bone] = 1.0;
            }
        } else {
            row[part.bone] = 1.0;
        }
        skin_weights.push(row);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc0de_5eed_u64);
    let vertex_codes = (0..vertices.len())
        .map(|_| (0..code_dim).map(|_| rng.gen_range(-0.1..0.1)).collect())
        .collect();

    let mesh = SkinnedMesh {
        vertices,
        triangles,
        uvs,
        skin_weights,
        skeleton,
        vertex_codes,
    };
    mesh.validate()?;
    Ok(mesh)
}

/// Ground-truth albedo as a smooth function of UV: a per-part base color
/// modulated by low-frequency waves. Values stay inside (0, 1).
pub fn albedo_texture(u: f64, v: f64) -> [f64; 3] {
    let part = ((u * N_PARTS as f64).floor() as usize).min(N_PARTS - 1);
    const PALETTE: [[f64; 3]; N_PARTS] = [
        [0.70, 0.35, 0.30],
        [0.65, 0.45, 0.25],
        [0.80, 0.65, 0.50],
        [0.30, 0.55, 0.70],
        [0.35, 0.60, 0.45],
        [0.55, 0.35, 0.65],
        [0.60, 0.60, 0.30],
        [0.35, 0.40, 0.70],
        [0.65, 0.30, 0.45],
        [0.30, 0.65, 0.60],
        [0.55, 0.50, 0.40],
    ];
    let base = PALETTE[part];
    let wave = 0.15 * (std::f64::consts::TAU * 2.0 * v).sin()
        + 0.10 * (std::f64::consts::TAU * 3.0 * (u * N_PARTS as f64)).cos();
    [
        (base[0] + wave).clamp(0.05, 0.95),
        (base[1] + wave * 0.6).clamp(0.05, 0.95),
        (base[2] - wave * 0.4).clamp(0.05, 0.95),
    ]
}

/// A second texture used as a retexture source in edit tests.
pub fn albedo_texture_alt(u: f64, v: f64) -> [f64; 3] {
    let a = albedo_texture(v.clamp(0.0, 1.0), u.clamp(0.0, 1.0));
    [a[2], a[0], a[1]]
}
