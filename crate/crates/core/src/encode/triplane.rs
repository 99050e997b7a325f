use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

/// Grid/rank configuration plus the canonical-space domain box of a
/// factorized tri-plane. XY planes are square (`l_xy`); the Z axis may use a
/// lower resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriPlaneDims {
    pub l_xy: usize,
    pub l_z: usize,
    pub d: usize,
    pub r: usize,
    pub box_lo: [f64; 3],
    pub box_hi: [f64; 3],
}

/// Plane order and the world axes each plane interpolates over.
pub const PLANE_AXES: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];

impl TriPlaneDims {
    pub fn axis_len(&self, axis: usize) -> usize {
        if axis == 2 {
            self.l_z
        } else {
            self.l_xy
        }
    }

    /// (L_m, L_n) for plane `p`.
    pub fn plane_lens(&self, p: usize) -> (usize, usize) {
        let (m, n) = PLANE_AXES[p];
        (self.axis_len(m), self.axis_len(n))
    }

    /// Stored scalars across all three planes: `R * (L_m + L_n + D)` each.
    pub fn param_count(&self) -> usize {
        (0..3)
            .map(|p| {
                let (lm, ln) = self.plane_lens(p);
                self.r * (lm + ln + self.d)
            })
            .sum()
    }

    /// Scalars a dense (unfactorized) tri-plane would store.
    pub fn dense_param_count(&self) -> usize {
        (0..3)
            .map(|p| {
                let (lm, ln) = self.plane_lens(p);
                lm * ln * self.d
            })
            .sum()
    }

    /// Continuous grid coordinate along `axis`, clamped to the domain box.
    fn grid_coord(&self, axis: usize, x: f64) -> f64 {
        let lo = self.box_lo[axis];
        let hi = self.box_hi[axis];
        let l = self.axis_len(axis);
        let t = if hi > lo { (x - lo) / (hi - lo) } else { 0.0 };
        (t.clamp(0.0, 1.0)) * (l as f64 - 1.0)
    }
}

/// CP factors of one plane: `T[a,b,:] = sum_r m_r[a] * n_r[b] * f_r[:]`.
/// Arrays are packed `[R * len]` row-major per component.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneFactors {
    pub axis_m: Vec<f64>,
    pub axis_n: Vec<f64>,
    pub feat: Vec<f64>,
}

/// A tri-plane factorized as a sum of R outer products of 1-D vectors per
/// plane, sampled by bilinear interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorizedTriPlane {
    pub dims: TriPlaneDims,
    pub planes: [PlaneFactors; 3],
}

/// Interpolation state recorded during sampling, sufficient to route
/// gradients back to the factor entries.
#[derive(Debug, Clone)]
pub struct TriPlaneTrace {
    /// Per plane: (index, weight) of the m and n axis interpolations.
    pub coords: [(usize, f64, usize, f64); 3],
    /// Per plane: interpolated (m_r, n_r) values for each component.
    pub lerps: [Vec<(f64, f64)>; 3],
}

fn lerp_axis(values: &[f64], len: usize, r: usize, i: usize, w: f64) -> f64 {
    let base = r * len;
    let i1 = (i + 1).min(len - 1);
    values[base + i] * (1.0 - w) + values[base + i1] * w
}

impl FactorizedTriPlane {
    pub fn zeros(dims: TriPlaneDims) -> Self {
        let planes = std::array::from_fn(|p| {
            let (lm, ln) = dims.plane_lens(p);
            PlaneFactors {
                axis_m: vec![0.0; dims.r * lm],
                axis_n: vec![0.0; dims.r * ln],
                feat: vec![0.0; dims.r * dims.d],
            }
        });
        FactorizedTriPlane { dims, planes }
    }

    /// Total scalar count, matching [`TriPlaneDims::param_count`].
    pub fn param_count(&self) -> usize {
        self.dims.param_count()
    }

    /// Concatenated per-plane features (3*D values) at `x_c`, with the trace
    /// needed for the backward pass.
    pub fn sample(&self, x_c: &Point3<f64>) -> (Vec<f64>, TriPlaneTrace) {
        let d = self.dims.d;
        let mut out = vec![0.0; 3 * d];
        let mut coords = [(0usize, 0.0f64, 0usize, 0.0f64); 3];
        let mut lerps: [Vec<(f64, f64)>; 3] = std::array::from_fn(|_| Vec::new());

        for p in 0..3 {
            let (am, an) = PLANE_AXES[p];
            let (lm, ln) = self.dims.plane_lens(p);
            let ga = self.dims.grid_coord(am, x_c[am]);
            let gb = self.dims.grid_coord(an, x_c[an]);
            let ia = (ga.floor() as usize).min(lm - 1);
            let ib = (gb.floor() as usize).min(ln - 1);
            let wa = ga - ia as f64;
            let wb = gb - ib as f64;
            coords[p] = (ia, wa, ib, wb);

            let factors = &self.planes[p];
            let mut plane_lerps = Vec::with_capacity(self.dims.r);
            for r in 0..self.dims.r {
                let vm = lerp_axis(&factors.axis_m, lm, r, ia, wa);
                let vn = lerp_axis(&factors.axis_n, ln, r, ib, wb);
                let s = vm * vn;
                for k in 0..d {
                    out[p * d + k] += s * factors.feat[r * d + k];
                }
                plane_lerps.push((vm, vn));
            }
            lerps[p] = plane_lerps;
        }

        (out, TriPlaneTrace { coords, lerps })
    }

    /// Scatter the upstream gradient on the 3*D sampled features into a
    /// gradient buffer with the same packed layout as [`Self::write_flat`].
    pub fn sample_backward(&self, trace: &TriPlaneTrace, upstream: &[f64], grad: &mut [f64]) {
        debug_assert_eq!(upstream.len(), 3 * self.dims.d);
        debug_assert_eq!(grad.len(), self.param_count());
        let d = self.dims.d;
        let mut offset = 0usize;
        for p in 0..3 {
            let (lm, ln) = self.dims.plane_lens(p);
            let (ia, wa, ib, wb) = trace.coords[p];
            let ia1 = (ia + 1).min(lm - 1);
            let ib1 = (ib + 1).min(ln - 1);
            let up = &upstream[p * d..(p + 1) * d];
            let factors = &self.planes[p];
            let (g_m, rest) = grad[offset..].split_at_mut(self.dims.r * lm);
            let (g_n, g_f) = rest.split_at_mut(self.dims.r * ln);
            for r in 0..self.dims.r {
                let (vm, vn) = trace.lerps[p][r];
                let mut dot_f = 0.0;
                for k in 0..d {
                    let f = factors.feat[r * d + k];
                    g_f[r * d + k] += vm * vn * up[k];
                    dot_f += f * up[k];
                }
                g_m[r * lm + ia] += (1.0 - wa) * vn * dot_f;
                g_m[r * lm + ia1] += wa * vn * dot_f;
                g_n[r * ln + ib] += (1.0 - wb) * vm * dot_f;
                g_n[r * ln + ib1] += wb * vm * dot_f;
            }
            offset += self.dims.r * (lm + ln + d);
        }
    }

    /// Dense reconstruction of one plane (test oracle): an
    /// `L_m x L_n x D` tensor with `T[a][b][k] = sum_r m_r[a] n_r[b] f_r[k]`.
    pub fn reconstruct_plane(&self, p: usize) -> Vec<Vec<Vec<f64>>> {
        let (lm, ln) = self.dims.plane_lens(p);
        let d = self.dims.d;
        let factors = &self.planes[p];
        let mut t = vec![vec![vec![0.0; d]; ln]; lm];
        for r in 0..self.dims.r {
            for a in 0..lm {
                for b in 0..ln {
                    for k in 0..d {
                        t[a][b][k] +=
                            factors.axis_m[r * lm + a] * factors.axis_n[r * ln + b] * factors.feat[r * d + k];
                    }
                }
            }
        }
        t
    }

    /// Bilinear sample of a densely reconstructed plane (test oracle).
    pub fn sample_dense_plane(&self, p: usize, dense: &[Vec<Vec<f64>>], x_c: &Point3<f64>) -> Vec<f64> {
        let (am, an) = PLANE_AXES[p];
        let (lm, ln) = self.dims.plane_lens(p);
        let ga = self.dims.grid_coord(am, x_c[am]);
        let gb = self.dims.grid_coord(an, x_c[an]);
        let ia = (ga.floor() as usize).min(lm - 1);
        let ib = (gb.floor() as usize).min(ln - 1);
        let wa = ga - ia as f64;
        let wb = gb - ib as f64;
        let ia1 = (ia + 1).min(lm - 1);
        let ib1 = (ib + 1).min(ln - 1);
        (0..self.dims.d)
            .map(|k| {
                dense[ia][ib][k] * (1.0 - wa) * (1.0 - wb)
                    + dense[ia1][ib][k] * wa * (1.0 - wb)
                    + dense[ia][ib1][k] * (1.0 - wa) * wb
                    + dense[ia1][ib1][k] * wa * wb
            })
            .collect()
    }

    /// Packed flat view: per plane, `axis_m ++ axis_n ++ feat`.
    pub fn write_flat(&self, out: &mut Vec<f64>) {
        for p in 0..3 {
            out.extend_from_slice(&self.planes[p].axis_m);
            out.extend_from_slice(&self.planes[p].axis_n);
            out.extend_from_slice(&self.planes[p].feat);
        }
    }

    /// Inverse of [`Self::write_flat`].
    pub fn from_flat(dims: TriPlaneDims, flat: &[f64]) -> Self {
        assert_eq!(flat.len(), dims.param_count());
        let mut offset = 0;
        let planes = std::array::from_fn(|p| {
            let (lm, ln) = dims.plane_lens(p);
            let r = dims.r;
            let axis_m = flat[offset..offset + r * lm].to_vec();
            offset += r * lm;
            let axis_n = flat[offset..offset + r * ln].to_vec();
            offset += r * ln;
            let feat = flat[offset..offset + r * dims.d].to_vec();
            offset += r * dims.d;
            PlaneFactors { axis_m, axis_n, feat }
        });
        FactorizedTriPlane { dims, planes }
    }
}

/// Domain box helper: the canonical-pose mesh bounding box dilated by the
/// given fraction per side.
pub fn dilated_box(lo: &Point3<f64>, hi: &Point3<f64>, dilate: f64) -> ([f64; 3], [f64; 3]) {
    let mut out_lo = [0.0; 3];
    let mut out_hi = [0.0; 3];
    for k in 0..3 {
        let pad = (hi[k] - lo[k]) * dilate;
        out_lo[k] = lo[k] - pad;
        out_hi[k] = hi[k] + pad;
    }
    (out_lo, out_hi)
}

#[allow(unused)]
fn _unused(_: Vector3<f64>) {}
