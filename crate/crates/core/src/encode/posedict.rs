use nalgebra::Point3;

use super::triplane::FactorizedTriPlane;
use crate::rig::Pose;
use crate::{Error, Result};

/// How many nearest training poses are blended at an unseen query pose.
pub const TOP_K: usize = 5;

/// Map from training pose to its factorized tri-plane, blended at unseen
/// poses with a Gaussian kernel on flattened joint rotations.
#[derive(Debug, Clone)]
pub struct PoseDictionary {
    pub poses: Vec<Pose>,
    pub planes: Vec<FactorizedTriPlane>,
    pub tau: f64,
}

impl PoseDictionary {
    /// `tau` defaults to the mean pairwise squared rotation distance of the
    /// dictionary (1.0 for degenerate dictionaries).
    pub fn new(entries: Vec<(Pose, FactorizedTriPlane)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyPoseDictionary);
        }
        let (poses, planes): (Vec<_>, Vec<_>) = entries.into_iter().unzip();
        let tau = default_tau(&poses);
        Ok(PoseDictionary { poses, planes, tau })
    }

    /// Blend weights over dictionary entries: an exact rotation match uses
    /// that entry alone; otherwise the top-5 kernel similarities normalized
    /// to sum 1. Weights are a convex combination.
    pub fn blend_weights(&self, query: &Pose) -> Vec<(usize, f64)> {
        let q = query.flat_rotations();
        for (i, pose) in self.poses.iter().enumerate() {
            if pose.joint_rotations == query.joint_rotations {
                return vec![(i, 1.0)];
            }
        }
        let mut sims: Vec<(usize, f64)> = self
            .poses
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let d2: f64 = p
                    .flat_rotations()
                    .iter()
                    .zip(&q)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                (i, (-d2 / self.tau).exp())
            })
            .collect();
        sims.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        sims.truncate(TOP_K);
        let total: f64 = sims.iter().map(|(_, s)| s).sum();
        if total > 0.0 {
            for (_, s) in &mut sims {
                *s /= total;
            }
        } else {
            // All similarities underflowed: fall back to uniform weights.
            let w = 1.0 / sims.len() as f64;
            for (_, s) in &mut sims {
                *s = w;
            }
        }
        sims
    }

    /// Pose-aware feature: similarity-weighted average of the per-entry
    /// tri-plane samples, with the QUERY pose's flattened rotations appended.
    pub fn pose_feature(&self, query: &Pose, x_c: &Point3<f64>) -> Vec<f64> {
        let weights = self.blend_weights(query);
        let d3 = self.planes[weights[0].0].dims.d * 3;
        let mut out = vec![0.0; d3];
        for (i, w) in &weights {
            let (f, _) = self.planes[*i].sample(x_c);
            for k in 0..d3 {
                out[k] += w * f[k];
            }
        }
        out.extend(query.flat_rotations());
        out
    }
}

fn default_tau(poses: &[Pose]) -> f64 {
    let flats: Vec<Vec<f64>> = poses.iter().map(|p| p.flat_rotations()).collect();
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..flats.len() {
        for j in (i + 1)..flats.len() {
            total += flats[i]
                .iter()
                .zip(&flats[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
            count += 1;
        }
    }
    if count == 0 || total <= 0.0 {
        1.0
    } else {
        total / count as f64
    }
}
