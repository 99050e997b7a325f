use nalgebra::Point3;

/// Result of a nearest-surface query. `bary` holds the weights of the
/// triangle's first two vertices; the third is implied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceSample {
    pub point: Point3<f64>,
    pub tri_id: usize,
    pub bary: [f64; 2],
    pub distance: f64,
}

/// Closest point on triangle `abc` to `p` (Ericson's region partition,
/// including edge/vertex cases). Returns the point and the barycentric
/// weights `(u, v)` of `a` and `b`.
pub fn closest_point_on_triangle(
    p: &Point3<f64>,
    a: &Point3<f64>,
    b: &Point3<f64>,
    c: &Point3<f64>,
) -> (Point3<f64>, f64, f64) {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (*a, 1.0, 0.0);
    }

    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (*b, 0.0, 1.0);
    }

    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (a + ab * v, 1.0 - v, v);
    }

    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (*c, 0.0, 0.0);
    }

    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (a + ac * w, 1.0 - w, 0.0);
    }

    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + (c - b) * w, 0.0, 1.0 - w);
    }

    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (a + ab * v + ac * w, 1.0 - v - w, v)
}

/// Nearest surface point over all triangles. Ties in distance are broken by
/// the lowest triangle id; the BVH path returns bit-identical results to the
/// exhaustive scan.
pub fn nearest_surface(
    x: &Point3<f64>,
    vertices: &[Point3<f64>],
    triangles: &[[usize; 3]],
    bvh: Option<&MeshBvh>,
) -> SurfaceSample {
    match bvh {
        Some(tree) => tree.nearest(x, vertices, triangles),
        None => nearest_surface_brute(x, vertices, triangles),
    }
}

pub fn nearest_surface_brute(
    x: &Point3<f64>,
    vertices: &[Point3<f64>],
    triangles: &[[usize; 3]],
) -> SurfaceSample {
    assert!(!triangles.is_empty(), "nearest_surface on empty mesh");
    let mut best = SurfaceSample {
        point: Point3::origin(),
        tri_id: usize::MAX,
        bary: [0.0; 2],
        distance: f64::INFINITY,
    };
    let mut best_sq = f64::INFINITY;
    for (t, tri) in triangles.iter().enumerate() {
        let (q, u, v) = closest_point_on_triangle(
            x,
            &vertices[tri[0]],
            &vertices[tri[1]],
            &vertices[tri[2]],
        );
        let d2 = (q - x).norm_squared();
        if d2 < best_sq || (d2 == best_sq && t < best.tri_id) {
            best_sq = d2;
            best = SurfaceSample {
                point: q,
                tri_id: t,
                bary: [u, v],
                distance: 0.0,
            };
        }
    }
    best.distance = best_sq.sqrt();
    best
}

// ---- BVH over triangles for nearest-point queries ----

#[derive(Debug, Clone, Copy)]
struct Aabb {
    lo: Point3<f64>,
    hi: Point3<f64>,
}

impl Aabb {
    fn empty() -> Self {
        Aabb {
            lo: Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY),
            hi: Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Point3<f64>) {
        for k in 0..3 {
            self.lo[k] = self.lo[k].min(p[k]);
            self.hi[k] = self.hi[k].max(p[k]);
        }
    }

    fn dist_sq(&self, p: &Point3<f64>) -> f64 {
        let mut d2 = 0.0;
        for k in 0..3 {
            let d = (self.lo[k] - p[k]).max(0.0).max(p[k] - self.hi[k]);
            d2 += d * d;
        }
        d2
    }
}

#[derive(Debug)]
enum BvhNode {
    Leaf {
        aabb: Aabb,
        /// Triangle ids in ascending order (preserves lowest-id tie breaks).
        tris: Vec<usize>,
    },
    Inner {
        aabb: Aabb,
        left: usize,
        right: usize,
    },
}

/// Axis-aligned BVH accelerating nearest-surface and ray queries.
#[derive(Debug)]
pub struct MeshBvh {
    nodes: Vec<BvhNode>,
    root: usize,
}

const LEAF_SIZE: usize = 4;

impl MeshBvh {
    pub fn build(vertices: &[Point3<f64>], triangles: &[[usize; 3]]) -> Self {
        assert!(!triangles.is_empty());
        let centroids: Vec<Point3<f64>> = triangles
            .iter()
            .map(|t| {
                Point3::from(
                    (vertices[t[0]].coords + vertices[t[1]].coords + vertices[t[2]].coords) / 3.0,
                )
            })
            .collect();
        let mut nodes = Vec::new();
        let mut ids: Vec<usize> = (0..triangles.len()).collect();
        let root = build_node(vertices, triangles, &centroids, &mut ids, &mut nodes);
        MeshBvh { nodes, root }
    }

    fn nearest(
        &self,
        x: &Point3<f64>,
        vertices: &[Point3<f64>],
        triangles: &[[usize; 3]],
    ) -> SurfaceSample {
        let mut best = SurfaceSample {
            point: Point3::origin(),
            tri_id: usize::MAX,
            bary: [0.0; 2],
            distance: f64::INFINITY,
        };
        let mut best_sq = f64::INFINITY;
        self.nearest_rec(self.root, x, vertices, triangles, &mut best, &mut best_sq);
        best.distance = best_sq.sqrt();
        best
    }

    fn nearest_rec(
        &self,
        node: usize,
        x: &Point3<f64>,
        vertices: &[Point3<f64>],
        triangles: &[[usize; 3]],
        best: &mut SurfaceSample,
        best_sq: &mut f64,
    ) {
        match &self.nodes[node] {
            BvhNode::Leaf { tris, .. } => {
                for &t in tris {
                    let tri = &triangles[t];
                    let (q, u, v) = closest_point_on_triangle(
                        x,
                        &vertices[tri[0]],
                        &vertices[tri[1]],
                        &vertices[tri[2]],
                    );
                    let d2 = (q - x).norm_squared();
                    if d2 < *best_sq || (d2 == *best_sq && t < best.tri_id) {
                        *best_sq = d2;
                        best.point = q;
                        best.tri_id = t;
                        best.bary = [u, v];
                    }
                }
            }
            BvhNode::Inner { left, right, .. } => {
                let (l, r) = (*left, *right);
                let dl = self.node_aabb(l).dist_sq(x);
                let dr = self.node_aabb(r).dist_sq(x);
                // Visit the closer child first; <= keeps descents ordered so
                // equal-distance candidates are still resolved by triangle id.
                let order = if dl <= dr { [(dl, l), (dr, r)] } else { [(dr, r), (dl, l)] };
                for (d, child) in order {
                    if d <= *best_sq {
                        self.nearest_rec(child, x, vertices, triangles, best, best_sq);
                    }
                }
            }
        }
    }

    fn node_aabb(&self, node: usize) -> &Aabb {
        match &self.nodes[node] {
            BvhNode::Leaf { aabb, .. } => aabb,
            BvhNode::Inner { aabb, .. } => aabb,
        }
    }

    pub(crate) fn for_each_candidate_ray<F: FnMut(usize)>(
        &self,
        origin: &Point3<f64>,
        inv_dir: &[f64; 3],
        t_max: f64,
        f: &mut F,
    ) {
        self.ray_rec(self.root, origin, inv_dir, t_max, f);
    }

    fn ray_rec<F: FnMut(usize)>(
        &self,
        node: usize,
        origin: &Point3<f64>,
        inv_dir: &[f64; 3],
        t_max: f64,
        f: &mut F,
    ) {
        let aabb = self.node_aabb(node);
        if !slab_hit(aabb, origin, inv_dir, t_max) {
            return;
        }
        match &self.nodes[node] {
            BvhNode::Leaf { tris, .. } => {
                for &t in tris {
                    f(t);
                }
            }
            BvhNode::Inner { left, right, .. } => {
                self.ray_rec(*left, origin, inv_dir, t_max, f);
                self.ray_rec(*right, origin, inv_dir, t_max, f);
            }
        }
    }
}

fn slab_hit(aabb: &Aabb, origin: &Point3<f64>, inv_dir: &[f64; 3], t_max: f64) -> bool {
    let mut t0 = 0.0f64;
    let mut t1 = t_max;
    for k in 0..3 {
        let a = (aabb.lo[k] - origin[k]) * inv_dir[k];
        let b = (aabb.hi[k] - origin[k]) * inv_dir[k];
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        t0 = t0.max(lo);
        t1 = t1.min(hi);
        if t0 > t1 {
            return false;
        }
    }
    true
}

fn build_node(
    vertices: &[Point3<f64>],
    triangles: &[[usize; 3]],
    centroids: &[Point3<f64>],
    ids: &mut [usize],
    nodes: &mut Vec<BvhNode>,
) -> usize {
    let mut aabb = Aabb::empty();
    for &t in ids.iter() {
        for &v in &triangles[t] {
            aabb.grow(&vertices[v]);
        }
    }
    if ids.len() <= LEAF_SIZE {
        let mut tris = ids.to_vec();
        tris.sort_unstable();
        nodes.push(BvhNode::Leaf { aabb, tris });
        return nodes.len() - 1;
    }

    let mut cbox = Aabb::empty();
    for &t in ids.iter() {
        cbox.grow(&centroids[t]);
    }
    let mut axis = 0;
    let mut extent = cbox.hi[0] - cbox.lo[0];
    for k in 1..3 {
        let e = cbox.hi[k] - cbox.lo[k];
        if e > extent {
            extent = e;
            axis = k;
        }
    }
    let mid = ids.len() / 2;
    ids.select_nth_unstable_by(mid, |&a, &b| {
        centroids[a][axis]
            .partial_cmp(&centroids[b][axis])
            .unwrap()
            .then(a.cmp(&b))
    });
    let (lo, hi) = ids.split_at_mut(mid);
    let left = build_node(vertices, triangles, centroids, lo, nodes);
    let right = build_node(vertices, triangles, centroids, hi, nodes);
    nodes.push(BvhNode::Inner { aabb, left, right });
    nodes.len() - 1
}
