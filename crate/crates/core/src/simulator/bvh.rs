//! Bounding-volume hierarchy over scene triangles.

use super::scene::{Triangle, Vec3};

const LEAF_SIZE: usize = 4;

#[derive(Clone, Copy, Debug)]
struct Bounds {
    min: Vec3,
    max: Vec3,
}

impl Bounds {
    fn empty() -> Self {
        Self {
            min: Vec3::repeat(f64::INFINITY),
            max: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Vec3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    /// Slab test; true if the ray overlaps the box within `[t0, t1]`.
    #[inline]
    fn hit(&self, origin: &Vec3, inv_dir: &Vec3, mut t0: f64, mut t1: f64) -> bool {
        for k in 0..3 {
            let a = (self.min[k] - origin[k]) * inv_dir[k];
            let b = (self.max[k] - origin[k]) * inv_dir[k];
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            // NaN (0 * inf) leaves the interval untouched
            if lo > t0 {
                t0 = lo;
            }
            if hi < t1 {
                t1 = hi;
            }
            if t0 > t1 {
                return false;
            }
        }
        true
    }
}

#[derive(Clone, Debug)]
enum Node {
    Inner {
        bounds: Bounds,
        left: usize,
        right: usize,
    },
    Leaf {
        bounds: Bounds,
        start: usize,
        count: usize,
    },
}

/// Closest-hit query structure.
#[derive(Clone, Debug)]
pub struct Bvh {
    nodes: Vec<Node>,
    /// Triangle indices in leaf order.
    order: Vec<usize>,
}

/// Ray hit: scene triangle index and ray parameter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub triangle: usize,
    pub t: f64,
}

#[inline]
fn better(t: f64, idx: usize, best: &Option<Hit>) -> bool {
    match best {
        None => true,
        Some(b) => t < b.t || (t == b.t && idx < b.triangle),
    }
}

/// Exhaustive closest hit within `[t_min, t_max]`, ties broken by index.
pub fn brute_force_hit(
    tris: &[Triangle],
    origin: &Vec3,
    dir: &Vec3,
    t_min: f64,
    t_max: f64,
) -> Option<Hit> {
    let mut best = None;
    for (i, tri) in tris.iter().enumerate() {
        if let Some(t) = tri.intersect(origin, dir) {
            if t >= t_min && t <= t_max && better(t, i, &best) {
                best = Some(Hit { triangle: i, t });
            }
        }
    }
    best
}

impl Bvh {
    pub fn build(tris: &[Triangle]) -> Self {
        let mut bvh = Bvh {
            nodes: Vec::new(),
            order: (0..tris.len()).collect(),
        };
        let centroids: Vec<Vec3> = tris.iter().map(Triangle::centroid).collect();
        if !tris.is_empty() {
            bvh.build_node(tris, &centroids, 0, tris.len());
        }
        bvh
    }

    fn build_node(&mut self, tris: &[Triangle], centroids: &[Vec3], start: usize, end: usize) -> usize {
        let mut bounds = Bounds::empty();
        let mut cbounds = Bounds::empty();
        for &i in &self.order[start..end] {
            for v in &tris[i].v {
                bounds.grow(v);
            }
            cbounds.grow(&centroids[i]);
        }
        let id = self.nodes.len();
        let count = end - start;
        let spread = cbounds.max - cbounds.min;
        if count <= LEAF_SIZE || spread.amax() <= 0.0 {
            self.nodes.push(Node::Leaf { bounds, start, count });
            return id;
        }
        let axis = spread.imax();
        self.order[start..end].sort_by(|&a, &b| {
            centroids[a][axis]
                .total_cmp(&centroids[b][axis])
                .then(a.cmp(&b))
        });
        let mid = start + count / 2;
        self.nodes.push(Node::Leaf { bounds, start, count });
        let left = self.build_node(tris, centroids, start, mid);
        let right = self.build_node(tris, centroids, mid, end);
        self.nodes[id] = Node::Inner { bounds, left, right };
        id
    }

    pub fn closest_hit(
        &self,
        tris: &[Triangle],
        origin: &Vec3,
        dir: &Vec3,
        t_min: f64,
        t_max: f64,
    ) -> Option<Hit> {
        if self.nodes.is_empty() {
            return None;
        }
        let inv = Vec3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut best: Option<Hit> = None;
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let limit = best.map_or(t_max, |b| b.t);
            match &self.nodes[n] {
                Node::Inner { bounds, left, right } => {
                    if bounds.hit(origin, &inv, t_min, limit) {
                        stack.push(*right);
                        stack.push(*left);
                    }
                }
                Node::Leaf { bounds, start, count } => {
                    if !bounds.hit(origin, &inv, t_min, limit) {
                        continue;
                    }
                    for &i in &self.order[*start..start + count] {
                        if let Some(t) = tris[i].intersect(origin, dir) {
                            if t >= t_min && t <= t_max && better(t, i, &best) {
                                best = Some(Hit { triangle: i, t });
                            }
                        }
                    }
                }
            }
        }
        best
    }
}
