//! Point clouds, nearest-neighbour search and normal estimation.

use std::collections::BTreeMap;
use std::num::NonZeroUsize;

use kiddo::immutable::float::kdtree::ImmutableKdTree;
use kiddo::SquaredEuclidean;
use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use super::Pose;

pub type Point = Vector3<f64>;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point>,
    pub timestamps: Option<Vec<f64>>,
    /// `None` entries mark points whose neighbourhood was degenerate.
    pub normals: Option<Vec<Option<Point>>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Self {
        Self {
            points,
            timestamps: None,
            normals: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn transformed(&self, pose: &Pose) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| pose.apply(p)).collect(),
            timestamps: self.timestamps.clone(),
            normals: self
                .normals
                .as_ref()
                .map(|ns| ns.iter().map(|n| n.map(|n| pose.rotate(&n))).collect()),
        }
    }

    pub fn valid_normal_count(&self) -> usize {
        self.normals
            .as_ref()
            .map_or(0, |ns| ns.iter().filter(|n| n.is_some()).count())
    }

    /// Replaces every occupied voxel by the centroid of its points.
    /// Output is ordered by voxel index so the result is deterministic.
    pub fn voxel_downsample(&self, voxel: f64) -> PointCloud {
        assert!(voxel > 0.0);
        let mut cells: BTreeMap<(i64, i64, i64), (Point, usize)> = BTreeMap::new();
        for p in &self.points {
            let key = (
                (p.x / voxel).floor() as i64,
                (p.y / voxel).floor() as i64,
                (p.z / voxel).floor() as i64,
            );
            let e = cells.entry(key).or_insert((Point::zeros(), 0));
            e.0 += p;
            e.1 += 1;
        }
        PointCloud::new(cells.into_values().map(|(s, n)| s / n as f64).collect())
    }
}

/// Static 3-d tree over a point set; item ids are indices into the input.
pub struct KdIndex {
    tree: ImmutableKdTree<f64, u64, 3, 32>,
    len: usize,
}

impl KdIndex {
    pub fn build(points: &[Point]) -> Self {
        let raw: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
        Self {
            tree: ImmutableKdTree::new_from_slice(&raw),
            len: points.len(),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Nearest point: `(index, euclidean distance)`.
    pub fn nearest(&self, q: &Point) -> Option<(usize, f64)> {
        if self.len == 0 {
            return None;
        }
        let nn = self.tree.nearest_one::<SquaredEuclidean>(&[q.x, q.y, q.z]);
        Some((nn.item as usize, nn.distance.sqrt()))
    }

    /// Up to `k` nearest points sorted by distance.
    pub fn nearest_k(&self, q: &Point, k: usize) -> Vec<(usize, f64)> {
        let Some(k) = NonZeroUsize::new(k.min(self.len)) else {
            return Vec::new();
        };
        self.tree
            .nearest_n::<SquaredEuclidean>(&[q.x, q.y, q.z], k)
            .into_iter()
            .map(|nn| (nn.item as usize, nn.distance.sqrt()))
            .collect()
    }
}

/// Unit normal from the covariance of `pts`, or `None` when the
/// neighbourhood spans fewer than two dimensions.
pub fn plane_normal(pts: &[Point]) -> Option<Point> {
    plane_fit(pts).map(|f| f.normal)
}

/// Least-squares plane through a neighbourhood, with covariance
/// eigenvalues `λ0 ≤ λ1 ≤ λ2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlaneFit {
    pub normal: Point,
    /// `λ0 / (λ0 + λ1 + λ2)`: 0 on a plane, 1/3 for isotropic scatter.
    pub variation: f64,
    /// `sqrt(λ0)`: RMS distance of the points from the plane.
    pub rms: f64,
    /// `λ1 / λ2`: near 0 when the points line up along a single direction,
    /// which leaves the normal free to spin about that line.
    pub spread: f64,
}

/// Neighbourhoods with `spread` below this are treated as lines by
/// [`estimate_planar_normals`].
pub const MIN_PLANE_SPREAD: f64 = 0.02;

pub fn plane_fit(pts: &[Point]) -> Option<PlaneFit> {
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let mean = pts.iter().sum::<Point>() / n;
    let mut cov = Matrix3::zeros();
    for p in pts {
        let d = p - mean;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (l0, l1, l2) = (
        eig.eigenvalues[order[0]].max(0.0),
        eig.eigenvalues[order[1]],
        eig.eigenvalues[order[2]],
    );
    if l2 <= 1e-18 || l1 <= 1e-10 * l2 {
        return None;
    }
    let v: Point = eig.eigenvectors.column(order[0]).into_owned();
    Some(PlaneFit {
        normal: v.normalize(),
        variation: l0 / (l0 + l1 + l2),
        rms: l0.sqrt(),
        spread: l1 / l2,
    })
}

/// Per-point normals from the `k` nearest neighbours (the point itself
/// included as an extra neighbour), oriented toward `viewpoint`.
pub fn estimate_normals(cloud: &PointCloud, k: usize, viewpoint: &Point) -> PointCloud {
    estimate_planar_normals(cloud, k, viewpoint, f64::INFINITY)
}

/// As [`estimate_normals`], but neighbourhoods whose points sit further
/// than `max_rms` (RMS, meters) from their plane, or which are nearly
/// collinear, get no normal.
pub fn estimate_planar_normals(cloud: &PointCloud, k: usize, viewpoint: &Point, max_rms: f64) -> PointCloud {
    let index = KdIndex::build(&cloud.points);
    let mut nbrs = Vec::with_capacity(k + 1);
    let normals = cloud
        .points
        .iter()
        .map(|p| {
            nbrs.clear();
            nbrs.extend(index.nearest_k(p, k + 1).into_iter().map(|(i, _)| cloud.points[i]));
            plane_fit(&nbrs)
                .filter(|f| max_rms.is_infinite() || (f.rms <= max_rms && f.spread >= MIN_PLANE_SPREAD))
                .map(|f| if f.normal.dot(&(viewpoint - p)) < 0.0 { -f.normal } else { f.normal })
        })
        .collect();
    PointCloud {
        points: cloud.points.clone(),
        timestamps: cloud.timestamps.clone(),
        normals: Some(normals),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn plane_normals_face_origin() {
        let mut pts = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                pts.push(Point::new(i as f64 * 0.3 - 1.5, j as f64 * 0.3 - 1.5, -2.0));
            }
        }
        let cloud = estimate_normals(&PointCloud::new(pts), 10, &Point::zeros());
        for n in cloud.normals.unwrap() {
            let n = n.expect("planar neighbourhood is rank 2");
            assert!((n - Point::z()).norm() < 1e-9);
        }
    }

    #[test]
    fn sphere_normals_are_radial() {
        // Fibonacci lattice: near-uniform density on the unit sphere.
        let n = 4000;
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        let pts: Vec<Point> = (0..n)
            .map(|i| {
                let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                let r = (1.0 - z * z).sqrt();
                let phi = golden * i as f64;
                Point::new(r * phi.cos(), r * phi.sin(), z)
            })
            .collect();
        let cloud = estimate_normals(&PointCloud::new(pts.clone()), 10, &Point::zeros());
        let max_deg = cloud
            .normals
            .unwrap()
            .iter()
            .zip(&pts)
            .map(|(n, p)| n.unwrap().dot(p).abs().min(1.0).acos().to_degrees())
            .fold(0.0, f64::max);
        assert!(max_deg < 5.0, "worst normal {max_deg}°");
    }

    #[test]
    fn corner_neighbourhoods_are_not_planar() {
        let mut pts = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                pts.push(Point::new(i as f64 * 0.1, j as f64 * 0.1, 0.0));
                pts.push(Point::new(0.0, j as f64 * 0.1, 0.1 + i as f64 * 0.1));
            }
        }
        let flat = plane_fit(&pts.iter().filter(|p| p.z == 0.0).copied().collect::<Vec<_>>()).unwrap();
        assert!(flat.variation < 1e-12 && flat.spread > 0.5);
        let cloud = estimate_planar_normals(&PointCloud::new(pts.clone()), 10, &Point::new(1.0, 1.0, 1.0), 0.005);
        let normals = cloud.normals.unwrap();
        // the point at the fold has neighbours on both planes
        let fold = pts.iter().position(|p| (p - Point::new(0.0, 0.5, 0.0)).norm() < 1e-12).unwrap();
        assert!(normals[fold].is_none());
        let interior = pts.iter().position(|p| (p - Point::new(0.6, 0.5, 0.0)).norm() < 1e-12).unwrap();
        assert!(normals[interior].is_some());
    }

    #[test]
    fn near_collinear_neighbourhood_is_rejected() {
        let pts: Vec<Point> = (0..11).map(|i| Point::new(i as f64 * 0.1, 1e-4 * (i % 2) as f64, 0.0)).collect();
        let f = plane_fit(&pts).unwrap();
        assert!(f.spread < MIN_PLANE_SPREAD);
        let cloud = estimate_planar_normals(&PointCloud::new(pts), 10, &Point::z(), 0.5);
        assert!(cloud.normals.unwrap().iter().all(|n| n.is_none()));
    }

    #[test]
    fn collinear_points_have_no_normal() {
        let pts = vec![Point::zeros(), Point::x(), Point::x() * 2.0];
        let cloud = estimate_normals(&PointCloud::new(pts), 2, &Point::new(0.0, 5.0, 0.0));
        assert!(cloud.normals.unwrap().iter().all(|n| n.is_none()));
    }

    #[test]
    fn voxel_downsample_merges_cells() {
        let c = PointCloud::new(vec![
            Point::new(0.01, 0.01, 0.01),
            Point::new(0.03, 0.03, 0.03),
            Point::new(0.5, 0.0, 0.0),
        ]);
        let d = c.voxel_downsample(0.1);
        assert_eq!(d.len(), 2);
        assert!((d.points[0] - Point::new(0.02, 0.02, 0.02)).norm() < 1e-12);
    }

    #[test]
    fn kd_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<Point> = (0..500)
            .map(|_| Point::new(rng.gen(), rng.gen(), rng.gen()))
            .collect();
        let idx = KdIndex::build(&pts);
        for _ in 0..50 {
            let q = Point::new(rng.gen(), rng.gen(), rng.gen());
            let brute = pts
                .iter()
                .map(|p| (p - q).norm())
                .fold(f64::INFINITY, f64::min);
            let (_, d) = idx.nearest(&q).unwrap();
            assert!((d - brute).abs() < 1e-12);
        }
    }
}
