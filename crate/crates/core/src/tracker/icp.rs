//! Point-to-plane ICP between two scans.

use nalgebra::{Matrix6, Vector3, Vector6};

use crate::geometry::{so3_exp, KdIndex, Point, PointCloud, Pose};

/// Fewest correspondences for a well-posed 6-dof solve.
pub const MIN_CORRESPONDENCES: usize = 6;

/// When the source carries normals, pairs whose normals differ by more than
/// this angle (in degrees, after transforming the source) are rejected. The
/// comparison is signed, so opposite faces of a thin object never pair up;
/// both clouds must orient normals toward their own sensor.
pub const NORMAL_COMPAT_DEG: f64 = 30.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IcpParams {
    pub max_iters: usize,
    pub corr_dist: f64,
    pub convergence_eps: f64,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self {
            max_iters: 30,
            corr_dist: 1.0,
            convergence_eps: 1e-6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IcpResult {
    /// Transform taking source points into the target frame.
    pub pose: Pose,
    pub converged: bool,
    pub rms_residual: f64,
    pub iterations: usize,
    pub correspondences: usize,
}

/// Target points with normals, indexed for nearest-neighbour lookups.
pub struct IcpTarget {
    points: Vec<Point>,
    normals: Vec<Point>,
    index: KdIndex,
}

impl IcpTarget {
    /// Keeps only points with a valid normal. `None` if `cloud` has no normals.
    pub fn new(cloud: &PointCloud) -> Option<Self> {
        let normals = cloud.normals.as_ref()?;
        let (points, normals): (Vec<Point>, Vec<Point>) = cloud
            .points
            .iter()
            .zip(normals)
            .filter_map(|(p, n)| n.map(|n| (*p, n)))
            .unzip();
        let index = KdIndex::build(&points);
        Some(Self { points, normals, index })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Aligns `source` to `target` starting from `init`.
///
/// Source normals are optional; when present they veto correspondences
/// across differently oriented surfaces.
///
/// Each iteration linearizes the rotation of the already-transformed source
/// points, `R p' ≈ p' + ω × p'`, and solves the 6x6 normal equations of
/// `Σ (nᵀ(p' + ω × p' + τ − q))²`. The update is applied on the left.
pub fn icp_point_to_plane(source: &PointCloud, target: &IcpTarget, init: &Pose, params: &IcpParams) -> IcpResult {
    let mut pose = *init;
    let cos_min = NORMAL_COMPAT_DEG.to_radians().cos();
    let src_normals = source.normals.as_deref();
    let fail = |iterations, correspondences| IcpResult {
        pose: *init,
        converged: false,
        rms_residual: f64::INFINITY,
        iterations,
        correspondences,
    };
    let mut last = (f64::INFINITY, 0);
    for iter in 0..params.max_iters {
        let mut h = Matrix6::<f64>::zeros();
        let mut b = Vector6::<f64>::zeros();
        let mut sq = 0.0;
        let mut count = 0usize;
        for (i, p) in source.points.iter().enumerate() {
            let pw = pose.apply(p);
            let Some((j, d)) = target.index.nearest(&pw) else { continue };
            if d > params.corr_dist {
                continue;
            }
            let n = target.normals[j];
            if let Some(ns) = src_normals {
                match ns[i] {
                    Some(m) if pose.rotate(&m).dot(&n) >= cos_min => {}
                    _ => continue,
                }
            }
            let r = n.dot(&(pw - target.points[j]));
            let c = pw.cross(&n);
            let jrow = Vector6::new(c.x, c.y, c.z, n.x, n.y, n.z);
            h += jrow * jrow.transpose();
            b += jrow * r;
            sq += r * r;
            count += 1;
        }
        if count < MIN_CORRESPONDENCES {
            return fail(iter, count);
        }
        last = ((sq / count as f64).sqrt(), count);
        let Some(delta) = h.cholesky().map(|c| c.solve(&(-b))) else {
            return IcpResult {
                pose,
                converged: false,
                rms_residual: last.0,
                iterations: iter,
                correspondences: count,
            };
        };
        let step = Pose::new(
            so3_exp(&Vector3::new(delta[0], delta[1], delta[2])),
            Vector3::new(delta[3], delta[4], delta[5]),
        );
        pose = step.compose(&pose).renormalized();
        if delta.norm() < params.convergence_eps {
            let rms = rms_at(&source.points, target, &pose, params.corr_dist).unwrap_or(last.0);
            return IcpResult {
                pose,
                converged: true,
                rms_residual: rms,
                iterations: iter + 1,
                correspondences: count,
            };
        }
    }
    IcpResult {
        pose,
        converged: false,
        rms_residual: last.0,
        iterations: params.max_iters,
        correspondences: last.1,
    }
}

fn rms_at(source: &[Point], target: &IcpTarget, pose: &Pose, gate: f64) -> Option<f64> {
    let (mut sq, mut n) = (0.0, 0usize);
    for p in source {
        let pw = pose.apply(p);
        if let Some((j, d)) = target.index.nearest(&pw) {
            if d <= gate {
                let r = target.normals[j].dot(&(pw - target.points[j]));
                sq += r * r;
                n += 1;
            }
        }
    }
    (n > 0).then(|| (sq / n as f64).sqrt())
}
