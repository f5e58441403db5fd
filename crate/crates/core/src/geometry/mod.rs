//! Rigid-body math, point clouds and trajectory files.

mod cloud;
mod pose;
pub mod tum;

pub use cloud::{estimate_normals, estimate_planar_normals, plane_fit, plane_normal, PlaneFit, MIN_PLANE_SPREAD, KdIndex, Point, PointCloud};
pub use pose::{se3_exp, se3_log, skew, so3_exp, so3_exp_jacobians, so3_log, Pose, Twist};
pub use tum::Trajectory;

/// Axis-aligned box.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        Self { min, max }
    }

    pub fn extent(&self) -> Point {
        Point::new(
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        )
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }

    pub fn contains(&self, p: &Point) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}
