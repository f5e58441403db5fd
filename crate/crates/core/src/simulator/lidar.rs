use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::bvh::Bvh;
use super::scene::Scene;
use crate::error::{Error, Result};
use crate::geometry::{Point, PointCloud, Pose};

/// Spinning multi-beam sensor model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LidarModel {
    pub azimuth_count: usize,
    /// Beam elevations in radians, strictly increasing.
    pub elevation_angles: Vec<f64>,
    pub max_range: f64,
    pub min_range: f64,
    /// Duration of one sweep in seconds.
    pub scan_period: f64,
    /// Published scans per second.
    pub scan_rate: f64,
}

impl Default for LidarModel {
    /// 32 beams over ±25°, 1° azimuth steps, 5 Hz.
    fn default() -> Self {
        Self::uniform(360, 32, -25.0, 25.0, 0.3, 40.0, 0.1, 5.0)
    }
}

impl LidarModel {
    #[allow(clippy::too_many_arguments)]
    pub fn uniform(
        azimuth_count: usize,
        beams: usize,
        min_elev_deg: f64,
        max_elev_deg: f64,
        min_range: f64,
        max_range: f64,
        scan_period: f64,
        scan_rate: f64,
    ) -> Self {
        let elevation_angles = if beams == 1 {
            vec![min_elev_deg.to_radians()]
        } else {
            (0..beams)
                .map(|i| {
                    (min_elev_deg + (max_elev_deg - min_elev_deg) * i as f64 / (beams - 1) as f64)
                        .to_radians()
                })
                .collect()
        };
        Self {
            azimuth_count,
            elevation_angles,
            max_range,
            min_range,
            scan_period,
            scan_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.min_range > 0.0 && self.min_range < self.max_range) {
            return Err(Error::Config("lidar requires 0 < min_range < max_range".into()));
        }
        if self.elevation_angles.is_empty()
            || self.elevation_angles.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(Error::Config("elevation angles must be strictly increasing".into()));
        }
        if self.azimuth_count == 0 {
            return Err(Error::Config("azimuth_count must be positive".into()));
        }
        if self.scan_rate <= 0.0 {
            return Err(Error::Config("scan_rate must be positive".into()));
        }
        if self.scan_period < 0.0 {
            return Err(Error::Config("scan_period must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn elevation_count(&self) -> usize {
        self.elevation_angles.len()
    }

    pub fn ray_count(&self) -> usize {
        self.azimuth_count * self.elevation_count()
    }

    pub fn direction(&self, az: usize, el: usize) -> Vector3<f64> {
        let phi = 2.0 * std::f64::consts::PI * az as f64 / self.azimuth_count as f64;
        let e = self.elevation_angles[el];
        Vector3::new(e.cos() * phi.cos(), e.cos() * phi.sin(), e.sin())
    }

    /// Firing time of azimuth column `az` for a scan ending at `stamp`.
    pub fn ray_time(&self, az: usize, stamp: f64) -> f64 {
        if self.azimuth_count <= 1 {
            return stamp;
        }
        stamp - self.scan_period + self.scan_period * az as f64 / (self.azimuth_count - 1) as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LidarRay {
    /// Unit direction in the sensor frame at firing time.
    pub direction: Vector3<f64>,
    /// `None` means no return.
    pub range: Option<f64>,
    pub timestamp: f64,
    pub azimuth_index: u32,
    pub elevation_index: u32,
}

impl LidarRay {
    pub fn point(&self) -> Option<Point> {
        self.range.map(|r| self.direction * r)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LidarScan {
    pub rays: Vec<LidarRay>,
    /// Time of the last ray of the sweep.
    pub stamp: f64,
}

impl LidarScan {
    /// Returned points in the sensor frame, with per-point timestamps.
    pub fn points(&self) -> PointCloud {
        let (pts, ts): (Vec<_>, Vec<_>) = self
            .rays
            .iter()
            .filter_map(|r| r.point().map(|p| (p, r.timestamp)))
            .unzip();
        PointCloud {
            points: pts,
            timestamps: Some(ts),
            normals: None,
        }
    }

    pub fn valid_count(&self) -> usize {
        self.rays.iter().filter(|r| r.range.is_some()).count()
    }
}

/// Scene plus its acceleration structure.
pub struct RayCaster {
    pub scene: Scene,
    bvh: Bvh,
}

impl RayCaster {
    pub fn new(scene: Scene) -> Self {
        let bvh = Bvh::build(&scene.triangles);
        Self { scene, bvh }
    }

    pub fn cast(&self, origin: &Point, dir: &Point, t_min: f64, t_max: f64) -> Option<f64> {
        self.bvh
            .closest_hit(&self.scene.triangles, origin, dir, t_min, t_max)
            .map(|h| h.t)
    }

    /// Sweep where every ray is fired from `pose_at(ray_time)`.
    pub fn cast_scan_with<F>(&self, model: &LidarModel, stamp: f64, mut pose_at: F) -> LidarScan
    where
        F: FnMut(f64) -> Pose,
    {
        let n_el = model.elevation_count();
        let mut rays = Vec::with_capacity(model.ray_count());
        for az in 0..model.azimuth_count {
            let t = model.ray_time(az, stamp);
            let pose = pose_at(t);
            for el in 0..n_el {
                let d = model.direction(az, el);
                let dw = pose.rotate(&d);
                let range = self.cast(&pose.translation, &dw, model.min_range, model.max_range);
                rays.push(LidarRay {
                    direction: d,
                    range,
                    timestamp: t,
                    azimuth_index: az as u32,
                    elevation_index: el as u32,
                });
            }
        }
        LidarScan { rays, stamp }
    }
}

/// One sweep from a fixed pose. Rays are ordered azimuth-major.
pub fn cast_scan(scene: &Scene, pose: &Pose, model: &LidarModel, stamp: f64) -> LidarScan {
    RayCaster::new(scene.clone()).cast_scan_with(model, stamp, |_| *pose)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::bvh::brute_force_hit;
    use crate::simulator::scene::{box_room, courtyard, Triangle, Vec3};

    fn ring_model(n: usize) -> LidarModel {
        LidarModel {
            azimuth_count: n,
            elevation_angles: vec![0.0],
            max_range: 100.0,
            min_range: 0.1,
            scan_period: 0.1,
            scan_rate: 5.0,
        }
    }

    #[test]
    fn wall_at_five_meters() {
        let wall = Scene::new(
            "wall",
            vec![
                Triangle::new(Vec3::new(5.0, -10.0, -10.0), Vec3::new(5.0, 10.0, -10.0), Vec3::new(5.0, 10.0, 10.0)),
                Triangle::new(Vec3::new(5.0, -10.0, -10.0), Vec3::new(5.0, 10.0, 10.0), Vec3::new(5.0, -10.0, 10.0)),
            ],
        )
        .unwrap();
        let scan = cast_scan(&wall, &Pose::identity(), &ring_model(4), 1.0);
        assert!((scan.rays[0].range.unwrap() - 5.0).abs() < 1e-12);
        assert_eq!(scan.rays[2].range, None);
    }

    #[test]
    fn upward_ray_in_open_sky_has_no_return() {
        let model = LidarModel {
            elevation_angles: vec![1.2],
            ..ring_model(8)
        };
        let scan = cast_scan(&courtyard(), &Pose::from_translation(Vec3::new(0.0, 0.0, 1.5)), &model, 0.0);
        assert!(scan.rays.iter().all(|r| r.range.is_none()));
    }

    #[test]
    fn box_room_ring_matches_analytic_distances() {
        let model = ring_model(360);
        let pose = Pose::from_translation(Vec3::new(1.0, -0.5, 1.5));
        let scan = cast_scan(&box_room(), &pose, &model, 0.0);
        for r in &scan.rays {
            let d = r.direction;
            // slab exit distance from inside the box [-5,5]²
            let mut best = f64::INFINITY;
            for k in 0..2 {
                if d[k].abs() > 1e-15 {
                    let bound = if d[k] > 0.0 { 5.0 } else { -5.0 };
                    best = best.min((bound - pose.translation[k]) / d[k]);
                }
            }
            let got = r.range.unwrap();
            assert!((got - best).abs() < 1e-6, "az {} got {got} expected {best}", r.azimuth_index);
        }
    }

    #[test]
    fn timestamps_span_the_period() {
        let model = ring_model(10);
        let scan = cast_scan(&box_room(), &Pose::from_translation(Vec3::new(0.0, 0.0, 1.0)), &model, 2.0);
        assert!((scan.rays[0].timestamp - 1.9).abs() < 1e-12);
        assert_eq!(scan.rays.last().unwrap().timestamp, 2.0);
        assert!(scan.rays.iter().all(|r| (r.direction.norm() - 1.0).abs() < 1e-9));
    }

    #[test]
    fn returned_points_lie_on_surfaces() {
        let scene = courtyard();
        let model = LidarModel::uniform(90, 8, -25.0, 25.0, 0.3, 40.0, 0.1, 5.0);
        let pose = Pose::from_yaw(0.3, Vec3::new(2.0, 1.0, 1.5));
        let scan = cast_scan(&scene, &pose, &model, 0.0);
        for r in &scan.rays {
            let dw = pose.rotate(&r.direction);
            let brute = brute_force_hit(&scene.triangles, &pose.translation, &dw, 0.3, 40.0);
            assert_eq!(r.range, brute.map(|h| h.t));
            if let Some(p) = r.point() {
                assert!(scene.distance_to_surface(&pose.apply(&p)) < 1e-6);
            }
        }
    }

    #[test]
    fn model_validation() {
        assert!(LidarModel::default().validate().is_ok());
        let mut bad = LidarModel::default();
        bad.min_range = 50.0;
        assert!(bad.validate().is_err());
        let mut bad = LidarModel::default();
        bad.elevation_angles = vec![0.1, 0.1];
        assert!(bad.validate().is_err());
    }
}
