use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::lidar::{LidarModel, LidarScan, RayCaster};
use super::scene::Scene;
use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Pose, Trajectory};

/// Voxel size of the groundtruth map.
pub const GT_MAP_VOXEL: f64 = 0.05;

/// Sensor imperfections applied on top of exact ray casting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimOptions {
    /// Standard deviation of additive Gaussian range noise in meters.
    pub range_noise_std: f64,
    /// Probability that a return is dropped.
    pub dropout: f64,
    pub seed: u64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            range_noise_std: 0.0,
            dropout: 0.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub scene_name: String,
    pub lidar: LidarModel,
    pub options: SimOptions,
    pub scans: Vec<LidarScan>,
    /// Groundtruth sensor pose at each scan stamp.
    pub gt_trajectory: Trajectory,
    pub gt_map: PointCloud,
}

impl Dataset {
    pub fn stamps(&self) -> Vec<f64> {
        self.scans.iter().map(|s| s.stamp).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.lidar.validate()?;
        if self.scans.is_empty() {
            return Err(Error::Validation("dataset has no scans".into()));
        }
        if self.scans.windows(2).any(|w| w[1].stamp <= w[0].stamp) {
            return Err(Error::Validation("scan stamps are not increasing".into()));
        }
        if self.gt_trajectory.len() != self.scans.len() {
            return Err(Error::Validation(format!(
                "{} scans but {} groundtruth poses",
                self.scans.len(),
                self.gt_trajectory.len()
            )));
        }
        Ok(())
    }
}

/// Pose along a time-sorted waypoint list: linear in translation,
/// spherical-linear in rotation, held constant outside the time range.
pub fn interpolate_trajectory(waypoints: &[(f64, Pose)], t: f64) -> Pose {
    let first = &waypoints[0];
    let last = &waypoints[waypoints.len() - 1];
    if t <= first.0 {
        return first.1;
    }
    if t >= last.0 {
        return last.1;
    }
    let i = waypoints.partition_point(|(wt, _)| *wt <= t) - 1;
    let (t0, p0) = &waypoints[i];
    let (t1, p1) = &waypoints[i + 1];
    if t1 - t0 <= 0.0 {
        return *p1;
    }
    p0.interpolate(p1, (t - t0) / (t1 - t0))
}

/// Scan stamps `t0 + k / rate` for every `k` with the stamp before the final waypoint.
pub fn scan_stamps(t0: f64, t_end: f64, rate: f64) -> Vec<f64> {
    let n = ((t_end - t0) * rate + 1e-9).floor().max(0.0) as usize;
    (0..n.max(1)).map(|k| t0 + k as f64 / rate).collect()
}

pub fn generate_sequence(
    scene: &Scene,
    waypoints: &[(f64, Pose)],
    model: &LidarModel,
    options: &SimOptions,
) -> Result<Dataset> {
    if model.scan_rate <= 0.0 {
        return Err(Error::Config("scan_rate must be positive".into()));
    }
    model.validate()?;
    if waypoints.len() < 2 {
        return Err(Error::Config("need at least two waypoints".into()));
    }
    if waypoints.windows(2).any(|w| w[1].0 < w[0].0) {
        return Err(Error::Config("waypoints must be time-sorted".into()));
    }
    let caster = RayCaster::new(scene.clone());
    let stamps = scan_stamps(waypoints[0].0, waypoints[waypoints.len() - 1].0, model.scan_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let noise = Normal::new(0.0, options.range_noise_std.max(0.0))
        .map_err(|e| Error::Config(e.to_string()))?;

    let mut scans = Vec::with_capacity(stamps.len());
    let mut gt_trajectory = Vec::with_capacity(stamps.len());
    let mut world_points = Vec::new();
    for &stamp in &stamps {
        let mut scan = caster.cast_scan_with(model, stamp, |t| interpolate_trajectory(waypoints, t));
        for ray in &mut scan.rays {
            if let Some(r) = ray.range {
                let pose = interpolate_trajectory(waypoints, ray.timestamp);
                world_points.push(pose.apply(&(ray.direction * r)));
            }
            if options.dropout > 0.0 && ray.range.is_some() && rng.gen::<f64>() < options.dropout {
                ray.range = None;
            }
            if options.range_noise_std > 0.0 {
                if let Some(r) = ray.range.as_mut() {
                    *r += noise.sample(&mut rng);
                }
            }
        }
        gt_trajectory.push((stamp, interpolate_trajectory(waypoints, stamp)));
        scans.push(scan);
    }
    let gt_map = PointCloud::new(world_points).voxel_downsample(GT_MAP_VOXEL);
    Ok(Dataset {
        scene_name: scene.name.clone(),
        lidar: model.clone(),
        options: options.clone(),
        scans,
        gt_trajectory,
        gt_map,
    })
}

/// Closed loop of `radius` around `center` at height `z`, heading tangent,
/// sampled every `dt` over `duration` seconds.
pub fn loop_trajectory(center: [f64; 2], radius: f64, z: f64, duration: f64, dt: f64) -> Trajectory {
    let n = (duration / dt).round() as usize;
    (0..=n)
        .map(|k| {
            let t = k as f64 * dt;
            let a = 2.0 * std::f64::consts::PI * t / duration;
            let p = nalgebra::Vector3::new(center[0] + radius * a.cos(), center[1] + radius * a.sin(), z);
            (t, Pose::from_yaw(a + std::f64::consts::FRAC_PI_2, p))
        })
        .collect()
}
