//! Real-time front end: decimation, scan-to-scan ICP odometry, motion
//! compensation and sky segmentation.

mod icp;
mod motion;
mod sky;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use icp::{icp_point_to_plane, IcpParams, IcpResult, IcpTarget, MIN_CORRESPONDENCES};
pub use motion::{decompensate, motion_compensate};
pub use sky::segment_sky;

use crate::error::{Error, Result};
use crate::geometry::{estimate_planar_normals, Point, PointCloud, Pose, Trajectory};
use crate::simulator::{LidarModel, LidarScan};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerConfig {
    /// Frame rate after decimation.
    pub target_hz: f64,
    pub icp_max_iters: usize,
    pub icp_corr_dist: f64,
    pub icp_convergence_eps: f64,
    /// Neighbours used for target normals.
    pub knn_k: usize,
    /// Points whose neighbours sit further than this from their fitted
    /// plane (RMS, meters) get no normal and are left out of ICP; this drops
    /// edges and corners. Should exceed the range noise.
    pub max_plane_rms: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            target_hz: 5.0,
            icp_max_iters: 30,
            icp_corr_dist: 1.0,
            icp_convergence_eps: 1e-6,
            knn_k: 10,
            max_plane_rms: 0.005,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("tracker: {m}")));
        if !(self.target_hz > 0.0) {
            return bad("target_hz must be positive");
        }
        if !(self.icp_corr_dist > 0.0) {
            return bad("icp_corr_dist must be positive");
        }
        if self.icp_max_iters == 0 {
            return bad("icp_max_iters must be at least 1");
        }
        if !(self.icp_convergence_eps > 0.0) {
            return bad("icp_convergence_eps must be positive");
        }
        if !(self.max_plane_rms > 0.0) {
            return bad("max_plane_rms must be positive");
        }
        if self.knn_k < 3 {
            return bad("knn_k must be at least 3");
        }
        Ok(())
    }

    pub fn icp_params(&self) -> IcpParams {
        IcpParams {
            max_iters: self.icp_max_iters,
            corr_dist: self.icp_corr_dist,
            convergence_eps: self.icp_convergence_eps,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackedFrame {
    /// Position in the decimated stream.
    pub index: usize,
    pub stamp: f64,
    /// Motion-compensated scan, expressed at the end-of-sweep pose.
    pub scan: LidarScan,
    /// Online estimate `x̂_i`, following any published corrections.
    pub pose: Pose,
    /// Relative motion `P_{i-1,i}` from the previous frame.
    pub odometry: Pose,
    /// Uncorrected dead-reckoned pose.
    pub odom_pose: Pose,
    pub sky_mask: Vec<bool>,
    /// `false` when ICP failed and constant velocity was used instead.
    pub icp_converged: bool,
}

/// Keeps every `⌈source_rate / target_hz⌉`-th item, starting with the first.
pub fn decimate<T>(items: Vec<T>, source_rate: f64, target_hz: f64) -> Vec<T> {
    let ratio = ((source_rate / target_hz) - 1e-9).ceil().max(1.0) as usize;
    items.into_iter().step_by(ratio).collect()
}

/// Most recompensate-and-realign rounds per frame.
const COMPENSATION_ROUNDS: usize = 10;
/// Rounds stop once the relative pose changes by less than this entrywise.
const COMPENSATION_TOL: f64 = 1e-9;

struct Previous {
    stamp: f64,
    target: IcpTarget,
}

/// Incremental tracker state.
pub struct Tracker {
    cfg: TrackerConfig,
    model: LidarModel,
    prev: Option<Previous>,
    velocity: Pose,
    pose: Pose,
    odom_pose: Pose,
    history: BTreeMap<usize, Pose>,
    next_index: usize,
}

impl Tracker {
    /// `initial_pose` places the first frame in the world.
    pub fn new(cfg: TrackerConfig, model: LidarModel, initial_pose: Pose) -> Result<Self> {
        cfg.validate()?;
        model.validate()?;
        Ok(Self {
            cfg,
            model,
            prev: None,
            velocity: Pose::identity(),
            pose: initial_pose,
            odom_pose: initial_pose,
            history: BTreeMap::new(),
            next_index: 0,
        })
    }

    fn with_normals(&self, scan: &LidarScan) -> PointCloud {
        estimate_planar_normals(&scan.points(), self.cfg.knn_k, &Point::zeros(), self.cfg.max_plane_rms)
    }

    fn target_of(&self, scan: &LidarScan) -> IcpTarget {
        IcpTarget::new(&self.with_normals(scan)).expect("normals are always set")
    }

    /// Relative motion from the previous frame and whether ICP converged.
    ///
    /// The sweep is compensated with the previous velocity and aligned;
    /// it is then recompensated with the new estimate and realigned until
    /// the estimate stops moving. Each round shrinks the compensation error
    /// by roughly the sweep fraction of the frame interval.
    fn odometry(&self, prev: &Previous, raw: &LidarScan) -> (Pose, bool) {
        let params = self.cfg.icp_params();
        let id = Pose::identity();
        let pass = |rel: &Pose, init: &Pose| {
            let comp = motion_compensate(raw, (prev.stamp, &id), rel);
            icp_point_to_plane(&self.with_normals(&comp), &prev.target, init, &params)
        };
        let first = pass(&self.velocity, &id);
        if !first.converged {
            return (self.velocity, false);
        }
        let mut rel = first.pose;
        for _ in 0..COMPENSATION_ROUNDS {
            let next = pass(&rel, &rel);
            if !next.converged {
                break;
            }
            let change = rel.max_abs_diff(&next.pose);
            rel = next.pose;
            if change < COMPENSATION_TOL {
                break;
            }
        }
        (rel, true)
    }

    pub fn process(&mut self, raw: LidarScan) -> TrackedFrame {
        let id = Pose::identity();
        let (rel, converged) = match &self.prev {
            None => (id, true),
            Some(prev) => self.odometry(prev, &raw),
        };
        let prev_stamp = self.prev.as_ref().map_or(raw.stamp, |p| p.stamp);
        let scan = motion_compensate(&raw, (prev_stamp, &id), &rel);
        if self.prev.is_some() {
            self.pose = self.pose.compose(&rel).renormalized();
            self.odom_pose = self.odom_pose.compose(&rel).renormalized();
            self.velocity = rel;
        }
        let sky_mask = segment_sky(&scan, &self.pose, &self.model);
        self.prev = Some(Previous {
            stamp: raw.stamp,
            target: self.target_of(&scan),
        });
        let index = self.next_index;
        self.next_index += 1;
        self.history.insert(index, self.pose);
        TrackedFrame {
            index,
            stamp: raw.stamp,
            scan,
            pose: self.pose,
            odometry: rel,
            odom_pose: self.odom_pose,
            sky_mask,
            icp_converged: converged,
        }
    }

    /// Applies an optimized pose for frame `index`: every later estimate is
    /// left-multiplied by `optimized · x̂_index⁻¹`.
    pub fn apply_correction(&mut self, index: usize, optimized: &Pose) -> Result<()> {
        let old = *self
            .history
            .get(&index)
            .ok_or_else(|| Error::Contract(format!("correction for unknown frame {index}")))?;
        let c = optimized.compose(&old.inverse());
        for (_, p) in self.history.range_mut(index..) {
            *p = c.compose(p).renormalized();
        }
        self.pose = c.compose(&self.pose).renormalized();
        Ok(())
    }

    /// Current online estimate of the latest frame.
    pub fn pose(&self) -> Pose {
        self.pose
    }
}

/// Tracks a whole decimated stream without corrections.
pub fn track(
    scans: impl IntoIterator<Item = LidarScan>,
    cfg: &TrackerConfig,
    model: &LidarModel,
    initial_pose: Pose,
) -> Result<Vec<TrackedFrame>> {
    let mut t = Tracker::new(cfg.clone(), model.clone(), initial_pose)?;
    Ok(scans.into_iter().map(|s| t.process(s)).collect())
}

/// Dead-reckoned trajectory of a tracked stream.
pub fn odometry_trajectory(frames: &[TrackedFrame]) -> Trajectory {
    frames.iter().map(|f| (f.stamp, f.odom_pose)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{box_room, generate_sequence, SimOptions};
    use nalgebra::Vector3;

    fn model() -> LidarModel {
        LidarModel::uniform(120, 16, -30.0, 30.0, 0.3, 40.0, 0.1, 5.0)
    }

    #[test]
    fn decimation_counts() {
        let v: Vec<usize> = (0..200).collect();
        assert_eq!(decimate(v.clone(), 10.0, 5.0), (0..200).step_by(2).collect::<Vec<_>>());
        assert_eq!(decimate(v.clone(), 5.0, 5.0), v);
        assert_eq!(decimate(v.clone(), 20.0, 5.0).len(), 50);
        assert_eq!(decimate(v, 7.0, 5.0).len(), 100);
    }

    #[test]
    fn stationary_sequence_stays_put() {
        let p = Pose::from_translation(Vector3::new(0.5, 0.3, 1.5));
        let ds = generate_sequence(&box_room(), &[(0.0, p), (1.0, p)], &model(), &SimOptions::default()).unwrap();
        let frames = track(ds.scans, &TrackerConfig::default(), &model(), Pose::identity()).unwrap();
        assert_eq!(frames.len(), 5);
        for f in &frames {
            assert!(f.pose.max_abs_diff(&Pose::identity()) < 1e-6);
            assert!(f.icp_converged);
        }
    }

    #[test]
    fn straight_line_dead_reckoning() {
        // 10 m along the room diagonal at 1 m/s, sweeps distorted by motion
        let a = Pose::from_translation(Vector3::new(-4.0, -3.0, 1.5));
        let b = Pose::from_translation(Vector3::new(4.0, 3.0, 1.5));
        let ds = generate_sequence(&box_room(), &[(0.0, a), (10.0, b)], &model(), &SimOptions::default()).unwrap();
        let gt = ds.gt_trajectory.clone();
        let frames = track(ds.scans, &TrackerConfig::default(), &model(), gt[0].1).unwrap();
        let last = frames.last().unwrap();
        let err = (last.pose.translation - gt.last().unwrap().1.translation).norm();
        assert!(err < 0.01, "final error {err}");
    }

    #[test]
    fn correction_shifts_following_frame_exactly() {
        let a = Pose::from_translation(Vector3::new(-1.0, 0.0, 1.5));
        let b = Pose::from_yaw(0.3, Vector3::new(1.0, 0.5, 1.5));
        let ds = generate_sequence(&box_room(), &[(0.0, a), (1.6, b)], &model(), &SimOptions::default()).unwrap();
        let cfg = TrackerConfig::default();
        let plain = track(ds.scans.clone(), &cfg, &model(), a).unwrap();
        let mut t = Tracker::new(cfg, model(), a).unwrap();
        let k = 3;
        let correction = Pose::from_yaw(0.01, Vector3::new(0.05, -0.02, 0.0));
        let mut out = Vec::new();
        for s in ds.scans {
            let f = t.process(s);
            if f.index == k {
                t.apply_correction(k, &correction.compose(&f.pose)).unwrap();
            }
            out.push(f);
        }
        let expect = correction.compose(&plain[k + 1].pose);
        assert!(out[k + 1].pose.max_abs_diff(&expect) < 1e-9);
        assert_eq!(out[k + 1].odom_pose, plain[k + 1].odom_pose);
        assert!(t.apply_correction(99, &Pose::identity()).is_err());
    }

    #[test]
    fn tracking_is_reproducible() {
        let a = Pose::from_translation(Vector3::new(-1.0, 0.0, 1.5));
        let b = Pose::from_yaw(0.2, Vector3::new(1.0, 0.5, 1.5));
        let ds = generate_sequence(&box_room(), &[(0.0, a), (1.0, b)], &model(), &SimOptions::default()).unwrap();
        let x = track(ds.scans.clone(), &TrackerConfig::default(), &model(), a).unwrap();
        let y = track(ds.scans, &TrackerConfig::default(), &model(), a).unwrap();
        assert_eq!(x, y);
    }
}
