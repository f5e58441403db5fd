//! Constant-velocity motion compensation of a sweep.

use crate::geometry::Pose;
use crate::simulator::{LidarRay, LidarScan};

/// Sensor pose at time `t` between `prev` (stamped) and `cur` (at `stamp`),
/// extrapolated linearly outside that interval.
fn pose_at(prev: (f64, &Pose), cur: &Pose, stamp: f64, t: f64) -> Pose {
    let span = stamp - prev.0;
    if span <= 0.0 {
        return *cur;
    }
    prev.1.interpolate(cur, (t - prev.0) / span)
}

fn remap(scan: &LidarScan, mut f: impl FnMut(&LidarRay) -> Pose) -> LidarScan {
    let rays = scan
        .rays
        .iter()
        .map(|r| {
            let m = f(r);
            let mut out = *r;
            match r.point() {
                Some(p) => {
                    let q = m.apply(&p);
                    let range = q.norm();
                    out.direction = q / range;
                    out.range = Some(range);
                }
                None => out.direction = m.rotate(&r.direction).normalize(),
            }
            out
        })
        .collect();
    LidarScan { rays, stamp: scan.stamp }
}

/// Re-expresses every return in the frame of the sensor at `scan.stamp`.
///
/// `prev` is the pose at the previous scan stamp and `cur` the pose at this
/// one; a ray fired at time `t` is taken from the pose interpolated between
/// them. Rays without a return only have their direction rotated.
pub fn motion_compensate(scan: &LidarScan, prev: (f64, &Pose), cur: &Pose) -> LidarScan {
    let cur_inv = cur.inverse();
    remap(scan, |r| cur_inv.compose(&pose_at(prev, cur, scan.stamp, r.timestamp)))
}

/// Inverse of [`motion_compensate`] for the same poses.
pub fn decompensate(scan: &LidarScan, prev: (f64, &Pose), cur: &Pose) -> LidarScan {
    remap(scan, |r| pose_at(prev, cur, scan.stamp, r.timestamp).inverse().compose(cur))
}
