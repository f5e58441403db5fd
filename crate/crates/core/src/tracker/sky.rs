//! Sky segmentation from holes in the range image.

use crate::geometry::Pose;
use crate::simulator::{LidarModel, LidarScan};

/// Occupancy image `[el][az]`; `true` means the cell has a return.
fn occupancy(scan: &LidarScan, model: &LidarModel) -> Vec<Vec<bool>> {
    let mut img = vec![vec![false; model.azimuth_count]; model.elevation_count()];
    for r in &scan.rays {
        let (az, el) = (r.azimuth_index as usize, r.elevation_index as usize);
        if el < img.len() && az < model.azimuth_count && r.range.is_some() {
            img[el][az] = true;
        }
    }
    img
}

/// One 3x3 morphology pass. Azimuth wraps around; beyond the first and last
/// beam the image is `outside`.
fn morph(img: &[Vec<bool>], dilate: bool, outside: bool) -> Vec<Vec<bool>> {
    let (h, w) = (img.len(), img.first().map_or(0, Vec::len));
    let mut out = vec![vec![false; w]; h];
    for e in 0..h {
        for a in 0..w {
            let mut any = false;
            let mut all = true;
            for de in -1i64..=1 {
                let ee = e as i64 + de;
                for da in -1i64..=1 {
                    let v = if ee < 0 || ee >= h as i64 {
                        outside
                    } else {
                        img[ee as usize][(a as i64 + da).rem_euclid(w as i64) as usize]
                    };
                    any |= v;
                    all &= v;
                }
            }
            out[e][a] = if dilate { any } else { all };
        }
    }
    out
}

/// Per-ray sky flags, aligned with `scan.rays`.
///
/// The return-occupancy image is closed (one dilation, then one erosion).
/// A ray is sky when its cell is still empty and its direction, rotated into
/// the world by `pose`, points above the horizon.
pub fn segment_sky(scan: &LidarScan, pose: &Pose, model: &LidarModel) -> Vec<bool> {
    if model.azimuth_count == 0 {
        return vec![false; scan.rays.len()];
    }
    let img = occupancy(scan, model);
    let closed = morph(&morph(&img, true, false), false, true);
    scan.rays
        .iter()
        .map(|r| {
            let (az, el) = (r.azimuth_index as usize, r.elevation_index as usize);
            let filled = closed.get(el).and_then(|row| row.get(az)).copied().unwrap_or(false);
            r.range.is_none() && !filled && pose.rotate(&r.direction).z > 0.0
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{box_room, cast_scan, courtyard};
    use nalgebra::Vector3;

    fn model() -> LidarModel {
        LidarModel::uniform(90, 16, -25.0, 25.0, 0.3, 40.0, 0.1, 5.0)
    }

    #[test]
    fn closed_room_has_no_sky() {
        let p = Pose::from_translation(Vector3::new(0.0, 0.0, 1.5));
        let scan = cast_scan(&box_room(), &p, &model(), 0.0);
        assert!(segment_sky(&scan, &p, &model()).iter().all(|s| !s));
    }

    #[test]
    fn courtyard_flags_upward_misses_only() {
        let m = model();
        let p = Pose::from_translation(Vector3::new(1.0, 0.5, 1.5));
        let scan = cast_scan(&courtyard(), &p, &m, 0.0);
        let sky = segment_sky(&scan, &p, &m);
        let mut flagged = 0;
        for (r, &s) in scan.rays.iter().zip(&sky) {
            if s {
                assert!(r.range.is_none() && r.direction.z > 0.0);
                flagged += 1;
            }
            if r.direction.z < 0.0 {
                assert!(!s);
            }
        }
        assert!(flagged > 0);
    }

    #[test]
    fn isolated_dropout_is_closed() {
        let m = model();
        let p = Pose::from_translation(Vector3::new(0.0, 0.0, 1.5));
        let mut scan = cast_scan(&box_room(), &p, &m, 0.0);
        let i = scan
            .rays
            .iter()
            .position(|r| r.elevation_index == 12 && r.azimuth_index == 0)
            .unwrap();
        scan.rays[i].range = None;
        assert!(scan.rays[i].direction.z > 0.0);
        assert!(segment_sky(&scan, &p, &m).iter().all(|s| !s));
    }

    #[test]
    fn sky_is_subset_of_no_return() {
        let m = model();
        let p = Pose::from_yaw(0.4, Vector3::new(-3.0, 2.0, 1.0));
        let scan = cast_scan(&courtyard(), &p, &m, 0.0);
        for (r, s) in scan.rays.iter().zip(segment_sky(&scan, &p, &m)) {
            assert!(!s || r.range.is_none());
        }
    }
}
