//! Dead-reckons a moving sensor with the tracker and compares the result
//! against groundtruth.

use ilslam::mesh_eval::ape;
use ilslam::simulator::{box_room, generate_sequence, loop_trajectory, LidarModel, SimOptions};
use ilslam::tracker::{Tracker, TrackerConfig};

fn main() -> ilslam::Result<()> {
    // 10 Hz sensor; the tracker keeps every other scan
    let model = LidarModel::uniform(180, 16, -25.0, 25.0, 0.3, 40.0, 0.1, 10.0);
    let ds = generate_sequence(&box_room(), &loop_trajectory([0.0, 0.0], 2.0, 1.5, 6.0, 0.1), &model, &SimOptions::default())?;
    let cfg = TrackerConfig::default();
    let kept = ilslam::tracker::decimate(ds.scans.clone(), model.scan_rate, cfg.target_hz);
    let mut tracker = Tracker::new(cfg, model, ds.gt_trajectory[0].1)?;

    let mut est = Vec::new();
    for scan in kept {
        let f = tracker.process(scan);
        if !f.icp_converged {
            println!("frame {} fell back to constant velocity", f.index);
        }
        est.push((f.stamp, f.pose));
    }
    println!("{} of {} scans tracked", est.len(), ds.scans.len());
    println!("odometry APE {:.4} m", ape(&est, &ds.gt_trajectory, 1e-3)?);
    Ok(())
}
