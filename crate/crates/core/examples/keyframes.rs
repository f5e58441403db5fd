//! Keyframe decisions of the three policies and the window each strategy
//! builds.

use nalgebra::Vector3;

use ilslam::geometry::Pose;
use ilslam::mapper::{decide, window_indices, KeyframePolicy, MapperConfig, MotionThresholds, WindowStrategy};

fn main() {
    let cfg = MapperConfig::default();
    let motion = MotionThresholds { translation: cfg.motion_trans_thresh, rotation_deg: cfg.motion_rot_thresh };
    let last = Pose::identity();
    let cases = [
        ("2.9 s, still", 2.9, Pose::identity()),
        ("3.0 s, still", 3.0, Pose::identity()),
        ("5 s, 0.1 m and 5 deg", 5.0, Pose::from_yaw(5f64.to_radians(), Vector3::new(0.1, 0.0, 0.0))),
        ("5 s, 0.6 m", 5.0, Pose::from_translation(Vector3::new(0.6, 0.0, 0.0))),
    ];
    for policy in [KeyframePolicy::Temporal, KeyframePolicy::HybridLazy, KeyframePolicy::HybridEager] {
        for (label, dt, pose) in &cases {
            let d = decide(policy, cfg.t_kf, motion, *dt, pose, &last, 0.0);
            println!("{policy:?} {label:<22} -> {d:?}");
        }
    }
    for strategy in [WindowStrategy::Random, WindowStrategy::Recent, WindowStrategy::HalfHalf] {
        println!("{strategy:?} window of 20: {:?}", window_indices(20, cfg.n_window, strategy, 1));
    }
}
