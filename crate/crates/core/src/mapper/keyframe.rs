//! Keyframe selection and optimization windows.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::Pose;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum KeyframePolicy {
    /// A keyframe every `t_kf` seconds.
    #[default]
    Temporal,
    /// Time and motion both required; otherwise wait.
    HybridLazy,
    /// Time and motion both required; time alone reruns the last window.
    HybridEager,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum WindowStrategy {
    /// Current keyframe plus uniformly drawn past ones.
    #[default]
    Random,
    /// The most recent keyframes.
    Recent,
    /// Half most recent, the rest drawn from the older ones.
    HalfHalf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KeyframeDecision {
    Add,
    Skip,
    Reoptimize,
}

/// Motion gate of the hybrid policies.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MotionThresholds {
    pub translation: f64,
    pub rotation_deg: f64,
}

/// Decides what a frame at `stamp` with pose `pose` triggers, given the
/// last keyframe pose and the time the keyframe clock was last reset.
pub fn decide(
    policy: KeyframePolicy,
    t_kf: f64,
    motion: MotionThresholds,
    stamp: f64,
    pose: &Pose,
    last_pose: &Pose,
    clock: f64,
) -> KeyframeDecision {
    if stamp - clock < t_kf - 1e-9 {
        return KeyframeDecision::Skip;
    }
    let rel = last_pose.inverse().compose(pose);
    let moved = rel.translation.norm() >= motion.translation
        || rel.rotation_angle().to_degrees() >= motion.rotation_deg;
    match (policy, moved) {
        (KeyframePolicy::Temporal, _) | (_, true) => KeyframeDecision::Add,
        (KeyframePolicy::HybridLazy, false) => KeyframeDecision::Skip,
        (KeyframePolicy::HybridEager, false) => KeyframeDecision::Reoptimize,
    }
}

/// Indices into a keyframe list of length `count` forming one window. The
/// last keyframe is always first in the result.
pub fn window_indices(count: usize, n_window: usize, strategy: WindowStrategy, seed: u64) -> Vec<usize> {
    assert!(count >= 1 && n_window >= 1);
    let current = count - 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |pool: usize, k: usize| -> Vec<usize> {
        if k >= pool {
            (0..pool).collect()
        } else {
            let mut v = sample(&mut rng, pool, k).into_vec();
            v.sort_unstable();
            v
        }
    };
    let mut out = vec![current];
    match strategy {
        WindowStrategy::Random => out.extend(draw(current, n_window - 1)),
        WindowStrategy::Recent => out.extend((current.saturating_sub(n_window - 1)..current).rev()),
        WindowStrategy::HalfHalf => {
            let recent = n_window.div_ceil(2);
            let first_recent = current.saturating_sub(recent - 1);
            out.extend((first_recent..current).rev());
            out.extend(draw(first_recent, n_window - out.len()));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    const MOTION: MotionThresholds = MotionThresholds {
        translation: 0.5,
        rotation_deg: 22.5,
    };

    fn at(stamp: f64, policy: KeyframePolicy, pose: Pose) -> KeyframeDecision {
        decide(policy, 3.0, MOTION, stamp, &pose, &Pose::identity(), 0.0)
    }

    #[test]
    fn temporal_policy() {
        let p = Pose::identity();
        assert_eq!(at(2.9, KeyframePolicy::Temporal, p), KeyframeDecision::Skip);
        assert_eq!(at(3.0, KeyframePolicy::Temporal, p), KeyframeDecision::Add);
    }

    #[test]
    fn hybrid_policies_without_motion() {
        let small = Pose::from_yaw(5f64.to_radians(), Vector3::new(0.1, 0.0, 0.0));
        assert_eq!(at(5.0, KeyframePolicy::HybridLazy, small), KeyframeDecision::Skip);
        assert_eq!(at(5.0, KeyframePolicy::HybridEager, small), KeyframeDecision::Reoptimize);
        assert_eq!(at(2.0, KeyframePolicy::HybridEager, small), KeyframeDecision::Skip);
    }

    #[test]
    fn hybrid_policies_with_motion() {
        for p in [
            Pose::from_translation(Vector3::new(0.5, 0.0, 0.0)),
            Pose::from_yaw(22.5f64.to_radians(), Vector3::zeros()),
        ] {
            assert_eq!(at(3.0, KeyframePolicy::HybridLazy, p), KeyframeDecision::Add);
            assert_eq!(at(3.0, KeyframePolicy::HybridEager, p), KeyframeDecision::Add);
            assert_eq!(at(2.0, KeyframePolicy::HybridLazy, p), KeyframeDecision::Skip);
        }
    }

    #[test]
    fn single_keyframe_window() {
        for s in [WindowStrategy::Random, WindowStrategy::Recent, WindowStrategy::HalfHalf] {
            assert_eq!(window_indices(1, 8, s, 3), vec![0]);
        }
    }

    #[test]
    fn random_window_is_distinct_and_seeded() {
        let w = window_indices(20, 8, WindowStrategy::Random, 11);
        assert_eq!(w.len(), 8);
        assert_eq!(w[0], 19);
        let mut u = w.clone();
        u.sort_unstable();
        u.dedup();
        assert_eq!(u.len(), 8);
        assert_eq!(w, window_indices(20, 8, WindowStrategy::Random, 11));
        assert_ne!(w, window_indices(20, 8, WindowStrategy::Random, 12));
        assert_eq!(window_indices(5, 8, WindowStrategy::Random, 0), vec![4, 0, 1, 2, 3]);
    }

    #[test]
    fn recent_window() {
        // keyframes numbered 1..=20 sit at indices 0..20; 13..20 are 12..=19
        let mut w = window_indices(20, 8, WindowStrategy::Recent, 0);
        w.sort_unstable();
        assert_eq!(w, (12..20).collect::<Vec<_>>());
    }

    #[test]
    fn half_half_window() {
        let w = window_indices(20, 8, WindowStrategy::HalfHalf, 5);
        assert_eq!(&w[..4], &[19, 18, 17, 16]);
        assert_eq!(w.len(), 8);
        assert!(w[4..].iter().all(|&i| i < 16));
        let w7 = window_indices(20, 7, WindowStrategy::HalfHalf, 5);
        assert_eq!(&w7[..4], &[19, 18, 17, 16]);
        assert_eq!(w7.len(), 7);
    }
}
