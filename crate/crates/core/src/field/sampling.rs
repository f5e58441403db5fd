//! Sample placement along rays.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Fraction of depth-guided samples placed inside the surface band.
pub const DEPTH_GUIDED_FRACTION: f64 = 0.5;
/// Minimum spacing enforced between consecutive samples.
pub const MIN_SPACING: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleStrategy {
    Uniform,
    DepthGuided,
}

/// Sample distances `t` and intervals `delta` for one ray.
#[derive(Clone, Debug, PartialEq)]
pub struct RaySamples {
    pub t: Vec<f64>,
    pub delta: Vec<f64>,
}

fn stratified(lo: f64, hi: f64, n: usize, rng: &mut Option<&mut dyn rand::RngCore>, out: &mut Vec<f64>) {
    let width = (hi - lo) / n as f64;
    for i in 0..n {
        let u = match rng {
            Some(r) => r.gen::<f64>(),
            None => 0.5,
        };
        out.push(lo + (i as f64 + u) * width);
    }
}

/// Places exactly `n` samples on `[t_near, t_far]`.
///
/// `Uniform` stratifies the full interval. `DepthGuided` stratifies
/// [`DEPTH_GUIDED_FRACTION`] of the samples on `[z − eps, z + eps]` (cut to
/// the interval) and the rest on the full interval; without a return it
/// behaves as `Uniform`. Passing no RNG puts every sample at its stratum
/// midpoint.
pub fn sample_ray(
    t_near: f64,
    t_far: f64,
    depth: Option<f64>,
    strategy: SampleStrategy,
    n: usize,
    eps: f64,
    mut rng: Option<&mut dyn rand::RngCore>,
) -> RaySamples {
    assert!(t_near < t_far, "sample_ray needs t_near < t_far");
    assert!(n >= 1, "sample_ray needs at least one sample");
    let mut t = Vec::with_capacity(n);
    let band = match (strategy, depth) {
        (SampleStrategy::DepthGuided, Some(z)) => {
            let lo = t_near.max(z - eps);
            let hi = t_far.min(z + eps);
            (lo < hi).then_some((lo, hi))
        }
        _ => None,
    };
    match band {
        Some((lo, hi)) => {
            let n_band = ((n as f64) * DEPTH_GUIDED_FRACTION).round() as usize;
            stratified(lo, hi, n_band, &mut rng, &mut t);
            stratified(t_near, t_far, n - n_band, &mut rng, &mut t);
            t.sort_by(f64::total_cmp);
        }
        None => stratified(t_near, t_far, n, &mut rng, &mut t),
    }
    for i in 1..n {
        if t[i] < t[i - 1] + MIN_SPACING {
            t[i] = t[i - 1] + MIN_SPACING;
        }
    }
    let mut delta: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
    let last = delta.last().copied().unwrap_or(t_far - t_near);
    delta.push(last);
    RaySamples { t, delta }
}
