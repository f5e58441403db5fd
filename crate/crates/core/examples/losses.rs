//! Dynamic margin of one ray as its rendered weights sharpen around the
//! measured depth, next to the fixed line-of-sight schedule.

use ilslam::field::{sample_ray, SampleStrategy};
use ilslam::losses::{js_score, target_weights, LossConfig, DECAY_FAST, DECAY_MEDIUM, DECAY_SLOW};

fn main() {
    let cfg = LossConfig::default();
    let z = 5.0;
    let s = sample_ray(0.3, 12.0, None, SampleStrategy::Uniform, 256, 0.0, None);

    println!("{:>8} {:>12} {:>8} {:>8}", "spread", "divergence", "J*", "eps_dyn");
    for spread in [3.0, 1.0, 0.5, 0.3, 0.2, 0.17] {
        let w: Vec<f64> = s.t.iter().map(|&t| (-(t - z).powi(2) / (2.0 * spread * spread)).exp()).collect();
        let js = js_score(&s.t, &w, z, &cfg);
        println!("{spread:>8.2} {:>12.3} {:>8.3} {:>8.3}", js.divergence, js.j_star, js.eps_dyn);
    }

    let target = target_weights(&s.t, &s.delta, z, cfg.eps_min).unwrap();
    let support = target.iter().filter(|&&w| w > 0.0).count();
    println!("\ntarget at eps_min covers {support} samples, sums to {:.6}", target.iter().sum::<f64>());

    println!("\nline-of-sight margin by keyframe age:");
    for (name, rate) in [("slow", DECAY_SLOW), ("medium", DECAY_MEDIUM), ("fast", DECAY_FAST)] {
        let c = LossConfig { los_decay_rate: rate, ..cfg.clone() };
        let ages: Vec<String> = [0, 5, 10, 20, 40].iter().map(|&a| format!("{:.2}", c.los_eps(a))).collect();
        println!("  {name:>6}: {}", ages.join(" "));
    }
}
