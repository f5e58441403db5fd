//! Volume rendering of one ray through a hand-made density profile, with
//! both weight formulas.

use ilslam::diff::{ParamStore, Tape, Tensor};
use ilslam::field::{render_sigma, sample_ray, SampleStrategy, WeightFormula};

fn main() {
    let n = 40;
    let s = sample_ray(0.5, 10.0, None, SampleStrategy::Uniform, n, 0.0, None);
    // a soft wall at 6 m
    let sigma: Vec<f64> = s.t.iter().map(|&t| 8.0 * (-(t - 6.0).powi(2) / 0.05).exp()).collect();

    let t = Tensor::row(s.t.clone());
    let delta = Tensor::row(s.delta.clone());
    let store = ParamStore::new();
    for formula in [WeightFormula::Paper, WeightFormula::Alpha] {
        let mut tape = Tape::new(&store);
        let sv = tape.constant(Tensor::column(sigma.clone()));
        let out = render_sigma(&mut tape, sv, &t, &delta, formula);
        let w = tape.value(out.weights);
        println!(
            "{formula:?}: depth {:.3} m, weight sum {:.4}, peak weight {:.4}",
            tape.value(out.depth).item(),
            w.sum(),
            w.max_abs()
        );
    }
}
