//! Finite-difference oracle for tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::Result;

/// Largest number of coordinates probed per check.
pub const MAX_COORDS: usize = 256;

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    /// Coordinates sitting on a kink of `f`, left out of `max_rel_err`.
    pub excluded: Vec<(ParamId, usize)>,
    /// `(param, flat index, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(ParamId, usize, f64, f64)>,
}

fn eval<F>(store: &ParamStore, f: &F) -> f64
where
    F: Fn(&mut Tape<'_>) -> Var,
{
    let mut tape = Tape::new(store);
    let out = f(&mut tape);
    tape.value(out).item()
}

/// Compares `backward()` against central differences
/// `(f(θ+h) − f(θ−h)) / 2h` on up to [`MAX_COORDS`] coordinates of `ids`.
///
/// A coordinate is excluded when `f` has a kink within `h` of it. For a
/// smooth `f` the gap between the one-sided slopes is `f''·h` and halves
/// with the step, and the central estimates at `h` and `h/2` agree to
/// `O(h²)`; a kink breaks one or the other.
///
/// Relative error is `|a − n| / max(|a|, |n|, floor)` with
/// `floor = max(1e-4·‖g‖∞, 1e3·ε_mach·(|f|+1)/h)`, so vanishing gradients
/// are compared on the scale of the whole gradient and above the rounding
/// noise of the differences.
pub fn finite_diff_check<F>(
    store: &ParamStore,
    ids: &[ParamId],
    h: f64,
    seed: u64,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_>) -> Var,
{
    let grads = {
        let mut tape = Tape::new(store);
        let out = f(&mut tape);
        tape.backward(out)?
    };
    let mut coords: Vec<(ParamId, usize)> = Vec::new();
    for &id in ids {
        coords.extend((0..store.value(id).len()).map(|k| (id, k)));
    }
    if coords.len() > MAX_COORDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked: Vec<usize> = sample(&mut rng, coords.len(), MAX_COORDS).into_vec();
        picked.sort_unstable();
        coords = picked.into_iter().map(|i| coords[i]).collect();
    }
    let analytic = |id: ParamId, k: usize| grads.get(id).map_or(0.0, |g| g.data[k]);
    let scale = ids
        .iter()
        .filter_map(|&id| grads.get(id))
        .fold(0.0f64, |m, g| m.max(g.max_abs()));
    let f0 = eval(store, &f);
    let noise = 1e3 * f64::EPSILON * (f0.abs() + 1.0) / h;
    let floor = (1e-4 * scale).max(noise);
    let mut work = store.clone();
    let mut report = GradCheckReport::default();
    for (id, k) in coords {
        let x0 = work.value(id).data[k];
        let mut at = |x: f64| {
            work.get_mut(id).value.data[k] = x;
            eval(&work, &f)
        };
        let (fp, fm) = (at(x0 + h), at(x0 - h));
        let (fp2, fm2) = (at(x0 + h / 2.0), at(x0 - h / 2.0));
        work.get_mut(id).value.data[k] = x0;

        let num = (fp - fm) / (2.0 * h);
        let gap = (fp - 2.0 * f0 + fm) / h;
        let gap_half = (fp2 - 2.0 * f0 + fm2) / (h / 2.0);
        let residual = (gap - 2.0 * gap_half).abs();
        let slope_kink = residual > 0.1 * gap.abs() && residual > (1e-7 * num.abs()).max(noise);
        let num_half = (fp2 - fm2) / h;
        let step_kink = (num - num_half).abs() > (1e-7 * num.abs()).max(noise);
        if slope_kink || step_kink {
            report.excluded.push((id, k));
            continue;
        }
        let a = analytic(id, k);
        let rel = (a - num).abs() / a.abs().max(num.abs()).max(floor);
        report.checked += 1;
        if rel > report.max_rel_err || report.worst.is_none() {
            report.max_rel_err = report.max_rel_err.max(rel);
            report.worst = Some((id, k, a, num));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::tensor::Tensor;

    #[test]
    fn clamp_at_boundary_is_excluded() {
        let mut s = ParamStore::new();
        // relu(x) is the lower clamp at zero; x = 0 sits on the boundary
        let x = s.insert("x", Tensor::row(vec![0.0, 1.0]));
        let r = finite_diff_check(&s, &[x], 1e-5, 0, |t| {
            let v = t.param(x);
            let y = t.relu(v);
            t.sum_all(y)
        })
        .unwrap();
        assert_eq!(r.excluded, vec![(x, 0)]);
        assert_eq!(r.checked, 1);
        assert!(r.max_rel_err < 1e-9);
    }

    #[test]
    fn kinks_near_the_point_are_excluded() {
        for frac in [0.1, 1.0 / 3.0, 0.25, 0.5, 0.7, 0.99] {
            let mut s = ParamStore::new();
            let x = s.insert("x", Tensor::scalar(frac * 1e-5));
            let r = finite_diff_check(&s, &[x], 1e-5, 0, |t| {
                let v = t.param(x);
                let y = t.relu(v);
                t.sum_all(y)
            })
            .unwrap();
            assert_eq!(r.excluded.len(), 1, "offset {frac}");
        }
    }

    #[test]
    fn smooth_composite_at_eps_1e5() {
        let mut s = ParamStore::new();
        let x = s.insert("x", Tensor::row(vec![0.3, -0.7, 1.1]));
        let r = finite_diff_check(&s, &[x], 1e-5, 0, |t| {
            let v = t.param(x);
            let e = t.exp(v);
            let sp = t.softplus(e);
            let sq = t.square(sp);
            t.sum_all(sq)
        })
        .unwrap();
        assert!(r.excluded.is_empty());
        assert!(r.max_rel_err < 1e-6, "{r:?}");
    }

    #[test]
    fn detects_a_wrong_gradient() {
        use crate::diff::tape::CustomOp;
        use std::sync::Arc;
        // doubles its input but claims a derivative of 3
        struct Wrong;
        impl CustomOp for Wrong {
            fn name(&self) -> &'static str {
                "wrong"
            }
            fn forward(&self, i: &[&Tensor]) -> Tensor {
                i[0].map(|v| 2.0 * v)
            }
            fn backward(&self, _: &[&Tensor], _: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
                vec![Some(g.map(|v| 3.0 * v))]
            }
        }
        let mut s = ParamStore::new();
        let x = s.insert("x", Tensor::scalar(0.4));
        let op: Arc<dyn CustomOp> = Arc::new(Wrong);
        let r = finite_diff_check(&s, &[x], 1e-5, 0, |t| {
            let v = t.param(x);
            let y = t.custom(op.clone(), &[v]);
            t.sum_all(y)
        })
        .unwrap();
        assert!((r.max_rel_err - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn subsamples_large_params() {
        let mut s = ParamStore::new();
        let x = s.insert("x", Tensor::filled(40, 40, 0.5));
        let r = finite_diff_check(&s, &[x], 1e-5, 9, |t| {
            let v = t.param(x);
            let y = t.square(v);
            t.sum_all(y)
        })
        .unwrap();
        assert_eq!(r.checked + r.excluded.len(), MAX_COORDS);
    }
}
