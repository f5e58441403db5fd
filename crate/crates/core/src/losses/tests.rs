use super::*;
use crate::diff::{finite_diff_check, ParamStore};
use crate::field::{render_sigma, sample_ray, SampleStrategy, WeightFormula};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn const_render(tape: &mut Tape<'_>, w: &Tensor, t: &Tensor) -> RenderOutput {
    let weights = tape.constant(w.clone());
    let depth = Tensor::column((0..w.rows).map(|r| w.row_slice(r).iter().zip(t.row_slice(r)).map(|(a, b)| a * b).sum()).collect());
    let depth = tape.constant(depth);
    RenderOutput {
        sigma: weights,
        weights,
        transmittance: weights,
        depth,
    }
}

fn uniform_rows(rays: usize, n: usize, lo: f64, hi: f64) -> (Tensor, Tensor) {
    let s = sample_ray(lo, hi, None, SampleStrategy::Uniform, n, 0.0, None);
    let mut t = Tensor::zeros(rays, n);
    let mut d = Tensor::zeros(rays, n);
    for r in 0..rays {
        t.row_slice_mut(r).copy_from_slice(&s.t);
        d.row_slice_mut(r).copy_from_slice(&s.delta);
    }
    (t, d)
}

#[test]
fn single_sample_target_is_one() {
    assert_eq!(target_weights(&[5.0], &[0.1], 5.0, 0.5), Some(vec![1.0]));
}

#[test]
fn symmetric_samples_split_evenly() {
    let w = target_weights(&[4.8, 5.2], &[0.4, 0.4], 5.0, 0.5).unwrap();
    assert!((w[0] - 0.5).abs() < 1e-15 && (w[1] - 0.5).abs() < 1e-15);
}

#[test]
fn targets_on_64_uniform_samples() {
    let s = sample_ray(0.0, 10.0, None, SampleStrategy::Uniform, 64, 0.0, None);
    // z = 5 falls exactly between two samples; nudge it off the tie
    let z = 5.03;
    let w = target_weights(&s.t, &s.delta, z, 0.5).unwrap();
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let argmax = w.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
    let nearest = s.t.iter().enumerate().min_by(|a, b| (a.1 - z).abs().total_cmp(&(b.1 - z).abs())).unwrap().0;
    assert_eq!(argmax, nearest);
    // oracle: direct unnormalized Gaussian evaluation, renormalized
    let raw: Vec<f64> = s.t.iter().map(|t| if (t - z).abs() <= 0.5 { (-(t - z).powi(2) * 18.0).exp() } else { 0.0 }).collect();
    let z: f64 = raw.iter().sum();
    for (a, b) in w.iter().zip(&raw) {
        assert!((a - b / z).abs() < 1e-12);
    }
}

#[test]
fn empty_support_is_unsupervised() {
    assert_eq!(target_weights(&[1.0, 2.0], &[1.0, 1.0], 5.0, 0.5), None);
}

#[test]
fn identical_distributions_give_minimum_margin() {
    let cfg = LossConfig::default();
    let g = cfg.eps_min / 3.0;
    let js = js_score(&[10.0 - g, 10.0 + g], &[0.3, 0.3], 10.0, &cfg);
    assert!(js.divergence.abs() < 1e-12);
    assert_eq!(js.j_star, 0.0);
    assert_eq!(js.eps_dyn, 0.5);
}

#[test]
fn unit_gaussians_two_apart() {
    // closed form: (μ1 − μ2)² / (2σ²) each way for equal variances
    let d = symmetric_kl(10.0, 1.0, 12.0, 1.0);
    assert!((d - 2.0).abs() < 1e-12);
    let cfg = LossConfig::default();
    let j = clamp_score(d, &cfg);
    assert!((j - 2.0).abs() < 1e-12);
    assert!((cfg.eps_min * (1.0 + cfg.alpha * j) - 1.5).abs() < 1e-12);
    // the same through js_score, with goal spread 1 (eps_min = 3)
    let cfg3 = LossConfig { eps_min: 3.0, ..LossConfig::default() };
    let js = js_score(&[11.0, 13.0], &[0.5, 0.5], 10.0, &cfg3);
    assert!((js.divergence - 2.0).abs() < 1e-12);
}

#[test]
fn clamping_boundaries_are_exact() {
    let cfg = LossConfig::default();
    assert_eq!(clamp_score(50.0, &cfg), 10.0);
    assert_eq!(cfg.eps_min * (1.0 + cfg.alpha * clamp_score(50.0, &cfg)), 5.5);
    assert_eq!(clamp_score(0.999_999_999, &cfg), 0.0);
    assert_eq!(clamp_score(1.0, &cfg), 1.0);
    assert_eq!(clamp_score(10.0, &cfg), 10.0);
    assert_eq!(clamp_score(10.000_000_001, &cfg), 10.0);
}

#[test]
fn uniform_fallback_for_empty_weights() {
    let cfg = LossConfig::default();
    let js = js_score(&[1.0, 2.0, 3.0], &[0.0, -1.0, 0.0], 2.0, &cfg);
    assert!((js.mean - 2.0).abs() < 1e-12);
}

proptest! {
    #[test]
    fn margin_stays_in_range(w in proptest::collection::vec(-0.5f64..2.0, 2..40), z in 0.5f64..30.0) {
        let cfg = LossConfig::default();
        let t: Vec<f64> = (0..w.len()).map(|i| 0.3 + i as f64 * 0.8).collect();
        let js = js_score(&t, &w, z, &cfg);
        prop_assert!(js.eps_dyn >= 0.5 && js.eps_dyn <= 5.5);
        prop_assert!(js.j_star == 0.0 || (js.j_star >= cfg.js_min && js.j_star <= cfg.js_max));
    }

    #[test]
    fn targets_sum_to_one(z in 1.0f64..9.0, eps in 0.05f64..3.0, n in 2usize..100) {
        let s = sample_ray(0.3, 10.0, Some(z), SampleStrategy::DepthGuided, n, eps, None);
        if let Some(w) = target_weights(&s.t, &s.delta, z, eps) {
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        } else {
            prop_assert!(s.t.iter().all(|t| (t - z).abs() > eps));
        }
    }
}

fn eval_batch(cfg: &LossConfig, w: &Tensor, t: &Tensor, d: &Tensor, depth: &[Option<f64>], sky: &[bool]) -> (f64, Vec<RayLossTerms>) {
    let store = ParamStore::new();
    let mut tape = Tape::new(&store);
    let render = const_render(&mut tape, w, t);
    let ages = vec![0; depth.len()];
    let inp = LossInputs { t, delta: d, depth, sky, kf_age: &ages };
    let out = batch_loss(&mut tape, &render, &inp, cfg);
    (tape.value(out.total).item(), out.terms)
}

#[test]
fn perfect_weights_have_no_sight_or_opacity() {
    let cfg = LossConfig { mode: LossMode::LosL1, los_eps_init: 0.5, ..LossConfig::default() };
    let (t, d) = uniform_rows(1, 32, 0.0, 8.0);
    let tw = target_weights(t.row_slice(0), d.row_slice(0), 4.1, 0.5).unwrap();
    let (_, terms) = eval_batch(&cfg, &Tensor::row(tw), &t, &d, &[Some(4.1)], &[false]);
    assert_eq!(terms[0].sight, 0.0);
    assert!(terms[0].opacity < 1e-15);
}

#[test]
fn empty_sky_ray_costs_nothing() {
    let cfg = LossConfig::default();
    let (t, d) = uniform_rows(1, 8, 0.3, 8.0);
    let (total, terms) = eval_batch(&cfg, &Tensor::zeros(1, 8), &t, &d, &[None], &[true]);
    assert_eq!(terms[0].sky, 0.0);
    assert_eq!(total, 0.0);
}

#[test]
fn l1_sight_is_hand_summed() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = LossConfig { mode: LossMode::LosL1, ..LossConfig::default() };
    let (t, d) = uniform_rows(1, 8, 0.0, 8.0);
    let w = Tensor::row((0..8).map(|_| rng.gen_range(0.0..0.3)).collect());
    let (_, terms) = eval_batch(&cfg, &w, &t, &d, &[Some(4.2)], &[false]);
    let target = target_weights(t.row_slice(0), d.row_slice(0), 4.2, cfg.los_eps(0)).unwrap();
    let mut hand = 0.0;
    for i in 0..8 {
        hand += (target[i] - w.data[i]).abs();
    }
    assert!((terms[0].sight - hand).abs() < 1e-15);
    let mass: f64 = w.data.iter().sum();
    assert!((terms[0].opacity - (1.0 - mass).abs()).abs() < 1e-15);
}

#[test]
fn total_of_single_valid_ray() {
    let cfg = LossConfig::default();
    let term = RayLossTerms {
        kind: RayKind::Valid,
        sight: 1.0,
        opacity: 0.0,
        depth: 4.0,
        sky: 0.0,
        js: None,
        eps: 0.5,
        target_weights: vec![],
        supervised: true,
    };
    assert!((total_loss(&[term.clone()], &cfg) - 1.00002).abs() < 1e-15);
    let zero = RayLossTerms { sight: 0.0, depth: 0.0, ..term };
    assert_eq!(total_loss(&[zero], &cfg), 0.0);
}

#[test]
fn taped_total_matches_plain_total_and_duplication() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (t, d) = uniform_rows(4, 16, 0.3, 10.0);
    let w = Tensor::from_vec(4, 16, (0..64).map(|_| rng.gen_range(0.0..0.2)).collect());
    let depth = [Some(4.0), None, Some(7.5), None];
    let sky = [false, true, false, false];
    for mode in LossMode::ALL {
        let cfg = LossConfig { mode, ..LossConfig::default() };
        let (total, terms) = eval_batch(&cfg, &w, &t, &d, &depth, &sky);
        assert!((total - total_loss(&terms, &cfg)).abs() < 1e-12, "{mode}");
        let mut w2 = w.clone();
        w2.data.extend_from_slice(&w.data);
        w2.rows = 8;
        let mut t2 = t.clone();
        t2.data.extend_from_slice(&t.data);
        t2.rows = 8;
        let mut d2 = d.clone();
        d2.data.extend_from_slice(&d.data);
        d2.rows = 8;
        let depth2: Vec<_> = depth.iter().chain(&depth).copied().collect();
        let sky2: Vec<_> = sky.iter().chain(&sky).copied().collect();
        let (total2, _) = eval_batch(&cfg, &w2, &t2, &d2, &depth2, &sky2);
        assert!((total - total2).abs() < 1e-12, "{mode}");
    }
}

#[test]
fn dynamic_mode_is_los_with_its_own_margin() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (t, d) = uniform_rows(1, 24, 0.3, 10.0);
    let w = Tensor::row((0..24).map(|_| rng.gen_range(0.0..0.1)).collect());
    let js_cfg = LossConfig::default();
    let (_, js_terms) = eval_batch(&js_cfg, &w, &t, &d, &[Some(5.0)], &[false]);
    let los_cfg = LossConfig { mode: LossMode::LosL1, los_eps_init: js_terms[0].eps, los_decay_rate: 1.0, ..LossConfig::default() };
    let (_, los_terms) = eval_batch(&los_cfg, &w, &t, &d, &[Some(5.0)], &[false]);
    assert_eq!(js_terms[0].sight, los_terms[0].sight);
}

#[test]
fn los_margin_decays_to_floor() {
    let cfg = LossConfig { mode: LossMode::LosL1, ..LossConfig::default() };
    assert_eq!(cfg.los_eps(0), 2.5);
    assert!((cfg.los_eps(1) - 2.375).abs() < 1e-12);
    assert_eq!(cfg.los_eps(200), 0.5);
}

#[test]
fn mode_names_round_trip() {
    for m in LossMode::ALL {
        assert_eq!(m.as_str().parse::<LossMode>().unwrap(), m);
    }
    assert!("LOS".parse::<LossMode>().is_err());
}

/// Densities as free parameters, rendered and scored in every mode.
#[test]
fn every_mode_passes_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (rays, n) = (4, 16);
    let mut store = ParamStore::new();
    let sig = store.insert("sigma", Tensor::from_vec(rays * n, 1, (0..rays * n).map(|_| rng.gen_range(0.01..0.6)).collect()));
    let mut t = Tensor::zeros(rays, n);
    let mut d = Tensor::zeros(rays, n);
    let depth = [Some(3.0), Some(5.5), None, Some(2.0)];
    let sky = [false, false, true, false];
    for r in 0..rays {
        let s = sample_ray(0.3, 8.0, depth[r], SampleStrategy::DepthGuided, n, 1.0, Some(&mut rng));
        t.row_slice_mut(r).copy_from_slice(&s.t);
        d.row_slice_mut(r).copy_from_slice(&s.delta);
    }
    let ages = [3u32; 4];
    for formula in [WeightFormula::Paper, WeightFormula::Alpha] {
        for mode in LossMode::ALL {
            let cfg = LossConfig { mode, ..LossConfig::default() };
            let r = finite_diff_check(&store, &[sig], 1e-5, 1, |tape: &mut Tape| {
                let sv = tape.param(sig);
                let render = render_sigma(tape, sv, &t, &d, formula);
                let inp = LossInputs { t: &t, delta: &d, depth: &depth, sky: &sky, kf_age: &ages };
                batch_loss(tape, &render, &inp, &cfg).total
            })
            .unwrap();
            assert!(r.max_rel_err < 1e-4, "{mode} {formula:?} {r:?}");
            assert!(r.checked >= 60, "{mode} {r:?}");
        }
    }
}

/// Fits per-sample densities of one ray to the narrowest targets, then runs
/// one mapping update (50 Adam iterations) with the dynamic loss and with a
/// widest-margin line-of-sight loss and compares how far the weights move.
#[test]
fn converged_ray_is_disturbed_less_by_dynamic_margin() {
    let n = 48;
    let (t, d) = uniform_rows(1, n, 0.3, 10.0);
    let z = 5.0;
    let base = LossConfig::default();
    let mut store = ParamStore::new();
    let theta = store.insert("theta", Tensor::filled(n, 1, -3.0));
    let formula = WeightFormula::Alpha;
    let render_w = |store: &ParamStore, cfg: &LossConfig| {
        let mut tape = Tape::new(store);
        let th = tape.param(theta);
        let sig = tape.softplus(th);
        let render = render_sigma(&mut tape, sig, &t, &d, formula);
        let inp = LossInputs { t: &t, delta: &d, depth: &[Some(z)], sky: &[false], kf_age: &[0] };
        let out = batch_loss(&mut tape, &render, &inp, cfg);
        let w = tape.value(render.weights).clone();
        let eps = out.terms[0].eps;
        (w, tape.backward(out.total).unwrap(), eps)
    };
    let train = |store: &mut ParamStore, cfg: &LossConfig, iters: usize| {
        for _ in 0..iters {
            let (_, g, _) = render_w(store, cfg);
            store.zero_grad();
            store.accumulate(&g);
            crate::diff::adam_step(store, &Default::default(), |_| Some(0.05));
        }
    };
    let narrow = LossConfig { mode: LossMode::LosL1, los_eps_init: base.eps_min, ..base.clone() };
    train(&mut store, &narrow, 3000);
    let (w0, _, eps) = render_w(&store, &base);
    assert_eq!(eps, base.eps_min, "fit did not converge to J* = 0");
    let los = LossConfig { mode: LossMode::LosL1, los_eps_init: base.eps_dyn_max(), los_decay_rate: 1.0, ..base.clone() };
    let moved = |cfg: &LossConfig| {
        let mut s2 = store.clone();
        train(&mut s2, cfg, 50);
        let (w1, _, _) = render_w(&s2, cfg);
        w1.data.iter().zip(&w0.data).map(|(a, b)| (a - b).abs()).sum::<f64>()
    };
    let js_move = moved(&base);
    let los_move = moved(&los);
    assert!(js_move < los_move, "js {js_move} los {los_move}");
}

#[test]
fn csv_has_expected_header() {
    let rec = LossRecord { step: 10, mode: LossMode::Kl, summary: LossSummary { total: 1.5, ..Default::default() } };
    let csv = format_loss_csv(&[rec]);
    assert!(csv.starts_with("step,mode,total,sight,opacity,depth,sky,mean_eps_dyn\n10,KL,1.5,"));
}
