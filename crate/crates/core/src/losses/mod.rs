//! Training objectives over rendered rays.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diff::{Tape, Tensor, Var};
use crate::field::RenderOutput;
use crate::{Error, Result};

/// Offset inside the logarithm of the KL baseline.
pub const KL_LOG_OFFSET: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LossMode {
    JsDynamic,
    LosL1,
    LosL2,
    Kl,
    DepthOnly,
}

impl LossMode {
    pub const ALL: [LossMode; 5] = [
        LossMode::JsDynamic,
        LossMode::LosL1,
        LossMode::LosL2,
        LossMode::Kl,
        LossMode::DepthOnly,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            LossMode::JsDynamic => "JS_DYNAMIC",
            LossMode::LosL1 => "LOS_L1",
            LossMode::LosL2 => "LOS_L2",
            LossMode::Kl => "KL",
            LossMode::DepthOnly => "DEPTH_ONLY",
        }
    }
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossMode::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown loss mode {s:?}")))
    }
}

/// Margin decay rates of the line-of-sight baselines.
pub const DECAY_SLOW: f64 = 0.99;
pub const DECAY_MEDIUM: f64 = 0.95;
pub const DECAY_FAST: f64 = 0.85;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub eps_min: f64,
    pub alpha: f64,
    pub js_min: f64,
    pub js_max: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub mode: LossMode,
    pub los_decay_rate: f64,
    pub los_eps_init: f64,
    /// Lower bound on the spread of the predicted distribution; defaults
    /// to `eps_min / 30`.
    pub sigma_floor: Option<f64>,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            eps_min: 0.5,
            alpha: 1.0,
            js_min: 1.0,
            js_max: 10.0,
            lambda1: 5e-6,
            lambda2: 1.0,
            mode: LossMode::JsDynamic,
            los_decay_rate: DECAY_MEDIUM,
            los_eps_init: 2.5,
            sigma_floor: None,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("losses: {m}")));
        if !(self.eps_min > 0.0) {
            return bad("eps_min must be positive");
        }
        if !(0.0 <= self.js_min && self.js_min < self.js_max) {
            return bad("need 0 <= js_min < js_max");
        }
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return bad("lambda1 and lambda2 must be nonnegative");
        }
        if !(self.los_decay_rate > 0.0 && self.los_decay_rate <= 1.0) {
            return bad("los_decay_rate must lie in (0, 1]");
        }
        if !(self.alpha >= 0.0) || !(self.los_eps_init > 0.0) {
            return bad("alpha must be nonnegative and los_eps_init positive");
        }
        if let Some(s) = self.sigma_floor {
            if !(s > 0.0) {
                return bad("sigma_floor must be positive");
            }
        }
        Ok(())
    }

    pub fn sigma_floor(&self) -> f64 {
        self.sigma_floor.unwrap_or(self.eps_min / 30.0)
    }

    /// Largest margin the dynamic rule can produce.
    pub fn eps_dyn_max(&self) -> f64 {
        self.eps_min * (1.0 + self.alpha * self.js_max)
    }

    /// Shared line-of-sight margin after `kf_age` mapping updates.
    pub fn los_eps(&self, kf_age: u32) -> f64 {
        (self.los_eps_init * self.los_decay_rate.powi(kf_age as i32)).max(self.eps_min)
    }

    /// Margin used for the targets of a ray, before the rendered weights
    /// are known (the dynamic mode passes its own margin instead).
    pub fn static_eps(&self, kf_age: u32) -> f64 {
        match self.mode {
            LossMode::LosL1 | LossMode::LosL2 => self.los_eps(kf_age),
            _ => self.eps_min,
        }
    }
}

fn gaussian_pdf(x: f64, std: f64) -> f64 {
    (-(x * x) / (2.0 * std * std)).exp() / (std * (2.0 * std::f64::consts::PI).sqrt())
}

/// Discretized truncated-Gaussian targets `p_i δ_i / Σ p_j δ_j` with
/// `p = N(0, (ε/3)²)` on `|t − z| ≤ ε`. Returns `None` when no sample lies in
/// the support.
pub fn target_weights(t: &[f64], delta: &[f64], z: f64, eps: f64) -> Option<Vec<f64>> {
    let std = eps / 3.0;
    let mut w: Vec<f64> = t
        .iter()
        .zip(delta)
        .map(|(&ti, &di)| {
            if (ti - z).abs() <= eps {
                gaussian_pdf(ti - z, std) * di
            } else {
                0.0
            }
        })
        .collect();
    let sum: f64 = w.iter().sum();
    if !(sum > 0.0) {
        return None;
    }
    w.iter_mut().for_each(|v| *v /= sum);
    Some(w)
}

/// `KL(N(m1, s1²) ‖ N(m2, s2²))`.
pub fn gaussian_kl(m1: f64, s1: f64, m2: f64, s2: f64) -> f64 {
    (s2 / s1).ln() + (s1 * s1 + (m1 - m2).powi(2)) / (2.0 * s2 * s2) - 0.5
}

/// `½ [KL(G ‖ S) + KL(S ‖ G)]` for `G = N(m1, s1²)`, `S = N(m2, s2²)`.
pub fn symmetric_kl(m1: f64, s1: f64, m2: f64, s2: f64) -> f64 {
    0.5 * (gaussian_kl(m1, s1, m2, s2) + gaussian_kl(m2, s2, m1, s1))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JsScore {
    /// Symmetrized divergence between goal and predicted distributions.
    pub divergence: f64,
    /// Clamped score.
    pub j_star: f64,
    pub eps_dyn: f64,
    pub mean: f64,
    pub std: f64,
}

/// Clamps a divergence into the score used by the dynamic margin.
pub fn clamp_score(divergence: f64, cfg: &LossConfig) -> f64 {
    if divergence < cfg.js_min {
        0.0
    } else if divergence > cfg.js_max {
        cfg.js_max
    } else {
        divergence
    }
}

/// Score of the rendered weights `w` along a ray against the goal
/// `N(z, (ε_min/3)²)`, and the resulting margin `ε_min (1 + α J*)`.
pub fn js_score(t: &[f64], w: &[f64], z: f64, cfg: &LossConfig) -> JsScore {
    assert!(t.len() >= 2 && t.len() == w.len(), "js_score needs matching samples");
    let pos: Vec<f64> = w.iter().map(|&v| v.max(0.0)).collect();
    let sum: f64 = pos.iter().sum();
    let n = t.len() as f64;
    let norm: Vec<f64> = if sum < 1e-12 {
        vec![1.0 / n; t.len()]
    } else {
        pos.iter().map(|v| v / sum).collect()
    };
    let mean: f64 = norm.iter().zip(t).map(|(a, b)| a * b).sum();
    let var: f64 = norm.iter().zip(t).map(|(a, b)| a * (b - mean).powi(2)).sum();
    let std = var.sqrt().max(cfg.sigma_floor());
    let goal = cfg.eps_min / 3.0;
    let divergence = symmetric_kl(z, goal, mean, std);
    let j_star = clamp_score(divergence, cfg);
    JsScore {
        divergence,
        j_star,
        eps_dyn: cfg.eps_min * (1.0 + cfg.alpha * j_star),
        mean,
        std,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RayKind {
    /// Has a measured return.
    Valid,
    /// No return, pointing at the sky.
    Sky,
    /// No return and not sky; contributes nothing.
    Ignored,
}

/// Per-ray loss values as evaluated on the tape.
#[derive(Clone, Debug, PartialEq)]
pub struct RayLossTerms {
    pub kind: RayKind,
    pub sight: f64,
    pub opacity: f64,
    pub depth: f64,
    pub sky: f64,
    /// Score details for rays of the dynamic mode.
    pub js: Option<JsScore>,
    /// Margin of the target distribution.
    pub eps: f64,
    pub target_weights: Vec<f64>,
    /// False when no sample fell inside the target support; such rays
    /// skip the sight and opacity terms.
    pub supervised: bool,
}

/// Rays of one loss evaluation.
pub struct LossInputs<'a> {
    pub t: &'a Tensor,
    pub delta: &'a Tensor,
    pub depth: &'a [Option<f64>],
    pub sky: &'a [bool],
    /// Mapping updates seen by each ray's keyframe.
    pub kf_age: &'a [u32],
}

/// Means over the batch, the values written to loss curves.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossSummary {
    pub total: f64,
    pub sight: f64,
    pub opacity: f64,
    pub depth: f64,
    pub sky: f64,
    pub mean_eps_dyn: f64,
}

pub struct BatchLoss {
    pub total: Var,
    pub terms: Vec<RayLossTerms>,
    pub summary: LossSummary,
}

fn masked_mean(tape: &mut Tape<'_>, rows: Var, mask: &[bool], scale: f64) -> (Option<Var>, f64) {
    let n = mask.iter().filter(|&&m| m).count();
    if n == 0 {
        return (None, 0.0);
    }
    let k = 1.0 / n as f64;
    let weights = Tensor::column(mask.iter().map(|&m| if m { k } else { 0.0 }).collect());
    let mean_plain: f64 = tape
        .value(rows)
        .data
        .iter()
        .zip(&weights.data)
        .map(|(a, b)| a * b)
        .sum();
    let wv = tape.constant(weights.map(|v| v * scale));
    let prod = tape.mul(rows, wv);
    (Some(tape.sum_all(prod)), mean_plain)
}

/// Per-ray terms and the weighted total
/// `mean(sight + opacity) + λ₁ mean(depth) + λ₂ mean(sky)`, where the first
/// mean runs over supervised rays with a return, the depth mean over rays
/// with a return and the sky mean over sky rays. Empty categories count 0.
pub fn batch_loss(tape: &mut Tape<'_>, render: &RenderOutput, inp: &LossInputs<'_>, cfg: &LossConfig) -> BatchLoss {
    let (rays, s) = inp.t.shape();
    assert_eq!(inp.depth.len(), rays);
    assert_eq!(inp.sky.len(), rays);
    assert_eq!(inp.kf_age.len(), rays);
    let w = render.weights;
    let wv = tape.value(w).clone();

    let mut terms = Vec::with_capacity(rays);
    let mut targets = Tensor::zeros(rays, s);
    let mut zcol = vec![0.0; rays];
    for r in 0..rays {
        let kind = match (inp.depth[r], inp.sky[r]) {
            (Some(_), _) => RayKind::Valid,
            (None, true) => RayKind::Sky,
            (None, false) => RayKind::Ignored,
        };
        let mut term = RayLossTerms {
            kind,
            sight: 0.0,
            opacity: 0.0,
            depth: 0.0,
            sky: 0.0,
            js: None,
            eps: 0.0,
            target_weights: vec![0.0; s],
            supervised: false,
        };
        if let Some(z) = inp.depth[r] {
            zcol[r] = z;
            let eps = if cfg.mode == LossMode::JsDynamic {
                let js = js_score(inp.t.row_slice(r), wv.row_slice(r), z, cfg);
                term.js = Some(js);
                js.eps_dyn
            } else {
                cfg.static_eps(inp.kf_age[r])
            };
            term.eps = eps;
            if let Some(tw) = target_weights(inp.t.row_slice(r), inp.delta.row_slice(r), z, eps) {
                targets.row_slice_mut(r).copy_from_slice(&tw);
                term.target_weights = tw;
                term.supervised = true;
            }
        }
        terms.push(term);
    }
    let valid: Vec<bool> = terms.iter().map(|t| t.kind == RayKind::Valid).collect();
    let sky: Vec<bool> = terms.iter().map(|t| t.kind == RayKind::Sky).collect();
    let supervised: Vec<bool> = terms.iter().map(|t| t.supervised).collect();

    let mut parts: Vec<Var> = Vec::new();
    let mut summary = LossSummary::default();

    if cfg.mode != LossMode::DepthOnly {
        let sight_rows = match cfg.mode {
            LossMode::Kl => {
                // Σ w* (ln w* − ln(w + c)) with 0 ln 0 = 0
                let entropy = Tensor::column(
                    (0..rays)
                        .map(|r| targets.row_slice(r).iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum())
                        .collect(),
                );
                let logw = tape.ln_offset(w, KL_LOG_OFFSET);
                let tv = tape.constant(targets.clone());
                let cross = tape.mul(logw, tv);
                let cross = tape.sum_rows(cross);
                let ev = tape.constant(entropy);
                tape.sub(ev, cross)
            }
            _ => {
                let tv = tape.constant(targets.clone());
                let diff = tape.sub(tv, w);
                let per = if cfg.mode == LossMode::LosL2 {
                    tape.square(diff)
                } else {
                    tape.abs(diff)
                };
                tape.sum_rows(per)
            }
        };
        let mass = tape.sum_rows(w);
        let neg = tape.scale(mass, -1.0);
        let gap = tape.add_scalar(neg, 1.0);
        let opacity_rows = tape.abs(gap);
        for (r, term) in terms.iter_mut().enumerate() {
            if term.supervised {
                term.sight = tape.value(sight_rows).data[r];
                term.opacity = tape.value(opacity_rows).data[r];
            }
        }
        let (sv, sm) = masked_mean(tape, sight_rows, &supervised, 1.0);
        let (ov, om) = masked_mean(tape, opacity_rows, &supervised, 1.0);
        summary.sight = sm;
        summary.opacity = om;
        parts.extend(sv);
        parts.extend(ov);
    }

    let zv = tape.constant(Tensor::column(zcol));
    let err = tape.sub(render.depth, zv);
    let depth_rows = tape.square(err);
    let aw = tape.abs(w);
    let sky_rows = tape.sum_rows(aw);
    for (r, term) in terms.iter_mut().enumerate() {
        match term.kind {
            RayKind::Valid => term.depth = tape.value(depth_rows).data[r],
            RayKind::Sky => term.sky = tape.value(sky_rows).data[r],
            RayKind::Ignored => {}
        }
    }
    let (dv, dm) = masked_mean(tape, depth_rows, &valid, cfg.lambda1);
    let (kv, km) = masked_mean(tape, sky_rows, &sky, cfg.lambda2);
    summary.depth = dm;
    summary.sky = km;
    parts.extend(dv);
    parts.extend(kv);

    let total = match parts.split_first() {
        None => tape.constant(Tensor::scalar(0.0)),
        Some((&first, rest)) => rest.iter().fold(first, |acc, &p| tape.add(acc, p)),
    };
    summary.total = tape.value(total).item();
    let n_valid = valid.iter().filter(|&&v| v).count();
    if n_valid > 0 {
        summary.mean_eps_dyn = terms.iter().filter(|t| t.kind == RayKind::Valid).map(|t| t.eps).sum::<f64>() / n_valid as f64;
    }
    BatchLoss { total, terms, summary }
}

/// Plain-number version of the total, for checking the taped reduction.
pub fn total_loss(terms: &[RayLossTerms], cfg: &LossConfig) -> f64 {
    let mean = |vals: Vec<f64>| {
        if vals.is_empty() {
            0.0
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    };
    let js = if cfg.mode == LossMode::DepthOnly {
        0.0
    } else {
        mean(terms.iter().filter(|t| t.supervised).map(|t| t.sight + t.opacity).collect())
    };
    let depth = mean(terms.iter().filter(|t| t.kind == RayKind::Valid).map(|t| t.depth).collect());
    let sky = mean(terms.iter().filter(|t| t.kind == RayKind::Sky).map(|t| t.sky).collect());
    js + cfg.lambda1 * depth + cfg.lambda2 * sky
}

/// One row of a loss curve.
#[derive(Clone, Debug, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub mode: LossMode,
    pub summary: LossSummary,
}

pub const LOSS_CSV_HEADER: &str = "step,mode,total,sight,opacity,depth,sky,mean_eps_dyn";

pub fn format_loss_csv(records: &[LossRecord]) -> String {
    let mut out = String::from(LOSS_CSV_HEADER);
    out.push('\n');
    for r in records {
        let s = &r.summary;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.step, r.mode, s.total, s.sight, s.opacity, s.depth, s.sky, s.mean_eps_dyn
        ));
    }
    out
}

#[cfg(test)]
mod tests;
