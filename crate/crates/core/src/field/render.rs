//! Volumetric rendering of per-sample densities into weights and depth.

use serde::{Deserialize, Serialize};

use crate::diff::{Tape, Tensor, Var};
use crate::geometry::Point;

/// How per-sample weights are formed from transmittance and density.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightFormula {
    /// `w_i = T_i * sigma_i`.
    #[default]
    Paper,
    /// `w_i = T_i * (1 - exp(-sigma_i * delta_i))`.
    Alpha,
}

/// World-frame rays with their samples.
#[derive(Clone, Debug, PartialEq)]
pub struct RayBatch {
    pub origins: Vec<Point>,
    pub directions: Vec<Point>,
    pub depth: Vec<Option<f64>>,
    pub sky: Vec<bool>,
    /// `rays x samples` distances along each ray.
    pub t: Tensor,
    /// `rays x samples` intervals, the last repeating the previous one.
    pub delta: Tensor,
}

impl RayBatch {
    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    pub fn n_samples(&self) -> usize {
        self.t.cols
    }

    /// Sample positions `o + t d`, ray-major, as an `(rays*samples) x 3` tensor.
    pub fn points(&self) -> Tensor {
        let s = self.n_samples();
        let mut out = Tensor::zeros(self.len() * s, 3);
        for r in 0..self.len() {
            let (o, d) = (self.origins[r], self.directions[r]);
            for j in 0..s {
                let p = o + d * self.t.at(r, j);
                out.row_slice_mut(r * s + j).copy_from_slice(p.as_slice());
            }
        }
        out
    }
}

/// Taped render results, each `rays x samples` except `depth` (`rays x 1`).
#[derive(Clone, Copy, Debug)]
pub struct RenderOutput {
    pub sigma: Var,
    pub weights: Var,
    pub transmittance: Var,
    pub depth: Var,
}

/// Renders rays whose densities are the `(rays*samples) x 1` node `sigma`.
pub fn render_sigma(
    tape: &mut Tape<'_>,
    sigma: Var,
    t: &Tensor,
    delta: &Tensor,
    formula: WeightFormula,
) -> RenderOutput {
    let (rays, samples) = t.shape();
    assert_eq!(delta.shape(), t.shape(), "t and delta shapes differ");
    let sigma = tape.reshape(sigma, rays, samples);
    let dv = tape.constant(delta.clone());
    let tv = tape.constant(t.clone());
    let sd = tape.mul(sigma, dv);
    let acc = tape.exclusive_cumsum_rows(sd);
    let neg = tape.scale(acc, -1.0);
    let trans = tape.exp(neg);
    let weights = match formula {
        WeightFormula::Paper => tape.mul(trans, sigma),
        WeightFormula::Alpha => {
            let nsd = tape.scale(sd, -1.0);
            let keep = tape.exp(nsd);
            let neg_keep = tape.scale(keep, -1.0);
            let alpha = tape.add_scalar(neg_keep, 1.0);
            tape.mul(trans, alpha)
        }
    };
    let wt = tape.mul(weights, tv);
    let depth = tape.sum_rows(wt);
    RenderOutput {
        sigma,
        weights,
        transmittance: trans,
        depth,
    }
}
