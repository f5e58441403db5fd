//! The learned density field: hashed feature grid, MLP and rendering.

pub mod encoding;
pub mod render;
pub mod rigid;
pub mod sampling;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use encoding::HashEncoding;
pub use render::{render_sigma, RayBatch, RenderOutput, WeightFormula};
pub use rigid::RigidTransform;
pub use sampling::{sample_ray, RaySamples, SampleStrategy, DEPTH_GUIDED_FRACTION};

use crate::diff::{CustomOp, ParamId, ParamStore, Tape, Tensor, Var};
use crate::geometry::{Aabb, Point};
use crate::{Error, Result};

pub const TABLE_NAME: &str = "grid.table";
/// Uniform half-width of the initial grid features.
pub const FEATURE_INIT: f64 = 1e-4;
/// Initial bias of the density output, before the softplus.
pub const OUTPUT_BIAS_INIT: f64 = -1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldConfig {
    pub levels: usize,
    pub base_resolution: usize,
    pub growth_factor: f64,
    pub table_size: usize,
    pub feature_dim: usize,
    pub mlp_hidden_layers: usize,
    pub mlp_width: usize,
    /// Region covered by the grid. Left empty, the run derives it from the
    /// scene.
    pub scene_bounds: Option<Aabb>,
    pub weight_formula: WeightFormula,
    /// Far sampling distance; defaults to the bounds diagonal.
    pub t_far: Option<f64>,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            levels: 4,
            base_resolution: 16,
            growth_factor: 2.0,
            table_size: 1 << 15,
            feature_dim: 2,
            mlp_hidden_layers: 2,
            mlp_width: 64,
            scene_bounds: None,
            weight_formula: WeightFormula::Paper,
            t_far: None,
        }
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("field: {m}")));
        if !self.table_size.is_power_of_two() {
            return bad("table_size must be a power of two");
        }
        if !(self.growth_factor > 1.0) {
            return bad("growth_factor must exceed 1");
        }
        if self.levels == 0 || self.base_resolution == 0 || self.feature_dim == 0 || self.mlp_width == 0 {
            return bad("levels, base_resolution, feature_dim and mlp_width must be positive");
        }
        if let Some(b) = &self.scene_bounds {
            if (0..3).any(|a| !(b.max[a] > b.min[a])) {
                return bad("scene_bounds must have positive extent on every axis");
            }
        }
        if let Some(t) = self.t_far {
            if !(t > 0.0) {
                return bad("t_far must be positive");
            }
        }
        Ok(())
    }

    pub fn bounds(&self) -> Result<Aabb> {
        self.scene_bounds
            .ok_or_else(|| Error::Config("field: scene_bounds not set".into()))
    }

    pub fn far(&self) -> Result<f64> {
        Ok(self.t_far.unwrap_or(self.bounds()?.diagonal()))
    }
}

/// Field structure bound to the tensors of one [`ParamStore`].
#[derive(Clone)]
pub struct Field {
    pub cfg: FieldConfig,
    pub encoding: Arc<HashEncoding>,
    op: Arc<dyn CustomOp>,
    table: ParamId,
    /// `(weight, bias)` per layer, the last producing the density.
    layers: Vec<(ParamId, ParamId)>,
}

impl std::fmt::Debug for Field {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Field").field("cfg", &self.cfg).finish_non_exhaustive()
    }
}

fn layer_dims(cfg: &FieldConfig, input: usize) -> Vec<(usize, usize)> {
    let mut dims = Vec::new();
    let mut fan_in = input;
    for _ in 0..cfg.mlp_hidden_layers {
        dims.push((fan_in, cfg.mlp_width));
        fan_in = cfg.mlp_width;
    }
    dims.push((fan_in, 1));
    dims
}

fn encoding_for(cfg: &FieldConfig) -> Result<HashEncoding> {
    cfg.validate()?;
    Ok(HashEncoding::new(
        cfg.levels,
        cfg.base_resolution,
        cfg.growth_factor,
        cfg.table_size,
        cfg.feature_dim,
        cfg.bounds()?,
    ))
}

impl Field {
    /// Creates freshly initialized parameters in `store`.
    pub fn init(cfg: &FieldConfig, store: &mut ParamStore, seed: u64) -> Result<Field> {
        let enc = encoding_for(cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = enc.table_rows;
        let table: Vec<f64> = (0..rows * cfg.feature_dim)
            .map(|_| rng.gen_range(-FEATURE_INIT..FEATURE_INIT))
            .collect();
        let table = store.insert(TABLE_NAME, Tensor::from_vec(rows, cfg.feature_dim, table));
        let dims = layer_dims(cfg, enc.output_dim());
        let last = dims.len() - 1;
        let mut layers = Vec::new();
        for (l, &(fan_in, fan_out)) in dims.iter().enumerate() {
            let bound = (6.0 / fan_in as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
            let b = if l == last { OUTPUT_BIAS_INIT } else { 0.0 };
            let wi = store.insert(format!("mlp.w{l}"), Tensor::from_vec(fan_in, fan_out, w));
            let bi = store.insert(format!("mlp.b{l}"), Tensor::filled(1, fan_out, b));
            layers.push((wi, bi));
        }
        Ok(Self::assemble(cfg, enc, table, layers))
    }

    /// Binds to tensors already present in `store` (e.g. from a checkpoint).
    pub fn bind(cfg: &FieldConfig, store: &ParamStore) -> Result<Field> {
        let enc = encoding_for(cfg)?;
        let find = |name: &str, shape: (usize, usize)| -> Result<ParamId> {
            let id = store
                .id(name)
                .ok_or_else(|| Error::Validation(format!("parameter {name} missing")))?;
            let got = store.value(id).shape();
            if got != shape {
                return Err(Error::Validation(format!("parameter {name} has shape {got:?}, expected {shape:?}")));
            }
            Ok(id)
        };
        let table = find(TABLE_NAME, (enc.table_rows, cfg.feature_dim))?;
        let mut layers = Vec::new();
        for (l, &(i, o)) in layer_dims(cfg, enc.output_dim()).iter().enumerate() {
            layers.push((find(&format!("mlp.w{l}"), (i, o))?, find(&format!("mlp.b{l}"), (1, o))?));
        }
        Ok(Self::assemble(cfg, enc, table, layers))
    }

    fn assemble(cfg: &FieldConfig, enc: HashEncoding, table: ParamId, layers: Vec<(ParamId, ParamId)>) -> Field {
        let encoding = Arc::new(enc);
        let op: Arc<dyn CustomOp> = encoding.clone();
        Field {
            cfg: cfg.clone(),
            encoding,
            op,
            table,
            layers,
        }
    }

    pub fn bounds(&self) -> Aabb {
        self.encoding.bounds
    }

    pub fn t_far(&self) -> f64 {
        self.cfg.t_far.unwrap_or(self.bounds().diagonal())
    }

    /// Ids of every field tensor.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.table];
        for &(w, b) in &self.layers {
            ids.push(w);
            ids.push(b);
        }
        ids
    }

    /// Density at each row of the `n x 3` node `points`, as `n x 1`.
    /// With `trainable` false the field tensors receive no gradient.
    pub fn density(&self, tape: &mut Tape<'_>, points: Var, trainable: bool) -> Var {
        let leaf = |tape: &mut Tape<'_>, id| if trainable { tape.param(id) } else { tape.param_frozen(id) };
        let table = leaf(tape, self.table);
        let mut h = tape.custom(self.op.clone(), &[points, table]);
        let last = self.layers.len() - 1;
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            let (wv, bv) = (leaf(tape, w), leaf(tape, b));
            let z = tape.matmul(h, wv);
            let z = tape.add_row(z, bv);
            h = if l == last { tape.softplus(z) } else { tape.relu(z) };
        }
        h
    }

    /// Untaped densities, evaluated in chunks.
    pub fn sigma_at(&self, store: &ParamStore, points: &[Point]) -> Vec<f64> {
        const CHUNK: usize = 8192;
        let mut out = Vec::with_capacity(points.len());
        for chunk in points.chunks(CHUNK) {
            let data: Vec<f64> = chunk.iter().flat_map(|p| [p.x, p.y, p.z]).collect();
            let mut tape = Tape::new(store);
            let pv = tape.constant(Tensor::from_vec(chunk.len(), 3, data));
            let s = self.density(&mut tape, pv, false);
            out.extend_from_slice(&tape.value(s).data);
        }
        out
    }

    /// Untaped render of a batch: `(weights, depth)`.
    pub fn render_values(&self, store: &ParamStore, batch: &RayBatch) -> (Tensor, Vec<f64>) {
        let mut tape = Tape::new(store);
        let pv = tape.constant(batch.points());
        let sigma = self.density(&mut tape, pv, false);
        let out = render_sigma(&mut tape, sigma, &batch.t, &batch.delta, self.cfg.weight_formula);
        (tape.value(out.weights).clone(), tape.value(out.depth).data.clone())
    }
}

/// Sampling used when rendering depth without a measured return.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DepthRenderConfig {
    /// Uniform samples of the first pass, which locates the surface.
    pub coarse_samples: usize,
    /// Samples of the second, depth-guided pass.
    pub fine_samples: usize,
    /// Half-width of the second pass band around the located surface.
    pub band: f64,
    pub rays_per_chunk: usize,
}

impl Default for DepthRenderConfig {
    fn default() -> Self {
        Self {
            coarse_samples: 256,
            fine_samples: 64,
            band: 0.5,
            rays_per_chunk: 128,
        }
    }
}

fn uniform_batch(origins: &[Point], dirs: &[Point], t_near: f64, t_far: f64, n: usize) -> RayBatch {
    let s = sample_ray(t_near, t_far, None, SampleStrategy::Uniform, n, 0.0, None);
    let rows = origins.len();
    let mut t = Tensor::zeros(rows, n);
    let mut d = Tensor::zeros(rows, n);
    for r in 0..rows {
        t.row_slice_mut(r).copy_from_slice(&s.t);
        d.row_slice_mut(r).copy_from_slice(&s.delta);
    }
    RayBatch {
        origins: origins.to_vec(),
        directions: dirs.to_vec(),
        depth: vec![None; rows],
        sky: vec![false; rows],
        t,
        delta: d,
    }
}

impl Field {
    /// Rendered depth per ray without using measurements: a uniform pass
    /// places the surface at the heaviest sample, then a depth-guided pass
    /// around it gives the weight-averaged depth `Σ w t / Σ w`. Normalizing
    /// keeps the estimate independent of the sample spacing, which the
    /// `paper` weights are not. Rays whose first pass carries no weight
    /// report `None`.
    pub fn render_depth(
        &self,
        store: &ParamStore,
        origins: &[Point],
        dirs: &[Point],
        t_near: f64,
        cfg: &DepthRenderConfig,
    ) -> Vec<Option<f64>> {
        let t_far = self.t_far();
        let mut out = Vec::with_capacity(origins.len());
        let step = cfg.rays_per_chunk.max(1);
        for (o, d) in origins.chunks(step).zip(dirs.chunks(step)) {
            let coarse = uniform_batch(o, d, t_near, t_far, cfg.coarse_samples);
            let (w, _) = self.render_values(store, &coarse);
            let mut fine = coarse.clone();
            fine.t = Tensor::zeros(o.len(), cfg.fine_samples);
            fine.delta = Tensor::zeros(o.len(), cfg.fine_samples);
            let mut located = Vec::with_capacity(o.len());
            for r in 0..o.len() {
                let row = w.row_slice(r);
                let (best, wmax) = row
                    .iter()
                    .enumerate()
                    .fold((0, 0.0), |acc, (j, &v)| if v > acc.1 { (j, v) } else { acc });
                let z = (wmax > 1e-6).then(|| coarse.t.at(r, best));
                let s = sample_ray(t_near, t_far, z, SampleStrategy::DepthGuided, cfg.fine_samples, cfg.band, None);
                fine.t.row_slice_mut(r).copy_from_slice(&s.t);
                fine.delta.row_slice_mut(r).copy_from_slice(&s.delta);
                located.push(z.is_some());
            }
            let (w, _) = self.render_values(store, &fine);
            for (r, ok) in located.into_iter().enumerate() {
                let row = w.row_slice(r);
                let mass: f64 = row.iter().sum();
                let wt: f64 = row.iter().zip(fine.t.row_slice(r)).map(|(a, b)| a * b).sum();
                out.push((ok && mass > 0.0).then(|| wt / mass));
            }
        }
        out
    }
}
