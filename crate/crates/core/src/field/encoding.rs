//! Multiresolution hashed feature grid with trilinear interpolation.

use crate::diff::{CustomOp, Tensor};
use crate::geometry::Aabb;

const PRIMES: [u32; 3] = [1, 2_654_435_761, 805_459_861];

#[derive(Clone, Debug, PartialEq)]
pub struct Level {
    /// Cells per axis.
    pub resolution: usize,
    /// First table row owned by this level.
    pub offset: usize,
    /// Rows owned by this level.
    pub size: usize,
    /// Whether every grid vertex has its own row (no hashing).
    pub dense: bool,
}

/// Maps points to concatenated per-level features. Points outside the
/// bounds are clamped onto the boundary.
#[derive(Clone, Debug)]
pub struct HashEncoding {
    pub levels: Vec<Level>,
    pub feature_dim: usize,
    pub bounds: Aabb,
    pub table_rows: usize,
}

struct Corners {
    rows: [usize; 8],
    weights: [f64; 8],
    /// d weight / d fractional coordinate, per corner and axis.
    dweights: [[f64; 3]; 8],
    /// d fractional coordinate / d world coordinate (0 where clamped).
    scale: [f64; 3],
}

impl HashEncoding {
    pub fn new(
        levels: usize,
        base_resolution: usize,
        growth_factor: f64,
        table_size: usize,
        feature_dim: usize,
        bounds: Aabb,
    ) -> Self {
        let mut out = Vec::with_capacity(levels);
        let mut offset = 0;
        for l in 0..levels {
            let resolution = ((base_resolution as f64) * growth_factor.powi(l as i32)).floor() as usize;
            let vertices = (resolution + 1).pow(3);
            let dense = vertices <= table_size;
            let size = if dense { vertices } else { table_size };
            out.push(Level {
                resolution,
                offset,
                size,
                dense,
            });
            offset += size;
        }
        Self {
            levels: out,
            feature_dim,
            bounds,
            table_rows: offset,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.levels.len() * self.feature_dim
    }

    #[inline]
    fn vertex_row(level: &Level, v: [usize; 3]) -> usize {
        let local = if level.dense {
            let n = level.resolution + 1;
            v[0] + n * (v[1] + n * v[2])
        } else {
            let h = (v[0] as u32).wrapping_mul(PRIMES[0])
                ^ (v[1] as u32).wrapping_mul(PRIMES[1])
                ^ (v[2] as u32).wrapping_mul(PRIMES[2]);
            (h as usize) & (level.size - 1)
        };
        level.offset + local
    }

    fn corners(&self, level: &Level, p: &[f64]) -> Corners {
        let r = level.resolution as f64;
        let mut cell = [0usize; 3];
        let mut frac = [0.0; 3];
        let mut scale = [0.0; 3];
        for a in 0..3 {
            let ext = self.bounds.max[a] - self.bounds.min[a];
            let u = (p[a] - self.bounds.min[a]) / ext;
            let inside = (0.0..=1.0).contains(&u);
            let x = u.clamp(0.0, 1.0) * r;
            let c = (x.floor() as usize).min(level.resolution - 1);
            cell[a] = c;
            frac[a] = x - c as f64;
            scale[a] = if inside { r / ext } else { 0.0 };
        }
        let mut out = Corners {
            rows: [0; 8],
            weights: [0.0; 8],
            dweights: [[0.0; 3]; 8],
            scale,
        };
        for k in 0..8 {
            let bits = [k & 1, (k >> 1) & 1, (k >> 2) & 1];
            let f: [f64; 3] = std::array::from_fn(|a| if bits[a] == 1 { frac[a] } else { 1.0 - frac[a] });
            let s: [f64; 3] = std::array::from_fn(|a| if bits[a] == 1 { 1.0 } else { -1.0 });
            out.rows[k] = Self::vertex_row(level, std::array::from_fn(|a| cell[a] + bits[a]));
            out.weights[k] = f[0] * f[1] * f[2];
            out.dweights[k] = [s[0] * f[1] * f[2], f[0] * s[1] * f[2], f[0] * f[1] * s[2]];
        }
        out
    }

    /// Untaped forward pass.
    pub fn encode(&self, points: &Tensor, table: &Tensor) -> Tensor {
        assert_eq!(points.cols, 3, "points must be n x 3");
        assert_eq!(table.shape(), (self.table_rows, self.feature_dim), "table shape");
        let fd = self.feature_dim;
        let mut out = Tensor::zeros(points.rows, self.output_dim());
        for i in 0..points.rows {
            let p = points.row_slice(i);
            let row = out.row_slice_mut(i);
            for (l, level) in self.levels.iter().enumerate() {
                let c = self.corners(level, p);
                let dst = &mut row[l * fd..(l + 1) * fd];
                for k in 0..8 {
                    let feat = table.row_slice(c.rows[k]);
                    for f in 0..fd {
                        dst[f] += c.weights[k] * feat[f];
                    }
                }
            }
        }
        out
    }
}

impl CustomOp for HashEncoding {
    fn name(&self) -> &'static str {
        "hash_encoding"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Tensor {
        self.encode(inputs[0], inputs[1])
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let (points, table) = (inputs[0], inputs[1]);
        let fd = self.feature_dim;
        let mut gp = needs[0].then(|| Tensor::zeros(points.rows, 3));
        let mut gt = needs[1].then(|| Tensor::zeros(table.rows, table.cols));
        for i in 0..points.rows {
            let p = points.row_slice(i);
            let g = grad.row_slice(i);
            let mut dp = [0.0; 3];
            for (l, level) in self.levels.iter().enumerate() {
                let c = self.corners(level, p);
                let gl = &g[l * fd..(l + 1) * fd];
                for k in 0..8 {
                    if let Some(gt) = gt.as_mut() {
                        let dst = gt.row_slice_mut(c.rows[k]);
                        for f in 0..fd {
                            dst[f] += c.weights[k] * gl[f];
                        }
                    }
                    if gp.is_some() {
                        let feat = table.row_slice(c.rows[k]);
                        let dot: f64 = (0..fd).map(|f| gl[f] * feat[f]).sum();
                        for a in 0..3 {
                            dp[a] += dot * c.dweights[k][a] * c.scale[a];
                        }
                    }
                }
            }
            if let Some(gp) = gp.as_mut() {
                gp.row_slice_mut(i).copy_from_slice(&dp);
            }
        }
        vec![gp, gt]
    }
}
