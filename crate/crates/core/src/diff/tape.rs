//! Define-by-run reverse-mode tape over dense tensors.

use std::sync::Arc;

use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::{gemm, matmul, Tensor};
use crate::{Error, Result};

/// Handle to a tape node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// An operation whose forward and backward passes live outside the tape.
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &'static str;

    fn forward(&self, inputs: &[&Tensor]) -> Tensor;

    /// Gradient for each input given the output gradient. Entries whose
    /// `needs` flag is false may be `None`.
    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>>;
}

#[derive(Clone)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Softplus(Var),
    Exp(Var),
    Abs(Var),
    Square(Var),
    LnOffset(Var, f64),
    ExclusiveCumsumRows(Var),
    SumRows(Var),
    SumAll(Var),
    Reshape(Var),
    ConcatRows(Vec<Var>),
    Custom(Arc<dyn CustomOp>, Vec<Var>),
}

struct Node {
    op: Op,
    /// `None` for parameter nodes, which read straight from the store.
    value: Option<Tensor>,
    requires_grad: bool,
}

pub struct Tape<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `ln(1 + e^x)`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.max(0.0) + (-x.abs()).exp().ln_1p()
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    assert_eq!(a.shape(), b.shape(), "elementwise shape mismatch");
    Tensor {
        rows: a.rows,
        cols: a.cols,
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(t) => t.add_assign(&g),
        None => *slot = Some(g),
    }
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.store.value(*id),
            _ => unreachable!("node without a value"),
        }
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value: Some(value),
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn unary(&mut self, x: Var, op: Op, value: Tensor) -> Var {
        let rg = self.requires_grad(x);
        self.push(op, value, rg)
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, value: Tensor) -> Var {
        let rg = self.requires_grad(a) || self.requires_grad(b);
        self.push(op, value, rg)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Constant, t, false)
    }

    /// Trainable parameter leaf.
    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Parameter leaf that receives no gradient.
    pub fn param_frozen(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = matmul(self.value(a), self.value(b));
        self.binary(a, b, Op::MatMul(a, b), out)
    }

    /// `x + b` with the `1 x c` row `b` broadcast over the rows of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Var {
        let (xv, bv) = (self.value(x), self.value(b));
        assert_eq!((1, xv.cols), bv.shape(), "add_row expects a 1 x cols bias");
        let mut out = xv.clone();
        for r in 0..out.rows {
            for (o, bb) in out.row_slice_mut(r).iter_mut().zip(&bv.data) {
                *o += bb;
            }
        }
        self.binary(x, b, Op::AddRow(x, b), out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = zip_map(self.value(a), self.value(b), |x, y| x + y);
        self.binary(a, b, Op::Add(a, b), out)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = zip_map(self.value(a), self.value(b), |x, y| x - y);
        self.binary(a, b, Op::Sub(a, b), out)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = zip_map(self.value(a), self.value(b), |x, y| x * y);
        self.binary(a, b, Op::Mul(a, b), out)
    }

    /// Scales row `r` of `x` by `s[r]`, with `s` an `n x 1` column.
    pub fn mul_col(&mut self, x: Var, s: Var) -> Var {
        let (xv, sv) = (self.value(x), self.value(s));
        assert_eq!((xv.rows, 1), sv.shape(), "mul_col expects an n x 1 column");
        let mut out = xv.clone();
        for r in 0..out.rows {
            let k = sv.data[r];
            out.row_slice_mut(r).iter_mut().for_each(|o| *o *= k);
        }
        self.binary(x, s, Op::MulCol(x, s), out)
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let out = self.value(x).map(|v| v * k);
        self.unary(x, Op::Scale(x, k), out)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v + c);
        self.unary(x, Op::AddScalar(x), out)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        self.unary(x, Op::Relu(x), out)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let out = self.value(x).map(softplus);
        self.unary(x, Op::Softplus(x), out)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::exp);
        self.unary(x, Op::Exp(x), out)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::abs);
        self.unary(x, Op::Abs(x), out)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v * v);
        self.unary(x, Op::Square(x), out)
    }

    /// `ln(x + c)`.
    pub fn ln_offset(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| (v + c).ln());
        self.unary(x, Op::LnOffset(x, c), out)
    }

    /// Per row: `out[j] = sum_{i<j} x[i]`.
    pub fn exclusive_cumsum_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut out = Tensor::zeros(xv.rows, xv.cols);
        for r in 0..xv.rows {
            let src = xv.row_slice(r);
            let dst = out.row_slice_mut(r);
            let mut acc = 0.0;
            for (d, s) in dst.iter_mut().zip(src) {
                *d = acc;
                acc += s;
            }
        }
        self.unary(x, Op::ExclusiveCumsumRows(x), out)
    }

    /// Row sums as an `n x 1` column.
    pub fn sum_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = (0..xv.rows).map(|r| xv.row_slice(r).iter().sum()).collect();
        self.unary(x, Op::SumRows(x), Tensor::column(data))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.unary(x, Op::SumAll(x), Tensor::scalar(s))
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1) as f64;
        let s = self.sum_all(x);
        self.scale(s, 1.0 / n)
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.len(), rows * cols, "reshape changes element count");
        let out = Tensor::from_vec(rows, cols, xv.data.clone());
        self.unary(x, Op::Reshape(x), out)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.cols, cols, "concat_rows column mismatch");
            data.extend_from_slice(&v.data);
            rows += v.rows;
        }
        let rg = parts.iter().any(|&p| self.requires_grad(p));
        self.push(
            Op::ConcatRows(parts.to_vec()),
            Tensor::from_vec(rows, cols, data),
            rg,
        )
    }

    pub fn custom(&mut self, op: Arc<dyn CustomOp>, inputs: &[Var]) -> Var {
        let out = {
            let vals: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
            op.forward(&vals)
        };
        let rg = inputs.iter().any(|&v| self.requires_grad(v));
        self.push(Op::Custom(op, inputs.to_vec()), out, rg)
    }

    /// Reverse sweep from a `1 x 1` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got {}x{}",
                lv.rows, lv.cols
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        let mut out = Gradients {
            grads: vec![None; self.store.len()],
        };
        if !self.nodes[loss.0].requires_grad {
            return Ok(out);
        }
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let rg = |v: &Var| self.nodes[v.0].requires_grad;
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => accumulate(&mut out.grads[id.0], g),
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if rg(a) {
                        // g [m x n] * b^T [n x k]
                        let mut ga = Tensor::zeros(av.rows, av.cols);
                        gemm(
                            g.rows,
                            g.cols,
                            bv.rows,
                            &g.data,
                            (g.cols as isize, 1),
                            &bv.data,
                            (1, bv.cols as isize),
                            0.0,
                            &mut ga.data,
                            (ga.cols as isize, 1),
                        );
                        accumulate(&mut grads[a.0], ga);
                    }
                    if rg(b) {
                        // a^T [k x m] * g [m x n]
                        let mut gb = Tensor::zeros(bv.rows, bv.cols);
                        gemm(
                            av.cols,
                            av.rows,
                            g.cols,
                            &av.data,
                            (1, av.cols as isize),
                            &g.data,
                            (g.cols as isize, 1),
                            0.0,
                            &mut gb.data,
                            (gb.cols as isize, 1),
                        );
                        accumulate(&mut grads[b.0], gb);
                    }
                }
                Op::AddRow(x, b) => {
                    if rg(b) {
                        let mut gb = Tensor::zeros(1, g.cols);
                        for r in 0..g.rows {
                            for (s, v) in gb.data.iter_mut().zip(g.row_slice(r)) {
                                *s += v;
                            }
                        }
                        accumulate(&mut grads[b.0], gb);
                    }
                    if rg(x) {
                        accumulate(&mut grads[x.0], g);
                    }
                }
                Op::Add(a, b) => {
                    if rg(a) && rg(b) {
                        accumulate(&mut grads[a.0], g.clone());
                        accumulate(&mut grads[b.0], g);
                    } else if rg(a) {
                        accumulate(&mut grads[a.0], g);
                    } else {
                        accumulate(&mut grads[b.0], g);
                    }
                }
                Op::Sub(a, b) => {
                    if rg(b) {
                        accumulate(&mut grads[b.0], g.map(|v| -v));
                    }
                    if rg(a) {
                        accumulate(&mut grads[a.0], g);
                    }
                }
                Op::Mul(a, b) => {
                    if rg(a) {
                        accumulate(&mut grads[a.0], zip_map(&g, self.value(*b), |x, y| x * y));
                    }
                    if rg(b) {
                        accumulate(&mut grads[b.0], zip_map(&g, self.value(*a), |x, y| x * y));
                    }
                }
                Op::MulCol(x, s) => {
                    let (xv, sv) = (self.value(*x), self.value(*s));
                    if rg(s) {
                        let data = (0..g.rows)
                            .map(|r| {
                                g.row_slice(r)
                                    .iter()
                                    .zip(xv.row_slice(r))
                                    .map(|(a, b)| a * b)
                                    .sum()
                            })
                            .collect();
                        accumulate(&mut grads[s.0], Tensor::column(data));
                    }
                    if rg(x) {
                        let mut gx = g;
                        for r in 0..gx.rows {
                            let k = sv.data[r];
                            gx.row_slice_mut(r).iter_mut().for_each(|v| *v *= k);
                        }
                        accumulate(&mut grads[x.0], gx);
                    }
                }
                Op::Scale(x, k) => accumulate(&mut grads[x.0], g.map(|v| v * k)),
                Op::AddScalar(x) | Op::Reshape(x) => {
                    let xv = self.value(*x);
                    accumulate(&mut grads[x.0], Tensor::from_vec(xv.rows, xv.cols, g.data));
                }
                Op::Relu(x) => {
                    let gx = zip_map(&g, self.value(*x), |g, x| if x > 0.0 { g } else { 0.0 });
                    accumulate(&mut grads[x.0], gx);
                }
                Op::Softplus(x) => {
                    let gx = zip_map(&g, self.value(*x), |g, x| g * sigmoid(x));
                    accumulate(&mut grads[x.0], gx);
                }
                Op::Exp(x) => {
                    let gx = zip_map(&g, node.value.as_ref().unwrap(), |g, y| g * y);
                    accumulate(&mut grads[x.0], gx);
                }
                Op::Abs(x) => {
                    let gx = zip_map(&g, self.value(*x), |g, x| g * x.signum() * (x != 0.0) as u8 as f64);
                    accumulate(&mut grads[x.0], gx);
                }
                Op::Square(x) => {
                    let gx = zip_map(&g, self.value(*x), |g, x| 2.0 * g * x);
                    accumulate(&mut grads[x.0], gx);
                }
                Op::LnOffset(x, c) => {
                    let gx = zip_map(&g, self.value(*x), |g, x| g / (x + c));
                    accumulate(&mut grads[x.0], gx);
                }
                Op::ExclusiveCumsumRows(x) => {
                    let mut gx = Tensor::zeros(g.rows, g.cols);
                    for r in 0..g.rows {
                        let src = g.row_slice(r);
                        let dst = gx.row_slice_mut(r);
                        let mut acc = 0.0;
                        for j in (0..src.len()).rev() {
                            dst[j] = acc;
                            acc += src[j];
                        }
                    }
                    accumulate(&mut grads[x.0], gx);
                }
                Op::SumRows(x) => {
                    let xv = self.value(*x);
                    let mut gx = Tensor::zeros(xv.rows, xv.cols);
                    for r in 0..xv.rows {
                        let k = g.data[r];
                        gx.row_slice_mut(r).iter_mut().for_each(|v| *v = k);
                    }
                    accumulate(&mut grads[x.0], gx);
                }
                Op::SumAll(x) => {
                    let xv = self.value(*x);
                    accumulate(&mut grads[x.0], Tensor::filled(xv.rows, xv.cols, g.data[0]));
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let pv = self.value(*p);
                        let n = pv.len();
                        if rg(p) {
                            let slice = g.data[offset..offset + n].to_vec();
                            accumulate(&mut grads[p.0], Tensor::from_vec(pv.rows, pv.cols, slice));
                        }
                        offset += n;
                    }
                }
                Op::Custom(op, inputs) => {
                    let vals: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
                    let needs: Vec<bool> = inputs.iter().map(rg).collect();
                    let outs = op.backward(&vals, node.value.as_ref().unwrap(), &g, &needs);
                    for (k, gi) in outs.into_iter().enumerate() {
                        if let (Some(gi), true) = (gi, needs[k]) {
                            assert_eq!(
                                gi.shape(),
                                vals[k].shape(),
                                "{} returned a gradient of the wrong shape",
                                op.name()
                            );
                            accumulate(&mut grads[inputs[k].0], gi);
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::gradcheck::finite_diff_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    #[test]
    fn square_gradient_at_three() {
        let mut s = ParamStore::new();
        let th = s.insert("theta", Tensor::scalar(3.0));
        let mut t = Tape::new(&s);
        let x = t.param(th);
        let y = t.square(x);
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(th).unwrap().item(), 6.0);
    }

    #[test]
    fn non_scalar_loss_is_a_contract_error() {
        let mut s = ParamStore::new();
        let th = s.insert("theta", Tensor::zeros(2, 1));
        let t = {
            let mut t = Tape::new(&s);
            let x = t.param(th);
            t.backward(x).map(|_| ())
        };
        assert!(matches!(t, Err(Error::Contract(_))));
    }

    #[test]
    fn frozen_params_get_no_gradient() {
        let mut s = ParamStore::new();
        let a = s.insert("a", Tensor::scalar(2.0));
        let b = s.insert("b", Tensor::scalar(5.0));
        let mut t = Tape::new(&s);
        let (va, vb) = (t.param(a), t.param_frozen(b));
        let y = t.mul(va, vb);
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(a).unwrap().item(), 5.0);
        assert!(g.get(b).is_none());
    }

    #[test]
    fn dense_softplus_layer_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut s = ParamStore::new();
        let w = s.insert("w", random(&mut rng, 4, 3));
        let b = s.insert("b", random(&mut rng, 1, 3));
        let x = random(&mut rng, 5, 4);
        let report = finite_diff_check(&s, &[w, b], 1e-6, 0, |t| {
            let xv = t.constant(x.clone());
            let (wv, bv) = (t.param(w), t.param(b));
            let h = t.matmul(xv, wv);
            let h = t.add_row(h, bv);
            let y = t.softplus(h);
            t.sum_all(y)
        })
        .unwrap();
        assert!(report.max_rel_err < 1e-6, "{report:?}");
    }

    #[test]
    fn every_elementwise_op_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut s = ParamStore::new();
        let a = s.insert("a", random(&mut rng, 3, 4));
        let b = s.insert("b", random(&mut rng, 3, 4));
        let c = s.insert("c", random(&mut rng, 3, 1).map(|v| v + 2.0));
        let report = finite_diff_check(&s, &[a, b, c], 1e-6, 1, |t| {
            let (va, vb, vc) = (t.param(a), t.param(b), t.param(c));
            let m = t.mul(va, vb);
            let d = t.sub(m, vb);
            let e = t.exp(d);
            let f = t.exclusive_cumsum_rows(e);
            let g = t.mul_col(f, vc);
            let h = t.abs(va);
            let h = t.add_scalar(h, 0.5);
            let h = t.ln_offset(h, 0.1);
            let k = t.add(g, h);
            let k = t.square(k);
            let r = t.relu(va);
            let k = t.add(k, r);
            let rows = t.sum_rows(k);
            let rows = t.reshape(rows, 1, 3);
            let cat = t.concat_rows(&[rows, rows]);
            let cat = t.scale(cat, 0.25);
            t.mean_all(cat)
        })
        .unwrap();
        assert!(report.max_rel_err < 1e-6, "{report:?}");
    }

    #[test]
    fn linear_function_is_essentially_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut s = ParamStore::new();
        let w = s.insert("w", random(&mut rng, 6, 2));
        let x = random(&mut rng, 3, 6);
        let report = finite_diff_check(&s, &[w], 1e-5, 0, |t| {
            let xv = t.constant(x.clone());
            let wv = t.param(w);
            let y = t.matmul(xv, wv);
            t.sum_all(y)
        })
        .unwrap();
        assert!(report.max_rel_err < 1e-8, "{report:?}");
    }
}
