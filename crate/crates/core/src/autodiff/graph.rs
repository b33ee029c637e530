//! Reverse-mode tape.
//!
//! A [`Graph`] records every operation eagerly: values are computed when an
//! op is added, and [`Graph::backward`] walks the tape once in reverse.
//! Broadcasting is limited to what the models need: "row" ops combine an
//! `n × m` tensor with a length-`m` vector applied to every row.

use std::rc::Rc;

use super::conv::ConvGeometry;
use super::tensor::{gemm, Tensor};
use crate::dist::{binary_entropy, ENTROPY_CLAMP};
use crate::special::{digamma, ln_gamma, trigamma};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Softplus(Var),
    Sigmoid(Var),
    LeakyRelu(Var, f64),
    Clamp(Var, f64, f64),
    LnGamma(Var),
    Digamma(Var),
    BinaryEntropy(Var),
    Sum(Var),
    SumRows(Var),
    RowSum(Var),
    SliceCols(Var, usize, usize),
    Reshape(Var),
    Conv2d { x: Var, w: Var, b: Var, geom: ConvGeometry },
    ConvTranspose2d { x: Var, w: Var, b: Var, geom: ConvGeometry },
    BceLogitsRows(Var, Rc<Tensor>),
    MogLogPdf { z: Var, logits: Var, means: Var, log_stds: Var },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Eagerly evaluated computation tape.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node that needed one.
#[derive(Debug)]
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn binary_entropy_grad(r: f64) -> f64 {
    let p = r.max(ENTROPY_CLAMP);
    let q = (1.0 - r).max(ENTROPY_CLAMP);
    let dp = if r > ENTROPY_CLAMP { 1.0 } else { 0.0 };
    let dq = if 1.0 - r > ENTROPY_CLAMP { 1.0 } else { 0.0 };
    -p.ln() - dp + q.ln() + dq
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that does not receive a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn leaf(&mut self, t: Tensor, needs_grad: bool) -> Var {
        self.push(t, Op::Leaf, needs_grad)
    }

    /// Copy of `v`'s value as a new constant leaf (stops gradients).
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(a).map(f);
        let ng = self.any_grad(&[a]);
        self.push(value, op, ng)
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.len(), vb.len(), "elementwise op on {:?} and {:?}", va.shape(), vb.shape());
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| f(*x, *y)).collect();
        let value = Tensor::new(va.shape().to_vec(), data);
        let ng = self.any_grad(&[a, b]);
        self.push(value, op, ng)
    }

    /// `a [n×k] · b [k×m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let (n, k) = (va.rows(), va.cols());
        assert_eq!(vb.rows(), k, "matmul {:?} x {:?}", va.shape(), vb.shape());
        let m = vb.cols();
        let mut out = vec![0.0; n * m];
        gemm(n, k, m, 1.0, va.data(), false, vb.data(), false, 0.0, &mut out);
        let ng = self.any_grad(&[a, b]);
        self.push(Tensor::matrix(n, m, out), Op::MatMul(a, b), ng)
    }

    /// Adds the vector `b` to every row of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Var {
        let (vx, vb) = (self.value(x), self.value(b));
        let m = vb.len();
        assert_eq!(vx.len() % m, 0, "add_row {:?} + {:?}", vx.shape(), vb.shape());
        let mut out = vx.clone();
        for row in out.data_mut().chunks_mut(m) {
            for (o, bb) in row.iter_mut().zip(vb.data()) {
                *o += bb;
            }
        }
        let ng = self.any_grad(&[x, b]);
        self.push(out, Op::AddRow(x, b), ng)
    }

    /// Multiplies every row of `x` elementwise by the vector `r`.
    pub fn mul_row(&mut self, x: Var, r: Var) -> Var {
        let (vx, vr) = (self.value(x), self.value(r));
        let m = vr.len();
        assert_eq!(vx.len() % m, 0, "mul_row {:?} * {:?}", vx.shape(), vr.shape());
        let mut out = vx.clone();
        for row in out.data_mut().chunks_mut(m) {
            for (o, rr) in row.iter_mut().zip(vr.data()) {
                *o *= rr;
            }
        }
        let ng = self.any_grad(&[x, r]);
        self.push(out, Op::MulRow(x, r), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Div(a, b), |x, y| x / y)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale(a, c), |x| c * x)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x + c)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a), f64::ln)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a), softplus)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(a, Op::LeakyRelu(a, slope), |x| if x > 0.0 { x } else { slope * x })
    }

    /// Clamp into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, Op::Clamp(a, lo, hi), |x| x.clamp(lo, hi))
    }

    pub fn ln_gamma(&mut self, a: Var) -> Var {
        self.unary(a, Op::LnGamma(a), ln_gamma)
    }

    pub fn digamma(&mut self, a: Var) -> Var {
        self.unary(a, Op::Digamma(a), digamma)
    }

    /// Elementwise `−r log r − (1 − r) log(1 − r)`, logs clamped at 1e-12.
    pub fn binary_entropy(&mut self, a: Var) -> Var {
        self.unary(a, Op::BinaryEntropy(a), binary_entropy)
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let ng = self.any_grad(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Column sums of an `n × m` tensor (reduces the leading dimension).
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let m = va.cols();
        let mut out = vec![0.0; m];
        for row in va.data().chunks(m) {
            for (o, x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        let ng = self.any_grad(&[a]);
        self.push(Tensor::vector(out), Op::SumRows(a), ng)
    }

    /// Per-row sums of an `n × m` tensor.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let out = va.data().chunks(va.cols()).map(|r| r.iter().sum()).collect();
        let ng = self.any_grad(&[a]);
        self.push(Tensor::vector(out), Op::RowSum(a), ng)
    }

    /// Columns `start..end` of an `n × m` tensor.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let va = self.value(a);
        let (n, m) = (va.rows(), va.cols());
        assert!(start < end && end <= m, "slice {start}..{end} of {m} columns");
        let mut out = Vec::with_capacity(n * (end - start));
        for row in va.data().chunks(m) {
            out.extend_from_slice(&row[start..end]);
        }
        let ng = self.any_grad(&[a]);
        self.push(Tensor::matrix(n, end - start, out), Op::SliceCols(a, start, end), ng)
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Var {
        let value = self.value(a).clone().reshape(shape);
        let ng = self.any_grad(&[a]);
        self.push(value, Op::Reshape(a), ng)
    }

    /// Batched convolution. `x` holds `N` images of `geom.input_len()`
    /// values; `w` is `C_out × patch_len`; `b` has `C_out` entries. Output is
    /// `N × (C_out · positions)`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, geom: ConvGeometry) -> Var {
        let (vx, vw, vb) = (self.value(x), self.value(w), self.value(b));
        let n = vx.len() / geom.input_len();
        assert_eq!(n * geom.input_len(), vx.len(), "conv2d input {:?}", vx.shape());
        let (patch, pos) = (geom.patch_len(), geom.positions());
        let c_out = vb.len();
        assert_eq!(vw.len(), c_out * patch, "conv2d weight {:?}", vw.shape());
        let mut out = vec![0.0; n * c_out * pos];
        let mut cols = vec![0.0; patch * pos];
        for i in 0..n {
            geom.im2col(&vx.data()[i * geom.input_len()..(i + 1) * geom.input_len()], &mut cols);
            let y = &mut out[i * c_out * pos..(i + 1) * c_out * pos];
            for (c, chunk) in y.chunks_mut(pos).enumerate() {
                chunk.fill(vb.data()[c]);
            }
            gemm(c_out, patch, pos, 1.0, vw.data(), false, &cols, false, 1.0, y);
        }
        let ng = self.any_grad(&[x, w, b]);
        self.push(Tensor::matrix(n, c_out * pos, out), Op::Conv2d { x, w, b, geom }, ng)
    }

    /// Batched transposed convolution, the adjoint of [`conv2d`](Self::conv2d)
    /// for the geometry of the *output* image. `x` holds `N` inputs of
    /// `C_in · positions` values; `w` is `C_in × patch_len`; `b` has
    /// `geom.channels` entries. Output is `N × geom.input_len()`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Var, geom: ConvGeometry) -> Var {
        let (vx, vw, vb) = (self.value(x), self.value(w), self.value(b));
        let (patch, pos) = (geom.patch_len(), geom.positions());
        let c_in = vw.len() / patch;
        assert_eq!(c_in * patch, vw.len(), "conv_transpose2d weight {:?}", vw.shape());
        assert_eq!(vb.len(), geom.channels);
        let n = vx.len() / (c_in * pos);
        assert_eq!(n * c_in * pos, vx.len(), "conv_transpose2d input {:?}", vx.shape());
        let len = geom.input_len();
        let hw = geom.height * geom.width;
        let mut out = vec![0.0; n * len];
        let mut cols = vec![0.0; patch * pos];
        for i in 0..n {
            let xi = &vx.data()[i * c_in * pos..(i + 1) * c_in * pos];
            gemm(patch, c_in, pos, 1.0, vw.data(), true, xi, false, 0.0, &mut cols);
            let y = &mut out[i * len..(i + 1) * len];
            for (c, chunk) in y.chunks_mut(hw).enumerate() {
                chunk.fill(vb.data()[c]);
            }
            geom.col2im(&cols, y);
        }
        let ng = self.any_grad(&[x, w, b]);
        self.push(Tensor::matrix(n, len, out), Op::ConvTranspose2d { x, w, b, geom }, ng)
    }

    /// Per-row summed Bernoulli cross-entropy between `logits` and `target`
    /// values in `[0, 1]`.
    pub fn bce_logits_rows(&mut self, logits: Var, target: Rc<Tensor>) -> Var {
        let vl = self.value(logits);
        assert_eq!(vl.len(), target.len(), "bce logits {:?} vs target {:?}", vl.shape(), target.shape());
        let m = vl.cols();
        let out = vl
            .data()
            .chunks(m)
            .zip(target.data().chunks(m))
            .map(|(l, t)| {
                l.iter()
                    .zip(t)
                    .map(|(l, t)| l.max(0.0) - l * t + (-l.abs()).exp().ln_1p())
                    .sum()
            })
            .collect();
        let ng = self.any_grad(&[logits]);
        self.push(Tensor::vector(out), Op::BceLogitsRows(logits, target), ng)
    }

    /// Per-row log density of a diagonal Gaussian mixture with weights
    /// `softmax(logits)`, component means `K × d` and log-stds `K × d`.
    pub fn mog_logpdf(&mut self, z: Var, logits: Var, means: Var, log_stds: Var) -> Var {
        let resp = self.mog_components(z, logits, means, log_stds);
        let out = resp.iter().map(|(lse, _)| *lse).collect();
        let ng = self.any_grad(&[z, logits, means, log_stds]);
        self.push(Tensor::vector(out), Op::MogLogPdf { z, logits, means, log_stds }, ng)
    }

    /// For each row: (log p(z), responsibilities γ_k).
    fn mog_components(&self, z: Var, logits: Var, means: Var, log_stds: Var) -> Vec<(f64, Vec<f64>)> {
        let (vz, vl, vm, vs) = (self.value(z), self.value(logits), self.value(means), self.value(log_stds));
        let k = vl.len();
        let d = vz.cols();
        assert_eq!(vm.len(), k * d);
        assert_eq!(vs.len(), k * d);
        let lmax = vl.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lnorm = lmax + vl.data().iter().map(|l| (l - lmax).exp()).sum::<f64>().ln();
        vz.data()
            .chunks(d)
            .map(|zr| {
                let comp: Vec<f64> = (0..k)
                    .map(|c| {
                        let mu = &vm.data()[c * d..(c + 1) * d];
                        let ls = &vs.data()[c * d..(c + 1) * d];
                        let mut acc = vl.data()[c] - lnorm;
                        for j in 0..d {
                            let u = (zr[j] - mu[j]) * (-ls[j]).exp();
                            acc += -0.5 * (LN_2PI + u * u) - ls[j];
                        }
                        acc
                    })
                    .collect();
                let cmax = comp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = cmax + comp.iter().map(|c| (c - cmax).exp()).sum::<f64>().ln();
                let gamma = comp.iter().map(|c| (c - lse).exp()).collect();
                (lse, gamma)
            })
            .collect()
    }

    /// Gradients of the one-element tensor `loss` with respect to all nodes,
    /// intermediate ones included.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(self.value(loss).len(), 1, "backward from non-scalar {:?}", self.value(loss).shape());
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::new(self.value(loss).shape().to_vec(), vec![1.0]));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let gy = match &node.op {
                Op::Leaf => continue,
                _ => match grads[i].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            self.backprop(&node.op, &node.value, &gy, &mut grads);
            grads[i] = Some(gy);
        }
        Grads { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => {
                let shape = self.nodes[v.0].value.shape().to_vec();
                *slot = Some(g.reshape(shape));
            }
        }
    }

    /// Accumulates `f(upstream, x, i)` into `a`'s gradient. `upstream` is
    /// `gy[i]` when `gy` has `a`'s length and `gy[0]` otherwise; ops that
    /// reduce read `gy` themselves.
    fn elementwise(&self, grads: &mut [Option<Tensor>], a: Var, gy: &Tensor, f: impl Fn(f64, f64, usize) -> f64) {
        if !self.nodes[a.0].needs_grad {
            return;
        }
        let va = self.value(a);
        let same = gy.len() == va.len();
        let gd = gy.data();
        let data = va
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| f(if same { gd[i] } else { gd[0] }, *x, i))
            .collect();
        self.accumulate(grads, a, Tensor::new(va.shape().to_vec(), data));
    }

    fn backprop(&self, op: &Op, y: &Tensor, gy: &Tensor, grads: &mut [Option<Tensor>]) {
        match *op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(a), self.value(b));
                let (n, k, m) = (va.rows(), va.cols(), vb.cols());
                if self.needs_grad(a) {
                    let mut da = vec![0.0; n * k];
                    gemm(n, m, k, 1.0, gy.data(), false, vb.data(), true, 0.0, &mut da);
                    self.accumulate(grads, a, Tensor::new(va.shape().to_vec(), da));
                }
                if self.needs_grad(b) {
                    let mut db = vec![0.0; k * m];
                    gemm(k, n, m, 1.0, va.data(), true, gy.data(), false, 0.0, &mut db);
                    self.accumulate(grads, b, Tensor::new(vb.shape().to_vec(), db));
                }
            }
            Op::AddRow(x, b) => {
                if self.needs_grad(x) {
                    self.accumulate(grads, x, gy.clone());
                }
                if self.needs_grad(b) {
                    let m = self.value(b).len();
                    let mut db = vec![0.0; m];
                    for row in gy.data().chunks(m) {
                        for (d, g) in db.iter_mut().zip(row) {
                            *d += g;
                        }
                    }
                    self.accumulate(grads, b, Tensor::vector(db));
                }
            }
            Op::MulRow(x, r) => {
                let (vx, vr) = (self.value(x), self.value(r));
                let m = vr.len();
                if self.needs_grad(x) {
                    let dx = gy.data().iter().enumerate().map(|(i, g)| g * vr.data()[i % m]).collect();
                    self.accumulate(grads, x, Tensor::new(vx.shape().to_vec(), dx));
                }
                if self.needs_grad(r) {
                    let mut dr = vec![0.0; m];
                    for (i, (g, xv)) in gy.data().iter().zip(vx.data()).enumerate() {
                        dr[i % m] += g * xv;
                    }
                    self.accumulate(grads, r, Tensor::vector(dr));
                }
            }
            Op::Add(a, b) => {
                self.elementwise(grads, a, gy, |g, _, _| g);
                self.elementwise(grads, b, gy, |g, _, _| g);
            }
            Op::Sub(a, b) => {
                self.elementwise(grads, a, gy, |g, _, _| g);
                self.elementwise(grads, b, gy, |g, _, _| -g);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(a).data(), self.value(b).data());
                self.elementwise(grads, a, gy, |g, _, i| g * vb[i]);
                self.elementwise(grads, b, gy, |g, _, i| g * va[i]);
            }
            Op::Div(a, b) => {
                let vb = self.value(b).data();
                let yd = y.data();
                self.elementwise(grads, a, gy, |g, _, i| g / vb[i]);
                self.elementwise(grads, b, gy, |g, _, i| -g * yd[i] / vb[i]);
            }
            Op::Scale(a, c) => self.elementwise(grads, a, gy, |g, _, _| g * c),
            Op::AddScalar(a) => self.elementwise(grads, a, gy, |g, _, _| g),
            Op::Exp(a) => {
                let yd = y.data();
                self.elementwise(grads, a, gy, |g, _, i| g * yd[i]);
            }
            Op::Log(a) => self.elementwise(grads, a, gy, |g, x, _| g / x),
            Op::Square(a) => self.elementwise(grads, a, gy, |g, x, _| 2.0 * g * x),
            Op::Softplus(a) => self.elementwise(grads, a, gy, |g, x, _| g * sigmoid(x)),
            Op::Sigmoid(a) => {
                let yd = y.data();
                self.elementwise(grads, a, gy, |g, _, i| g * yd[i] * (1.0 - yd[i]));
            }
            Op::LeakyRelu(a, slope) => {
                self.elementwise(grads, a, gy, |g, x, _| if x > 0.0 { g } else { slope * g })
            }
            Op::Clamp(a, lo, hi) => {
                self.elementwise(grads, a, gy, |g, x, _| if x > lo && x < hi { g } else { 0.0 })
            }
            Op::LnGamma(a) => self.elementwise(grads, a, gy, |g, x, _| g * digamma(x)),
            Op::Digamma(a) => self.elementwise(grads, a, gy, |g, x, _| g * trigamma(x)),
            Op::BinaryEntropy(a) => self.elementwise(grads, a, gy, |g, x, _| g * binary_entropy_grad(x)),
            Op::Sum(a) => {
                let g = gy.item();
                self.elementwise(grads, a, gy, |_, _, _| g);
            }
            Op::SumRows(a) => {
                let m = gy.len();
                let gd = gy.data();
                self.elementwise(grads, a, gy, |_, _, i| gd[i % m]);
            }
            Op::RowSum(a) => {
                let m = self.value(a).cols();
                let gd = gy.data();
                if self.needs_grad(a) {
                    let va = self.value(a);
                    let data = (0..va.len()).map(|i| gd[i / m]).collect();
                    self.accumulate(grads, a, Tensor::new(va.shape().to_vec(), data));
                }
            }
            Op::SliceCols(a, start, end) => {
                if self.needs_grad(a) {
                    let va = self.value(a);
                    let (n, m) = (va.rows(), va.cols());
                    let w = end - start;
                    let mut da = vec![0.0; n * m];
                    for r in 0..n {
                        da[r * m + start..r * m + end].copy_from_slice(&gy.data()[r * w..(r + 1) * w]);
                    }
                    self.accumulate(grads, a, Tensor::new(va.shape().to_vec(), da));
                }
            }
            Op::Reshape(a) => {
                if self.needs_grad(a) {
                    let shape = self.value(a).shape().to_vec();
                    self.accumulate(grads, a, gy.clone().reshape(shape));
                }
            }
            Op::Conv2d { x, w, b, geom } => self.backprop_conv(x, w, b, geom, gy, grads),
            Op::ConvTranspose2d { x, w, b, geom } => self.backprop_conv_t(x, w, b, geom, gy, grads),
            Op::BceLogitsRows(l, ref target) => {
                let m = self.value(l).cols();
                let gd = gy.data();
                let td = target.data();
                self.elementwise(grads, l, gy, |_, x, i| gd[i / m] * (sigmoid(x) - td[i]));
            }
            Op::MogLogPdf { z, logits, means, log_stds } => {
                self.backprop_mog(z, logits, means, log_stds, gy, grads)
            }
        }
    }

    fn backprop_conv(&self, x: Var, w: Var, b: Var, geom: ConvGeometry, gy: &Tensor, grads: &mut [Option<Tensor>]) {
        let (vx, vw, vb) = (self.value(x), self.value(w), self.value(b));
        let (patch, pos, len) = (geom.patch_len(), geom.positions(), geom.input_len());
        let c_out = vb.len();
        let n = vx.len() / len;
        let (gx, gw, gb) = (self.needs_grad(x), self.needs_grad(w), self.needs_grad(b));
        let mut dx = if gx { vec![0.0; vx.len()] } else { Vec::new() };
        let mut dw = vec![0.0; if gw { vw.len() } else { 0 }];
        let mut db = vec![0.0; c_out];
        let mut cols = vec![0.0; patch * pos];
        let mut dcols = vec![0.0; patch * pos];
        for i in 0..n {
            let dy = &gy.data()[i * c_out * pos..(i + 1) * c_out * pos];
            if gb {
                for (c, chunk) in dy.chunks(pos).enumerate() {
                    db[c] += chunk.iter().sum::<f64>();
                }
            }
            if gw {
                geom.im2col(&vx.data()[i * len..(i + 1) * len], &mut cols);
                gemm(c_out, pos, patch, 1.0, dy, false, &cols, true, 1.0, &mut dw);
            }
            if gx {
                gemm(patch, c_out, pos, 1.0, vw.data(), true, dy, false, 0.0, &mut dcols);
                geom.col2im(&dcols, &mut dx[i * len..(i + 1) * len]);
            }
        }
        if gx {
            self.accumulate(grads, x, Tensor::new(vx.shape().to_vec(), dx));
        }
        if gw {
            self.accumulate(grads, w, Tensor::new(vw.shape().to_vec(), dw));
        }
        if gb {
            self.accumulate(grads, b, Tensor::new(vb.shape().to_vec(), db));
        }
    }

    fn backprop_conv_t(&self, x: Var, w: Var, b: Var, geom: ConvGeometry, gy: &Tensor, grads: &mut [Option<Tensor>]) {
        let (vx, vw, vb) = (self.value(x), self.value(w), self.value(b));
        let (patch, pos, len) = (geom.patch_len(), geom.positions(), geom.input_len());
        let c_in = vw.len() / patch;
        let n = vx.len() / (c_in * pos);
        let hw = geom.height * geom.width;
        let (gx, gw, gb) = (self.needs_grad(x), self.needs_grad(w), self.needs_grad(b));
        let mut dx = if gx { vec![0.0; vx.len()] } else { Vec::new() };
        let mut dw = vec![0.0; if gw { vw.len() } else { 0 }];
        let mut db = vec![0.0; geom.channels];
        let mut dcols = vec![0.0; patch * pos];
        for i in 0..n {
            let dy = &gy.data()[i * len..(i + 1) * len];
            if gb {
                for (c, chunk) in dy.chunks(hw).enumerate() {
                    db[c] += chunk.iter().sum::<f64>();
                }
            }
            if gx || gw {
                geom.im2col(dy, &mut dcols);
            }
            if gx {
                gemm(c_in, patch, pos, 1.0, vw.data(), false, &dcols, false, 0.0, &mut dx[i * c_in * pos..(i + 1) * c_in * pos]);
            }
            if gw {
                let xi = &vx.data()[i * c_in * pos..(i + 1) * c_in * pos];
                gemm(c_in, pos, patch, 1.0, xi, false, &dcols, true, 1.0, &mut dw);
            }
        }
        if gx {
            self.accumulate(grads, x, Tensor::new(vx.shape().to_vec(), dx));
        }
        if gw {
            self.accumulate(grads, w, Tensor::new(vw.shape().to_vec(), dw));
        }
        if gb {
            self.accumulate(grads, b, Tensor::new(vb.shape().to_vec(), db));
        }
    }

    fn backprop_mog(&self, z: Var, logits: Var, means: Var, log_stds: Var, gy: &Tensor, grads: &mut [Option<Tensor>]) {
        let comps = self.mog_components(z, logits, means, log_stds);
        let (vz, vl, vm, vs) = (self.value(z), self.value(logits), self.value(means), self.value(log_stds));
        let k = vl.len();
        let d = vz.cols();
        let lmax = vl.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = vl.data().iter().map(|l| (l - lmax).exp()).collect();
        let wsum: f64 = w.iter().sum();
        let pi: Vec<f64> = w.iter().map(|x| x / wsum).collect();

        let mut dz = vec![0.0; vz.len()];
        let mut dl = vec![0.0; k];
        let mut dm = vec![0.0; k * d];
        let mut ds = vec![0.0; k * d];
        for (row, (_, gamma)) in comps.iter().enumerate() {
            let g = gy.data()[row];
            let zr = &vz.data()[row * d..(row + 1) * d];
            for c in 0..k {
                let wgt = g * gamma[c];
                dl[c] += g * (gamma[c] - pi[c]);
                for j in 0..d {
                    let inv_var = (-2.0 * vs.data()[c * d + j]).exp();
                    let diff = zr[j] - vm.data()[c * d + j];
                    dz[row * d + j] -= wgt * diff * inv_var;
                    dm[c * d + j] += wgt * diff * inv_var;
                    ds[c * d + j] += wgt * (diff * diff * inv_var - 1.0);
                }
            }
        }
        self.accumulate(grads, z, Tensor::new(vz.shape().to_vec(), dz));
        self.accumulate(grads, logits, Tensor::new(vl.shape().to_vec(), dl));
        self.accumulate(grads, means, Tensor::new(vm.shape().to_vec(), dm));
        self.accumulate(grads, log_stds, Tensor::new(vs.shape().to_vec(), ds));
    }
}
