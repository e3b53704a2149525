//! Reverse-mode differentiation over whole-tensor operations.
//!
//! A [`Tape`] records every operation as a node holding its output value.
//! [`Tape::backward`] walks the nodes in reverse and accumulates gradients
//! into leaves created with [`Tape::param`]. Leaf gradients persist across
//! `backward` calls until [`Tape::zero_grad`].
//!
//! Binary element-wise operations broadcast: each dimension of either
//! operand must match the output or be 1.

use super::conv::{self, Padding};
use super::linalg::SquareMatrix;
use super::tensor::{numel, Shape, Tensor};
use crate::error::{NcsrError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    Exp(Var),
    Sigmoid(Var),
    LeakyRelu(Var, f64),
    Square(Var),
    Conv {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: Padding,
    },
    Concat(Vec<Var>),
    Slice {
        x: Var,
        start: usize,
    },
    Squeeze(Var),
    Unsqueeze(Var),
    Upsample(Var, usize),
    SumBatch(Var),
    SumAll(Var),
    LogAbsDet {
        w: Var,
        inv_t: Tensor,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    leaf_grads: Vec<Option<Tensor>>,
}

fn broadcast_shape(a: Shape, b: Shape) -> Option<Shape> {
    let mut out = [0; 4];
    for d in 0..4 {
        out[d] = match (a[d], b[d]) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

fn strides_for(src: Shape, out: Shape) -> [usize; 4] {
    let natural = [src[1] * src[2] * src[3], src[2] * src[3], src[3], 1];
    let mut s = [0; 4];
    for d in 0..4 {
        s[d] = if src[d] == 1 && out[d] != 1 { 0 } else { natural[d] };
    }
    s
}

/// Broadcast `t` up to `out`.
fn expand(t: &Tensor, out: Shape) -> Tensor {
    if t.shape() == out {
        return t.clone();
    }
    let s = strides_for(t.shape(), out);
    let src = t.data();
    let mut data = Vec::with_capacity(numel(&out));
    for n in 0..out[0] {
        for c in 0..out[1] {
            for y in 0..out[2] {
                let base = n * s[0] + c * s[1] + y * s[2];
                for x in 0..out[3] {
                    data.push(src[base + x * s[3]]);
                }
            }
        }
    }
    Tensor::from_vec(out, data).expect("expand preserves element count")
}

/// Sum `g` down to `target` over broadcast dimensions.
fn reduce_to(g: Tensor, target: Shape) -> Tensor {
    let out = g.shape();
    if out == target {
        return g;
    }
    let s = strides_for(target, out);
    let mut acc = Tensor::zeros(target);
    let dst = acc.data_mut();
    let mut i = 0;
    let gd = g.data();
    for n in 0..out[0] {
        for c in 0..out[1] {
            for y in 0..out[2] {
                let base = n * s[0] + c * s[1] + y * s[2];
                for x in 0..out[3] {
                    dst[base + x * s[3]] += gd[i];
                    i += 1;
                }
            }
        }
    }
    acc
}

fn zip_broadcast(a: &Tensor, b: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    let out = broadcast_shape(a.shape(), b.shape()).ok_or_else(|| NcsrError::shape(op, &a.shape(), &b.shape()))?;
    if a.shape() == out && b.shape() == out {
        return a.zip_map(b, f);
    }
    let ea = expand(a, out);
    let eb = expand(b, out);
    ea.zip_map(&eb, f)
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(existing) => {
            for (e, v) in existing.data_mut().iter_mut().zip(g.data()) {
                *e += v;
            }
        }
        None => *slot = Some(g),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Leaf that receives gradients.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.leaf_grads[v.0].as_ref()
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.iter_mut().for_each(|g| *g = None);
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = zip_broadcast(self.value(a), self.value(b), "add", |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = zip_broadcast(self.value(a), self.value(b), "sub", |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = zip_broadcast(self.value(a), self.value(b), "mul", |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    /// `scale * x + shift` for scalar constants.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let v = self.value(x).map(|t| scale * t + shift);
        let rg = self.rg(x);
        self.push(v, Op::Affine(x, scale), rg)
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        self.affine(x, k, 0.0)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.affine(x, -1.0, 0.0)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::exp);
        let rg = self.rg(x);
        self.push(v, Op::Exp(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|t| 1.0 / (1.0 + (-t).exp()));
        let rg = self.rg(x);
        self.push(v, Op::Sigmoid(x), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.leaky_relu(x, 0.0)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let v = self.value(x).map(|t| if t > 0.0 { t } else { slope * t });
        let rg = self.rg(x);
        self.push(v, Op::LeakyRelu(x, slope), rg)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|t| t * t);
        let rg = self.rg(x);
        self.push(v, Op::Square(x), rg)
    }

    /// Convolution with weight `(C_out, C_in, kH, kW)` and bias `(1, C_out, 1, 1)`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, stride: usize, padding: Padding) -> Result<Var> {
        let v = conv::forward(self.value(input), self.value(weight), bias.map(|b| self.value(b)), stride, padding)?;
        let rg = self.rg(input) || self.rg(weight) || bias.is_some_and(|b| self.rg(b));
        Ok(self.push(
            v,
            Op::Conv {
                input,
                weight,
                bias,
                stride,
                padding,
            },
            rg,
        ))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Tensor::concat_channels(&values)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(v, Op::Concat(parts.to_vec()), rg))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.value(x).slice_channels(start, len)?;
        let rg = self.rg(x);
        Ok(self.push(v, Op::Slice { x, start }, rg))
    }

    pub fn squeeze(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).squeeze2()?;
        let rg = self.rg(x);
        Ok(self.push(v, Op::Squeeze(x), rg))
    }

    pub fn unsqueeze(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).unsqueeze2()?;
        let rg = self.rg(x);
        Ok(self.push(v, Op::Unsqueeze(x), rg))
    }

    /// Nearest-neighbour upsampling by an integer factor.
    pub fn upsample(&mut self, x: Var, factor: usize) -> Var {
        let t = self.value(x);
        let [n, c, h, w] = t.shape();
        let v = Tensor::from_fn([n, c, h * factor, w * factor], |ni, ci, y, xx| t.at(ni, ci, y / factor, xx / factor));
        let rg = self.rg(x);
        self.push(v, Op::Upsample(x, factor), rg)
    }

    /// Per-batch-element sum: `(N, C, H, W) -> (N, 1, 1, 1)`.
    pub fn sum_batch(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let n = t.batch();
        let data = (0..n).map(|i| t.item(i).iter().sum()).collect();
        let v = Tensor::from_vec([n, 1, 1, 1], data).expect("batch sum shape");
        let rg = self.rg(x);
        self.push(v, Op::SumBatch(x), rg)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(x);
        self.push(v, Op::SumAll(x), rg)
    }

    /// `log|det W|` of a `(C, C, 1, 1)` weight viewed as a `C x C` matrix.
    pub fn logabsdet(&mut self, w: Var) -> Result<Var> {
        let t = self.value(w);
        let [co, ci, kh, kw] = t.shape();
        if co != ci || kh != 1 || kw != 1 {
            return Err(NcsrError::shape("logabsdet", &t.shape(), &[co, co, 1, 1]));
        }
        let m = SquareMatrix::new(co, t.data().to_vec())?;
        let (ld, inv) = m.logdet_and_inverse()?;
        let inv_t = Tensor::from_vec([co, co, 1, 1], inv.transpose().entries().to_vec())?;
        let rg = self.rg(w);
        Ok(self.push(Tensor::scalar(ld), Op::LogAbsDet { w, inv_t }, rg))
    }

    /// Populate leaf gradients of every parameter reachable from `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(NcsrError::InvalidArgument(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let nodes = &self.nodes;
            let val = |v: Var| &nodes[v.0].value;
            let needs = |v: Var| nodes[v.0].requires_grad;
            let send = |grads: &mut Vec<Option<Tensor>>, v: Var, t: Tensor| {
                if needs(v) {
                    accumulate(&mut grads[v.0], t);
                }
            };
            match &node.op {
                Op::Leaf => accumulate(&mut self.leaf_grads[i], g),
                Op::Add(a, b) => {
                    if needs(*a) {
                        send(&mut grads, *a, reduce_to(g.clone(), val(*a).shape()));
                    }
                    send(&mut grads, *b, reduce_to(g, val(*b).shape()));
                }
                Op::Sub(a, b) => {
                    if needs(*a) {
                        send(&mut grads, *a, reduce_to(g.clone(), val(*a).shape()));
                    }
                    if needs(*b) {
                        send(&mut grads, *b, reduce_to(g.scale(-1.0), val(*b).shape()));
                    }
                }
                Op::Mul(a, b) => {
                    let out = g.shape();
                    if needs(*a) {
                        let gb = g.zip_map(&expand(val(*b), out), |x, y| x * y)?;
                        send(&mut grads, *a, reduce_to(gb, val(*a).shape()));
                    }
                    if needs(*b) {
                        let ga = g.zip_map(&expand(val(*a), out), |x, y| x * y)?;
                        send(&mut grads, *b, reduce_to(ga, val(*b).shape()));
                    }
                }
                Op::Affine(x, k) => send(&mut grads, *x, g.scale(*k)),
                Op::Exp(x) => send(&mut grads, *x, g.zip_map(&node.value, |a, y| a * y)?),
                Op::Sigmoid(x) => send(&mut grads, *x, g.zip_map(&node.value, |a, y| a * y * (1.0 - y))?),
                Op::LeakyRelu(x, slope) => {
                    let s = *slope;
                    send(&mut grads, *x, g.zip_map(val(*x), |a, t| if t > 0.0 { a } else { s * a })?)
                }
                Op::Square(x) => send(&mut grads, *x, g.zip_map(val(*x), |a, t| 2.0 * a * t)?),
                Op::Conv {
                    input,
                    weight,
                    bias,
                    stride,
                    padding,
                } => {
                    let need = [needs(*input), needs(*weight), bias.is_some_and(needs)];
                    let cg = conv::backward(val(*input), val(*weight), &g, *stride, *padding, need)?;
                    if let Some(t) = cg.input {
                        send(&mut grads, *input, t);
                    }
                    if let Some(t) = cg.weight {
                        send(&mut grads, *weight, t);
                    }
                    if let (Some(b), Some(t)) = (bias, cg.bias) {
                        send(&mut grads, *b, t);
                    }
                }
                Op::Concat(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let len = val(p).channels();
                        if needs(p) {
                            send(&mut grads, p, g.slice_channels(start, len)?);
                        }
                        start += len;
                    }
                }
                Op::Slice { x, start } => {
                    let full = val(*x).shape();
                    let len = g.channels();
                    let mut t = Tensor::zeros(full);
                    let hw = full[2] * full[3];
                    for n in 0..full[0] {
                        let dst = (n * full[1] + start) * hw;
                        t.data_mut()[dst..dst + len * hw].copy_from_slice(&g.data()[n * len * hw..(n + 1) * len * hw]);
                    }
                    send(&mut grads, *x, t);
                }
                Op::Squeeze(x) => send(&mut grads, *x, g.unsqueeze2()?),
                Op::Unsqueeze(x) => send(&mut grads, *x, g.squeeze2()?),
                Op::Upsample(x, f) => {
                    let f = *f;
                    let mut t = Tensor::zeros(val(*x).shape());
                    let [n, c, h, w] = g.shape();
                    for ni in 0..n {
                        for ci in 0..c {
                            for y in 0..h {
                                for xx in 0..w {
                                    let o = t.offset(ni, ci, y / f, xx / f);
                                    t.data_mut()[o] += g.at(ni, ci, y, xx);
                                }
                            }
                        }
                    }
                    send(&mut grads, *x, t);
                }
                Op::SumBatch(x) => {
                    let shape = val(*x).shape();
                    let per = shape[1] * shape[2] * shape[3];
                    let data = (0..shape[0]).flat_map(|n| std::iter::repeat(g.data()[n]).take(per)).collect();
                    send(&mut grads, *x, Tensor::from_vec(shape, data)?);
                }
                Op::SumAll(x) => send(&mut grads, *x, Tensor::full(val(*x).shape(), g.data()[0])),
                Op::LogAbsDet { w, inv_t } => send(&mut grads, *w, inv_t.scale(g.data()[0])),
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    #[test]
    fn grad_of_sum_is_ones() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::from_vec([1, 1, 2, 2], vec![1.0, -2.0, 3.0, 0.5]).unwrap());
        let l = tape.sum_all(x);
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn grad_of_sum_of_squares() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::from_vec([1, 1, 1, 2], vec![1.0, 2.0]).unwrap());
        let sq = tape.square(x);
        let l = tape.sum_all(sq);
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 4.0]);
        // accumulates until zeroed
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[4.0, 8.0]);
        tape.zero_grad();
        assert!(tape.grad(x).is_none());
    }

    #[test]
    fn backward_on_non_scalar_fails() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::zeros([1, 1, 2, 2]));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn broadcast_shapes() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::full([2, 3, 2, 2], 1.0));
        let b = tape.param(Tensor::from_vec([1, 3, 1, 1], vec![1.0, 2.0, 3.0]).unwrap());
        let m = tape.mul(a, b).unwrap();
        assert_eq!(tape.shape(m), [2, 3, 2, 2]);
        let l = tape.sum_all(m);
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(b).unwrap().data(), &[8.0, 8.0, 8.0]);
        let bad = tape.constant(Tensor::zeros([1, 2, 1, 1]));
        assert!(tape.add(a, bad).is_err());
    }

    /// Central-difference check of d(sum(w * f(x)))/dx for every element-wise
    /// op and for the structural ops.
    #[test]
    fn elementwise_ops_match_finite_differences() {
        type Build = fn(&mut Tape, Var) -> Var;
        let cases: Vec<(&str, Build)> = vec![
            ("exp", |t, x| t.exp(x)),
            ("sigmoid", |t, x| t.sigmoid(x)),
            ("leaky", |t, x| t.leaky_relu(x, 0.2)),
            ("square", |t, x| t.square(x)),
            ("affine", |t, x| t.affine(x, -1.5, 0.3)),
            ("squeeze", |t, x| t.squeeze(x).unwrap()),
            ("unsqueeze", |t, x| {
                let s = t.squeeze(x).unwrap();
                let m = t.mul(s, s).unwrap();
                t.unsqueeze(m).unwrap()
            }),
            ("upsample", |t, x| t.upsample(x, 2)),
            ("slice", |t, x| t.slice_channels(x, 1, 1).unwrap()),
            ("concat", |t, x| {
                let e = t.exp(x);
                t.concat(&[x, e]).unwrap()
            }),
            ("sum_batch", |t, x| {
                let s = t.sum_batch(x);
                let q = t.square(s);
                t.mul(x, q).unwrap()
            }),
        ];
        let mut rng = Rng::seed_from_u64(77);
        for (name, build) in cases {
            for _ in 0..20 {
                let x0 = rng.gaussian([2, 2, 2, 2], 1.0).unwrap();
                let eval = |x: &Tensor| -> (f64, Option<Tensor>) {
                    let mut tape = Tape::new();
                    let xv = tape.param(x.clone());
                    let y = build(&mut tape, xv);
                    let mut wr = Rng::seed_from_u64(1);
                    let w = wr.gaussian(tape.shape(y), 1.0).unwrap();
                    let wv = tape.constant(w);
                    let p = tape.mul(y, wv).unwrap();
                    let l = tape.sum_all(p);
                    tape.backward(l).unwrap();
                    (tape.value(l).data()[0], tape.grad(xv).cloned())
                };
                let (_, g) = eval(&x0);
                let g = g.unwrap();
                let h = 1e-5;
                for i in 0..x0.numel() {
                    // skip the kink of the leaky relu
                    if name == "leaky" && x0.data()[i].abs() < 1e-3 {
                        continue;
                    }
                    let mut xp = x0.clone();
                    xp.data_mut()[i] += h;
                    let mut xm = x0.clone();
                    xm.data_mut()[i] -= h;
                    let fd = (eval(&xp).0 - eval(&xm).0) / (2.0 * h);
                    let an = g.data()[i];
                    let rel = (fd - an).abs() / (fd.abs().max(an.abs()).max(1e-3));
                    assert!(rel < 1e-4, "{name}: fd {fd} analytic {an}");
                }
            }
        }
    }

    #[test]
    fn conv_input_gradient_matches_finite_differences() {
        let mut rng = Rng::seed_from_u64(8);
        let x0 = rng.gaussian([1, 2, 4, 4], 1.0).unwrap();
        let w0 = rng.gaussian([3, 2, 3, 3], 1.0).unwrap();
        let b0 = rng.gaussian([1, 3, 1, 1], 1.0).unwrap();
        for (stride, padding) in [(1, Padding::Same), (2, Padding::Same), (1, Padding::Valid)] {
            let eval = |x: &Tensor, w: &Tensor, b: &Tensor| -> (f64, [Tensor; 3]) {
                let mut tape = Tape::new();
                let xv = tape.param(x.clone());
                let wv = tape.param(w.clone());
                let bv = tape.param(b.clone());
                let y = tape.conv2d(xv, wv, Some(bv), stride, padding).unwrap();
                let y2 = tape.square(y);
                let l = tape.sum_all(y2);
                tape.backward(l).unwrap();
                let g = [xv, wv, bv].map(|v| tape.grad(v).unwrap().clone());
                (tape.value(l).data()[0], g)
            };
            let (_, grads) = eval(&x0, &w0, &b0);
            let h = 1e-5;
            let mut max_rel: f64 = 0.0;
            for which in 0..3 {
                let base = [&x0, &w0, &b0][which];
                for i in 0..base.numel() {
                    let bump = |d: f64| {
                        let mut ts = [x0.clone(), w0.clone(), b0.clone()];
                        ts[which].data_mut()[i] += d;
                        eval(&ts[0], &ts[1], &ts[2]).0
                    };
                    let fd = (bump(h) - bump(-h)) / (2.0 * h);
                    let an = grads[which].data()[i];
                    max_rel = max_rel.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-6));
                }
            }
            assert!(max_rel < 1e-5, "stride {stride}: {max_rel}");
        }
    }

    #[test]
    fn logabsdet_gradient_is_inverse_transpose() {
        let mut rng = Rng::seed_from_u64(4);
        let mut w0 = rng.gaussian([3, 3, 1, 1], 0.3).unwrap();
        for i in 0..3 {
            w0.data_mut()[i * 3 + i] += 1.0;
        }
        let eval = |w: &Tensor| {
            let mut tape = Tape::new();
            let wv = tape.param(w.clone());
            let l = tape.logabsdet(wv).unwrap();
            tape.backward(l).unwrap();
            (tape.value(l).data()[0], tape.grad(wv).unwrap().clone())
        };
        let (_, g) = eval(&w0);
        for i in 0..9 {
            let mut p = w0.clone();
            p.data_mut()[i] += 1e-6;
            let mut m = w0.clone();
            m.data_mut()[i] -= 1e-6;
            let fd = (eval(&p).0 - eval(&m).0) / 2e-6;
            assert!((fd - g.data()[i]).abs() < 1e-7);
        }
    }
}
