//! Reverse-mode differentiation over a linear operation record.
//!
//! Every operation appends a node holding its output value. Nodes whose
//! inputs all skip gradients are stored as constants, so an inference pass
//! on a tape keeps no backward state.

use std::cell::RefCell;
use std::rc::Rc;

use super::kernels::{self, ConvGeom};
use super::param::{ParamId, ParamStore};
use super::real::{gemm, Real};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Unary {
    Relu,
    Sigmoid,
    Log,
    Square,
    SmoothL1,
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Shift(Var),
    MatMul(Var, Var),
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        cols: Option<Vec<T>>,
    },
    MaxPool {
        x: Var,
        arg: Vec<usize>,
    },
    Upsample(Var),
    Unary(Var, Unary),
    Bce {
        p: Var,
        targets: Vec<T>,
    },
    Softmax(Var),
    LogSoftmax(Var),
    Concat(Vec<Var>),
    Transpose(Var),
    Reshape(Var),
    Select {
        x: Var,
        indices: Vec<usize>,
    },
    Sum(Var),
    Mean(Var),
    Norm(Var),
}

struct Node<T> {
    value: Rc<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Operation record for one forward pass.
pub struct Tape<T: Real = f32> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(ParamId, Var)>,
}

impl<T: Real> Gradients<T> {
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Adds every parameter gradient into the store's gradient fields.
    pub fn accumulate_into(&self, store: &mut ParamStore<T>) {
        for &(id, var) in &self.params {
            if let Some(g) = self.wrt(var) {
                store.get_mut(id).gradient.add_assign(g);
            }
        }
    }
}

fn same_shape_or_scalar<T: Real>(a: &Tensor<T>, b: &Tensor<T>, op: &str) -> Result<Vec<usize>> {
    if a.shape() == b.shape() {
        Ok(a.shape().to_vec())
    } else if b.is_scalar() {
        Ok(a.shape().to_vec())
    } else if a.is_scalar() {
        Ok(b.shape().to_vec())
    } else {
        Err(Error::shape(format!(
            "{op}: operands {:?} and {:?} differ and neither is a scalar",
            a.shape(),
            b.shape()
        )))
    }
}

fn broadcast_get<T: Real>(t: &Tensor<T>, i: usize) -> T {
    if t.is_scalar() {
        t.data()[0]
    } else {
        t.data()[i]
    }
}

/// Reduces an output-shaped gradient back onto a possibly-scalar operand.
fn unbroadcast<T: Real>(grad: Tensor<T>, operand: &Tensor<T>) -> Tensor<T> {
    if operand.shape() == grad.shape() {
        grad
    } else {
        Tensor::from_parts(operand.shape().to_vec(), vec![grad.data().iter().copied().sum()])
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn bce_eps<T: Real>() -> T {
    T::from_f64_lossy(1e-7)
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let op = if requires_grad { op } else { Op::Leaf };
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
            param: None,
        });
        Var(nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.0].requires_grad)
    }

    pub fn value(&self, v: Var) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    /// Records a constant input.
    pub fn constant(&self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Records an input that receives a gradient.
    pub fn variable(&self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records a trainable parameter; its gradient is routed back to the
    /// store by [`Gradients::accumulate_into`].
    pub fn param(&self, store: &ParamStore<T>, id: ParamId) -> Var {
        let v = self.push(store.get(id).value.clone(), Op::Leaf, true);
        self.nodes.borrow_mut()[v.0].param = Some(id);
        v
    }

    /// Records a parameter value without gradient tracking.
    pub fn frozen_param(&self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.constant(store.get(id).value.clone())
    }

    /// Same value, cut from the gradient path.
    pub fn detach(&self, v: Var) -> Var {
        let value = (*self.value(v)).clone();
        self.constant(value)
    }

    fn binary(&self, a: Var, b: Var, name: &str, f: impl Fn(T, T) -> T) -> Result<(Tensor<T>, bool)> {
        let (va, vb) = (self.value(a), self.value(b));
        let shape = same_shape_or_scalar(&va, &vb, name)?;
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|i| f(broadcast_get(&va, i), broadcast_get(&vb, i)))
            .collect();
        Ok((Tensor::from_parts(shape, data), self.rg(&[a, b])))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let (out, rg) = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let (out, rg) = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let (out, rg) = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    /// Multiplies by a constant.
    pub fn scale(&self, x: Var, c: T) -> Var {
        let out = self.value(x).map(|v| v * c);
        self.push(out, Op::Scale(x, c), self.rg(&[x]))
    }

    /// Adds a constant.
    pub fn shift(&self, x: Var, c: T) -> Var {
        let out = self.value(x).map(|v| v + c);
        self.push(out, Op::Shift(x), self.rg(&[x]))
    }

    /// Matrix product of `[m, k]` and `[k, n]`.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let (sa, sb) = (va.shape(), vb.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape(format!("matmul: {sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        gemm(m, k, n, va.data(), false, vb.data(), false, &mut out, false);
        let t = Tensor::from_parts(vec![m, n], out);
        Ok(self.push(t, Op::MatMul(a, b), self.rg(&[a, b])))
    }

    /// 2-D convolution of a `[C, H, W]` input with `[C_out, C, k, k]`
    /// weights and optional `[C_out]` bias. Zero "same" padding (`k / 2`);
    /// `k` must be odd, stride 1 or 2.
    pub fn conv2d(&self, x: Var, w: Var, b: Option<Var>, stride: usize) -> Result<Var> {
        let (vx, vw) = (self.value(x), self.value(w));
        let (sx, sw) = (vx.shape(), vw.shape());
        if sx.len() != 3 || sw.len() != 4 || sw[1] != sx[0] || sw[2] != sw[3] || sw[2] % 2 == 0 {
            return Err(Error::shape(format!("conv2d: input {sx:?}, weight {sw:?}")));
        }
        if stride != 1 && stride != 2 {
            return Err(Error::Invalid(format!("conv2d: unsupported stride {stride}")));
        }
        let c_out = sw[0];
        let geom = ConvGeom {
            channels: sx[0],
            height: sx[1],
            width: sx[2],
            kernel: sw[2],
            stride,
            pad: sw[2] / 2,
        };
        if let Some(b) = b {
            let sb = self.shape(b);
            if sb != [c_out] {
                return Err(Error::shape(format!("conv2d: bias {sb:?} for {c_out} outputs")));
            }
        }
        let p = geom.out_pixels();
        let cols = if geom.is_pointwise() {
            None
        } else {
            Some(kernels::im2col(vx.data(), &geom))
        };
        let col_data: &[T] = cols.as_deref().unwrap_or(vx.data());
        let mut out = vec![T::zero(); c_out * p];
        gemm(c_out, geom.col_rows(), p, vw.data(), false, col_data, false, &mut out, false);
        if let Some(b) = b {
            let vb = self.value(b);
            for (row, &bias) in out.chunks_mut(p).zip(vb.data()) {
                row.iter_mut().for_each(|v| *v += bias);
            }
        }
        let t = Tensor::from_parts(vec![c_out, geom.out_height(), geom.out_width()], out);
        let mut inputs = vec![x, w];
        inputs.extend(b);
        let rg = self.rg(&inputs);
        Ok(self.push(
            t,
            Op::Conv {
                x,
                w,
                b,
                geom,
                cols: if rg { cols } else { None },
            },
            rg,
        ))
    }

    /// 2x2 max-pool, stride 2, over `[C, H, W]` with even `H`, `W`.
    pub fn maxpool2(&self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let s = vx.shape();
        if s.len() != 3 || s[1] % 2 != 0 || s[2] % 2 != 0 {
            return Err(Error::shape(format!("maxpool2: {s:?}")));
        }
        let (out, arg) = kernels::maxpool2(vx.data(), s[0], s[1], s[2]);
        let t = Tensor::from_parts(vec![s[0], s[1] / 2, s[2] / 2], out);
        Ok(self.push(t, Op::MaxPool { x, arg }, self.rg(&[x])))
    }

    /// Nearest-neighbour x2 upsampling over `[C, H, W]`.
    pub fn upsample2(&self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let s = vx.shape();
        if s.len() != 3 {
            return Err(Error::shape(format!("upsample2: {s:?}")));
        }
        let out = kernels::upsample2(vx.data(), s[0], s[1], s[2]);
        let t = Tensor::from_parts(vec![s[0], 2 * s[1], 2 * s[2]], out);
        Ok(self.push(t, Op::Upsample(x), self.rg(&[x])))
    }

    fn unary(&self, x: Var, kind: Unary) -> Var {
        let vx = self.value(x);
        let out = match kind {
            Unary::Relu => vx.map(|v| if v > T::zero() { v } else { T::zero() }),
            Unary::Sigmoid => vx.map(sigmoid),
            Unary::Log => vx.map(|v| v.ln()),
            Unary::Square => vx.map(|v| v * v),
            Unary::SmoothL1 => {
                let half = T::from_f64_lossy(0.5);
                vx.map(|v| {
                    let a = v.abs();
                    if a < T::one() {
                        half * v * v
                    } else {
                        a - half
                    }
                })
            }
        };
        self.push(out, Op::Unary(x, kind), self.rg(&[x]))
    }

    pub fn relu(&self, x: Var) -> Var {
        self.unary(x, Unary::Relu)
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        self.unary(x, Unary::Sigmoid)
    }

    pub fn log(&self, x: Var) -> Var {
        self.unary(x, Unary::Log)
    }

    pub fn square(&self, x: Var) -> Var {
        self.unary(x, Unary::Square)
    }

    /// Huber loss with unit threshold, elementwise.
    pub fn smooth_l1(&self, x: Var) -> Var {
        self.unary(x, Unary::SmoothL1)
    }

    /// Elementwise binary cross-entropy of probabilities against constant
    /// targets. Probabilities are clamped to `[1e-7, 1 - 1e-7]`; the
    /// gradient is zero where the clamp is active.
    pub fn bce(&self, p: Var, targets: &[T]) -> Result<Var> {
        let vp = self.value(p);
        if vp.numel() != targets.len() {
            return Err(Error::shape(format!(
                "bce: {} probabilities, {} targets",
                vp.numel(),
                targets.len()
            )));
        }
        let eps = bce_eps::<T>();
        let data = vp
            .data()
            .iter()
            .zip(targets)
            .map(|(&p, &t)| {
                let p = p.max(eps).min(T::one() - eps);
                -(t * p.ln() + (T::one() - t) * (T::one() - p).ln())
            })
            .collect();
        let out = Tensor::from_parts(vp.shape().to_vec(), data);
        Ok(self.push(
            out,
            Op::Bce {
                p,
                targets: targets.to_vec(),
            },
            self.rg(&[p]),
        ))
    }

    fn last_axis(&self, x: Var) -> (usize, usize) {
        let s = self.shape(x);
        let cols = *s.last().expect("tensors have rank >= 1");
        (s.iter().product::<usize>() / cols, cols)
    }

    /// Softmax over the last axis.
    pub fn softmax(&self, x: Var) -> Var {
        let vx = self.value(x);
        let (_, cols) = self.last_axis(x);
        let mut data = vx.data().to_vec();
        for row in data.chunks_mut(cols) {
            softmax_row(row);
        }
        let out = Tensor::from_parts(vx.shape().to_vec(), data);
        self.push(out, Op::Softmax(x), self.rg(&[x]))
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&self, x: Var) -> Var {
        let vx = self.value(x);
        let (_, cols) = self.last_axis(x);
        let mut data = vx.data().to_vec();
        for row in data.chunks_mut(cols) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let out = Tensor::from_parts(vx.shape().to_vec(), data);
        self.push(out, Op::LogSoftmax(x), self.rg(&[x]))
    }

    /// Concatenates along axis 0; trailing dimensions must agree.
    pub fn concat(&self, xs: &[Var]) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| Error::shape("concat: no inputs"))?;
        let tail = self.shape(*first)[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &x in xs {
            let v = self.value(x);
            if v.shape()[1..] != tail[..] {
                return Err(Error::shape(format!(
                    "concat: {:?} does not match trailing dims {tail:?}",
                    v.shape()
                )));
            }
            lead += v.shape()[0];
            data.extend_from_slice(v.data());
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        let rg = self.rg(xs);
        Ok(self.push(Tensor::from_parts(shape, data), Op::Concat(xs.to_vec()), rg))
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose(&self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let s = vx.shape();
        if s.len() != 2 {
            return Err(Error::shape(format!("transpose: rank-2 required, got {s:?}")));
        }
        let data = transpose_data(vx.data(), s[0], s[1]);
        let t = Tensor::from_parts(vec![s[1], s[0]], data);
        Ok(self.push(t, Op::Transpose(x), self.rg(&[x])))
    }

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x), self.rg(&[x])))
    }

    /// Gathers flat element indices into a tensor of the given shape.
    pub fn select(&self, x: Var, indices: &[usize], shape: &[usize]) -> Result<Var> {
        let vx = self.value(x);
        if let Some(&bad) = indices.iter().find(|&&i| i >= vx.numel()) {
            return Err(Error::shape(format!(
                "select: index {bad} out of range for {} elements",
                vx.numel()
            )));
        }
        let data = indices.iter().map(|&i| vx.data()[i]).collect();
        let out = Tensor::new(shape.to_vec(), data)?;
        Ok(self.push(
            out,
            Op::Select {
                x,
                indices: indices.to_vec(),
            },
            self.rg(&[x]),
        ))
    }

    /// Extracts the channel vectors of a `[C, H, W]` tensor at the given
    /// `(x, y)` pixels, as a `[C, 1, n]` tensor that pointwise convolutions
    /// consume directly.
    pub fn gather_pixels(&self, x: Var, pixels: &[(usize, usize)]) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 3 {
            return Err(Error::shape(format!("gather_pixels: {s:?}")));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        if let Some(&(px, py)) = pixels.iter().find(|&&(px, py)| px >= w || py >= h) {
            return Err(Error::shape(format!("gather_pixels: ({px}, {py}) outside {w}x{h}")));
        }
        let mut indices = Vec::with_capacity(c * pixels.len());
        for ch in 0..c {
            indices.extend(pixels.iter().map(|&(px, py)| (ch * h + py) * w + px));
        }
        self.select(x, &indices, &[c, 1, pixels.len()])
    }

    pub fn sum(&self, x: Var) -> Var {
        let s: T = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), self.rg(&[x]))
    }

    pub fn mean(&self, x: Var) -> Var {
        let v = self.value(x);
        let s: T = v.data().iter().copied().sum();
        let n = T::from_usize(v.numel()).expect("count fits");
        self.push(Tensor::scalar(s / n), Op::Mean(x), self.rg(&[x]))
    }

    /// Euclidean norm of all elements. The subgradient at the origin is 0.
    pub fn norm(&self, x: Var) -> Var {
        let v = self.value(x);
        let s: T = v.data().iter().map(|&a| a * a).sum();
        self.push(Tensor::scalar(s.sqrt()), Op::Norm(x), self.rg(&[x]))
    }

    /// Backpropagates from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        if nodes[loss.0].value.numel() != 1 {
            return Err(Error::shape(format!(
                "backward: loss must be scalar, got {:?}",
                nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        let params = nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.param.map(|p| (p, Var(i))))
            .collect();
        if !nodes[loss.0].requires_grad {
            return Ok(Gradients { grads, params });
        }
        grads[loss.0] = Some(Tensor::from_parts(
            nodes[loss.0].value.shape().to_vec(),
            vec![T::one()],
        ));

        let accumulate = |grads: &mut Vec<Option<Tensor<T>>>, v: Var, g: Tensor<T>| {
            if !nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        };

        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let out = &node.value;
            let val = |v: Var| &nodes[v.0].value;
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, unbroadcast(g.clone(), val(*a)));
                    accumulate(&mut grads, *b, unbroadcast(g, val(*b)));
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, unbroadcast(g.clone(), val(*a)));
                    accumulate(&mut grads, *b, unbroadcast(g.map(|v| -v), val(*b)));
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (val(*a), val(*b));
                    let n = g.numel();
                    let ga: Vec<T> = (0..n).map(|k| g.data()[k] * broadcast_get(vb, k)).collect();
                    let gb: Vec<T> = (0..n).map(|k| g.data()[k] * broadcast_get(va, k)).collect();
                    let shape = g.shape().to_vec();
                    accumulate(&mut grads, *a, unbroadcast(Tensor::from_parts(shape.clone(), ga), va));
                    accumulate(&mut grads, *b, unbroadcast(Tensor::from_parts(shape, gb), vb));
                }
                Op::Scale(x, c) => {
                    let c = *c;
                    accumulate(&mut grads, *x, g.map(|v| v * c));
                }
                Op::Shift(x) => accumulate(&mut grads, *x, g),
                Op::MatMul(a, b) => {
                    let (va, vb) = (val(*a), val(*b));
                    let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                    if nodes[a.0].requires_grad {
                        let mut ga = vec![T::zero(); m * k];
                        gemm(m, n, k, g.data(), false, vb.data(), true, &mut ga, false);
                        accumulate(&mut grads, *a, Tensor::from_parts(vec![m, k], ga));
                    }
                    if nodes[b.0].requires_grad {
                        let mut gb = vec![T::zero(); k * n];
                        gemm(k, m, n, va.data(), true, g.data(), false, &mut gb, false);
                        accumulate(&mut grads, *b, Tensor::from_parts(vec![k, n], gb));
                    }
                }
                Op::Conv { x, w, b, geom, cols } => {
                    let vw = val(*w);
                    let c_out = vw.shape()[0];
                    let p = geom.out_pixels();
                    let ckk = geom.col_rows();
                    if nodes[w.0].requires_grad {
                        let col_data: &[T] = cols.as_deref().unwrap_or(val(*x).data());
                        let mut gw = vec![T::zero(); c_out * ckk];
                        gemm(c_out, p, ckk, g.data(), false, col_data, true, &mut gw, false);
                        accumulate(&mut grads, *w, Tensor::from_parts(vw.shape().to_vec(), gw));
                    }
                    if let Some(b) = b {
                        let gb = g.data().chunks(p).map(|row| row.iter().copied().sum()).collect();
                        accumulate(&mut grads, *b, Tensor::from_parts(vec![c_out], gb));
                    }
                    if nodes[x.0].requires_grad {
                        let mut gcols = vec![T::zero(); ckk * p];
                        gemm(ckk, c_out, p, vw.data(), true, g.data(), false, &mut gcols, false);
                        let gx = if geom.is_pointwise() {
                            gcols
                        } else {
                            let mut gx = vec![T::zero(); geom.channels * geom.height * geom.width];
                            kernels::col2im(&gcols, geom, &mut gx);
                            gx
                        };
                        accumulate(&mut grads, *x, Tensor::from_parts(val(*x).shape().to_vec(), gx));
                    }
                }
                Op::MaxPool { x, arg } => {
                    let vx = val(*x);
                    let mut gx = vec![T::zero(); vx.numel()];
                    for (&src, &gv) in arg.iter().zip(g.data()) {
                        gx[src] += gv;
                    }
                    accumulate(&mut grads, *x, Tensor::from_parts(vx.shape().to_vec(), gx));
                }
                Op::Upsample(x) => {
                    let s = val(*x).shape().to_vec();
                    let gx = kernels::upsample2_backward(g.data(), s[0], s[1], s[2]);
                    accumulate(&mut grads, *x, Tensor::from_parts(s, gx));
                }
                Op::Unary(x, kind) => {
                    let vx = val(*x);
                    let data = g
                        .data()
                        .iter()
                        .zip(vx.data())
                        .zip(out.data())
                        .map(|((&gv, &xv), &yv)| {
                            gv * match kind {
                                Unary::Relu => {
                                    if xv > T::zero() {
                                        T::one()
                                    } else {
                                        T::zero()
                                    }
                                }
                                Unary::Sigmoid => yv * (T::one() - yv),
                                Unary::Log => T::one() / xv,
                                Unary::Square => xv + xv,
                                Unary::SmoothL1 => {
                                    if xv.abs() < T::one() {
                                        xv
                                    } else {
                                        xv.signum()
                                    }
                                }
                            }
                        })
                        .collect();
                    accumulate(&mut grads, *x, Tensor::from_parts(vx.shape().to_vec(), data));
                }
                Op::Bce { p, targets } => {
                    let vp = val(*p);
                    let eps = bce_eps::<T>();
                    let data = g
                        .data()
                        .iter()
                        .zip(vp.data())
                        .zip(targets)
                        .map(|((&gv, &pv), &t)| {
                            if pv < eps || pv > T::one() - eps {
                                T::zero()
                            } else {
                                gv * (pv - t) / (pv * (T::one() - pv))
                            }
                        })
                        .collect();
                    accumulate(&mut grads, *p, Tensor::from_parts(vp.shape().to_vec(), data));
                }
                Op::Softmax(x) => {
                    let cols = *out.shape().last().unwrap();
                    let mut data = Vec::with_capacity(g.numel());
                    for (gr, yr) in g.data().chunks(cols).zip(out.data().chunks(cols)) {
                        let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                        data.extend(gr.iter().zip(yr).map(|(&gv, &yv)| yv * (gv - dot)));
                    }
                    accumulate(&mut grads, *x, Tensor::from_parts(out.shape().to_vec(), data));
                }
                Op::LogSoftmax(x) => {
                    let cols = *out.shape().last().unwrap();
                    let mut data = Vec::with_capacity(g.numel());
                    for (gr, yr) in g.data().chunks(cols).zip(out.data().chunks(cols)) {
                        let total: T = gr.iter().copied().sum();
                        data.extend(gr.iter().zip(yr).map(|(&gv, &yv)| gv - yv.exp() * total));
                    }
                    accumulate(&mut grads, *x, Tensor::from_parts(out.shape().to_vec(), data));
                }
                Op::Concat(xs) => {
                    let mut offset = 0;
                    for &x in xs {
                        let vx = val(x);
                        let n = vx.numel();
                        let part = g.data()[offset..offset + n].to_vec();
                        offset += n;
                        accumulate(&mut grads, x, Tensor::from_parts(vx.shape().to_vec(), part));
                    }
                }
                Op::Transpose(x) => {
                    let s = out.shape();
                    let data = transpose_data(g.data(), s[0], s[1]);
                    accumulate(&mut grads, *x, Tensor::from_parts(vec![s[1], s[0]], data));
                }
                Op::Reshape(x) => {
                    let s = val(*x).shape().to_vec();
                    accumulate(&mut grads, *x, Tensor::from_parts(s, g.into_data()));
                }
                Op::Select { x, indices } => {
                    let vx = val(*x);
                    let mut gx = vec![T::zero(); vx.numel()];
                    for (&i, &gv) in indices.iter().zip(g.data()) {
                        gx[i] += gv;
                    }
                    accumulate(&mut grads, *x, Tensor::from_parts(vx.shape().to_vec(), gx));
                }
                Op::Sum(x) => {
                    let vx = val(*x);
                    accumulate(&mut grads, *x, Tensor::full(vx.shape(), g.item()));
                }
                Op::Mean(x) => {
                    let vx = val(*x);
                    let n = T::from_usize(vx.numel()).expect("count fits");
                    accumulate(&mut grads, *x, Tensor::full(vx.shape(), g.item() / n));
                }
                Op::Norm(x) => {
                    let vx = val(*x);
                    let norm = out.item();
                    let gx = if norm > T::zero() {
                        let k = g.item() / norm;
                        vx.map(|v| v * k)
                    } else {
                        Tensor::zeros(vx.shape())
                    };
                    accumulate(&mut grads, *x, gx);
                }
            }
        }
        Ok(Gradients { grads, params })
    }

    /// Backpropagates and adds parameter gradients into `store`.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        self.backward(loss)?.accumulate_into(store);
        Ok(())
    }
}

fn softmax_row<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}

/// Softmax of a plain slice, for consumers outside the tape.
pub fn softmax_slice<T: Real>(values: &[T]) -> Vec<T> {
    let mut out = values.to_vec();
    softmax_row(&mut out);
    out
}

fn transpose_data<T: Real>(data: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    out
}
