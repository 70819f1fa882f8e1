use std::sync::Arc;

use super::kernels::{self, ConvDims};
use super::params::{ParamId, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::{gemm, FlushDenormals, Layout, Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`] or to a parameter it borrows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(Slot);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Node(usize),
    Param(usize),
}

enum Op<T> {
    Leaf,
    Conv2d { input: Var, weight: Var, bias: Option<Var>, dims: ConvDims },
    MaxPool2x2 { input: Var, argmax: Vec<u32> },
    Elu { input: Var },
    Softmax { input: Var },
    Affine { input: Var, weight: Var, bias: Option<Var> },
    Add { a: Var, b: Var },
    Scale { input: Var, factor: T },
    ScaleShift { input: Var, scale: Vec<T> },
    Reshape { input: Var },
    Sum { input: Var },
    WeightedSum { weights: Var, maps: Var },
    SoftArgmax { attn: Var, width: usize },
    BilinearSelect { a: Var, b: Var, kernel: Arc<[T]>, mixed: Vec<T> },
    Mse { pred: Var, target: Vec<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Wengert list: every op appends a node; [`Tape::backward`] replays the list
/// in reverse. Parameters are borrowed, never copied onto the tape.
///
/// Subnormals are flushed to zero on the creating thread while the tape is
/// alive; record and differentiate on that thread.
pub struct Tape<'p, T: Scalar> {
    params: &'p ParamSet<T>,
    nodes: Vec<Node<T>>,
    _fp: FlushDenormals,
}

/// Result of a backward pass.
pub struct Gradients<T> {
    params: Vec<Option<Vec<T>>>,
    nodes: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a parameter; `None` when the loss does not depend on it.
    pub fn param(&self, id: ParamId) -> Option<&[T]> {
        self.params.get(id.0).and_then(|g| g.as_deref())
    }

    /// Gradient w.r.t. a leaf recorded with [`Tape::leaf`] or a parameter.
    /// Intermediate gradients are released during the sweep.
    pub fn wrt(&self, var: Var) -> Option<&[T]> {
        match var.0 {
            Slot::Node(i) => self.nodes.get(i).and_then(|g| g.as_deref()),
            Slot::Param(i) => self.params.get(i).and_then(|g| g.as_deref()),
        }
    }

    pub(crate) fn into_param_grads(self) -> Vec<Option<Vec<T>>> {
        self.params
    }
}

impl<'p, T: Scalar> Tape<'p, T> {
    pub fn new(params: &'p ParamSet<T>) -> Self {
        Tape { params, nodes: Vec::new(), _fp: FlushDenormals::new() }
    }

    pub fn params(&self) -> &'p ParamSet<T> {
        self.params
    }

    pub fn param(&self, id: ParamId) -> Var {
        Var(Slot::Param(id.0))
    }

    /// Records a constant input (no gradient).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Records an input whose gradient should be reported by `backward`.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        match var.0 {
            Slot::Node(i) => &self.nodes[i].value,
            Slot::Param(i) => self.params.value(ParamId(i)),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn requires_grad(&self, var: Var) -> bool {
        match var.0 {
            Slot::Node(i) => self.nodes[i].requires_grad,
            Slot::Param(i) => self.params.trainable(ParamId(i)),
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(Slot::Node(self.nodes.len() - 1))
    }

    fn any_grad(&self, vars: &[Option<Var>]) -> bool {
        vars.iter().flatten().any(|v| self.requires_grad(*v))
    }

    /// Valid (unpadded, stride 1) convolution of a `C×H×W` input with an
    /// `O×C×k×k` kernel.
    pub fn conv2d_valid(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let (c, h, w) = self.value(input).chw().map_err(|_| {
            Error::shape("conv2d_valid", format!("input must be C×H×W, got {:?}", self.value(input).shape()))
        })?;
        let wshape = self.value(weight).shape();
        let [o, wc, kh, kw] = wshape[..] else {
            return Err(Error::shape("conv2d_valid", format!("weight must be O×C×k×k, got {wshape:?}")));
        };
        if kh != kw || !(kh == 1 || kh == 3) {
            return Err(Error::shape("conv2d_valid", format!("kernel size {kh}×{kw} unsupported (k ∈ {{1, 3}})")));
        }
        if wc != c {
            return Err(Error::shape(
                "conv2d_valid",
                format!("input channels: input has {c}, weight expects {wc}"),
            ));
        }
        if h < kh {
            return Err(Error::shape("conv2d_valid", format!("height {h} smaller than kernel {kh}")));
        }
        if w < kw {
            return Err(Error::shape("conv2d_valid", format!("width {w} smaller than kernel {kw}")));
        }
        if let Some(b) = bias {
            let bshape = self.value(b).shape();
            if bshape != [o] {
                return Err(Error::shape("conv2d_valid", format!("bias length: expected [{o}], got {bshape:?}")));
            }
        }
        let dims = ConvDims { c, h, w, o, k: kh };
        let out = kernels::conv2d_forward(
            self.value(input).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
            dims,
        );
        let (ho, wo) = dims.out_hw();
        let rg = self.any_grad(&[Some(input), Some(weight), bias]);
        Ok(self.push(Tensor::new([o, ho, wo], out)?, Op::Conv2d { input, weight, bias, dims }, rg))
    }

    pub fn maxpool2x2(&mut self, input: Var) -> Result<Var> {
        let (c, h, w) = self.value(input).chw()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape("maxpool2x2", format!("extents must be even, got {h}×{w}")));
        }
        let (out, argmax) = kernels::maxpool2x2_forward(self.value(input).data(), c, h, w);
        let rg = self.requires_grad(input);
        Ok(self.push(Tensor::new([c, h / 2, w / 2], out)?, Op::MaxPool2x2 { input, argmax }, rg))
    }

    pub fn elu(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let out = Tensor::from_fn(x.shape().to_vec(), |i| kernels::elu(x.data()[i]));
        let rg = self.requires_grad(input);
        self.push(out, Op::Elu { input }, rg)
    }

    /// Softmax over every element of the input, shape preserved.
    pub fn softmax(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let out = Tensor::new(x.shape().to_vec(), kernels::softmax(x.data())).expect("same shape");
        let rg = self.requires_grad(input);
        self.push(out, Op::Softmax { input }, rg)
    }

    /// Softmax over all positions of a `1×H×W` map.
    pub fn spatial_softmax(&mut self, input: Var) -> Result<Var> {
        let (c, _, _) = self.value(input).chw()?;
        if c != 1 {
            return Err(Error::shape("spatial_softmax", format!("expected a single channel, got {c}")));
        }
        Ok(self.softmax(input))
    }

    /// `weight·input + bias` for a flat input.
    pub fn affine(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let n = self.value(input).numel();
        let [m, wn] = self.value(weight).shape()[..] else {
            return Err(Error::shape("affine", format!("weight must be M×N, got {:?}", self.value(weight).shape())));
        };
        if wn != n {
            return Err(Error::shape("affine", format!("weight has {wn} columns but input has {n} elements")));
        }
        if let Some(b) = bias {
            if self.value(b).numel() != m {
                return Err(Error::shape(
                    "affine",
                    format!("bias has {} elements, expected {m}", self.value(b).numel()),
                ));
            }
        }
        let mut out = match bias {
            Some(b) => self.value(b).data().to_vec(),
            None => vec![T::zero(); m],
        };
        gemm(m, n, 1, self.value(weight).data(), Layout::Normal, self.value(input).data(), Layout::Normal, &mut out, true);
        let rg = self.any_grad(&[Some(input), Some(weight), bias]);
        Ok(self.push(Tensor::new([m], out)?, Op::Affine { input, weight, bias }, rg))
    }

    /// Elementwise sum of two tensors with equal element counts; the result
    /// takes the shape of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.numel() != y.numel() {
            return Err(Error::shape("add", format!("{:?} vs {:?}", x.shape(), y.shape())));
        }
        let out = Tensor::from_fn(x.shape().to_vec(), |i| x.data()[i] + y.data()[i]);
        let rg = self.any_grad(&[Some(a), Some(b)]);
        Ok(self.push(out, Op::Add { a, b }, rg))
    }

    pub fn scale(&mut self, input: Var, factor: T) -> Var {
        let x = self.value(input);
        let out = Tensor::from_fn(x.shape().to_vec(), |i| x.data()[i] * factor);
        let rg = self.requires_grad(input);
        self.push(out, Op::Scale { input, factor }, rg)
    }

    /// Per-element `x·scale + shift`.
    pub fn scale_shift(&mut self, input: Var, scale: &[T], shift: &[T]) -> Result<Var> {
        let x = self.value(input);
        if scale.len() != x.numel() || shift.len() != x.numel() {
            return Err(Error::shape("scale_shift", format!("{} coefficients for {} elements", scale.len(), x.numel())));
        }
        let out = Tensor::from_fn(x.shape().to_vec(), |i| x.data()[i] * scale[i] + shift[i]);
        let rg = self.requires_grad(input);
        Ok(self.push(out, Op::ScaleShift { input, scale: scale.to_vec() }, rg))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(input).clone().reshape(shape.to_vec())?;
        let rg = self.requires_grad(input);
        Ok(self.push(out, Op::Reshape { input }, rg))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let total = self.value(input).sum();
        let rg = self.requires_grad(input);
        self.push(Tensor::scalar(total), Op::Sum { input }, rg)
    }

    /// `out[c] = Σ_s weights[s]·maps[c, s]` where `s` runs over the spatial
    /// positions of a `C×H×W` map and `weights` holds `H·W` values.
    pub fn weighted_sum(&mut self, weights: Var, maps: Var) -> Result<Var> {
        let (c, h, w) = self.value(maps).chw()?;
        let s = self.value(weights).numel();
        if s != h * w {
            return Err(Error::shape("weighted_sum", format!("{s} weights for a {h}×{w} map")));
        }
        let mut out = vec![T::zero(); c];
        gemm(c, s, 1, self.value(maps).data(), Layout::Normal, self.value(weights).data(), Layout::Normal, &mut out, false);
        let rg = self.any_grad(&[Some(weights), Some(maps)]);
        Ok(self.push(Tensor::new([c], out)?, Op::WeightedSum { weights, maps }, rg))
    }

    /// Expected `(column, row)` coordinate under a distribution over the
    /// cells of a `1×H×W` (or `H×W`) map.
    pub fn soft_argmax(&mut self, attn: Var) -> Result<Var> {
        let shape = self.value(attn).shape();
        let (h, w) = match shape[..] {
            [1, h, w] | [h, w] => (h, w),
            _ => return Err(Error::shape("soft_argmax", format!("expected 1×H×W, got {shape:?}"))),
        };
        let a = self.value(attn).data();
        let (mut px, mut py) = (0.0f64, 0.0f64);
        for i in 0..h {
            for j in 0..w {
                let p = a[i * w + j].as_f64();
                px += p * j as f64;
                py += p * i as f64;
            }
        }
        let rg = self.requires_grad(attn);
        let out = Tensor::new([2], vec![T::from_f64(px), T::from_f64(py)])?;
        Ok(self.push(out, Op::SoftArgmax { attn, width: w }, rg))
    }

    /// `out[s] = Σ_{p,o} a[p]·b[o]·kernel[p, o, s]` for a constant kernel laid
    /// out as `P×O×S`.
    pub fn bilinear_select(&mut self, a: Var, b: Var, kernel: Arc<[T]>) -> Result<Var> {
        let (p, o) = (self.value(a).numel(), self.value(b).numel());
        if kernel.len() % (p * o) != 0 {
            return Err(Error::shape(
                "bilinear_select",
                format!("kernel of {} values is not divisible by {p}×{o}", kernel.len()),
            ));
        }
        let s = kernel.len() / (p * o);
        // mixed[o, s] = Σ_p a[p]·kernel[p, o, s]
        let mut mixed = vec![T::zero(); o * s];
        gemm(1, p, o * s, self.value(a).data(), Layout::Normal, &kernel, Layout::Normal, &mut mixed, false);
        let mut out = vec![T::zero(); s];
        gemm(1, o, s, self.value(b).data(), Layout::Normal, &mixed, Layout::Normal, &mut out, false);
        let rg = self.any_grad(&[Some(a), Some(b)]);
        Ok(self.push(Tensor::new([s], out)?, Op::BilinearSelect { a, b, kernel, mixed }, rg))
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, pred: Var, target: &[T]) -> Result<Var> {
        let p = self.value(pred).data();
        if p.len() != target.len() {
            return Err(Error::shape("mse", format!("prediction has {} values, target {}", p.len(), target.len())));
        }
        let n = T::from_f64(p.len() as f64);
        let loss = p.iter().zip(target).map(|(a, b)| (*a - *b) * (*a - *b)).sum::<T>() / n;
        let rg = self.requires_grad(pred);
        Ok(self.push(Tensor::scalar(loss), Op::Mse { pred, target: target.to_vec() }, rg))
    }

    /// Reverse-mode sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let Slot::Node(root) = loss.0 else {
            return Err(Error::Invalid("backward: loss must be a recorded node".into()));
        };
        if self.nodes[root].value.numel() != 1 {
            return Err(Error::Invalid(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.nodes[root].value.shape()
            )));
        }
        let mut grads = Gradients {
            params: vec![None; self.params.len()],
            nodes: vec![None; root + 1],
        };
        grads.nodes[root] = Some(vec![T::one()]);

        for idx in (0..=root).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads.nodes[idx].take() else {
                continue;
            };
            self.backward_op(node, &g, &mut grads);
        }
        Ok(grads)
    }

    fn backward_op(&self, node: &Node<T>, g: &[T], grads: &mut Gradients<T>) {
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { input, weight, bias, dims } => {
                let x = self.value(*input).data();
                let wt = self.value(*weight).data();
                let mut gi = self.requires_grad(*input).then(|| vec![T::zero(); x.len()]);
                let mut gw = self.requires_grad(*weight).then(|| vec![T::zero(); wt.len()]);
                let mut gb = bias.filter(|b| self.requires_grad(*b)).map(|_| vec![T::zero(); dims.o]);
                kernels::conv2d_backward(x, wt, g, *dims, gi.as_deref_mut(), gw.as_deref_mut(), gb.as_deref_mut());
                if let Some(gi) = gi {
                    self.add_grad(grads, *input, &gi);
                }
                if let Some(gw) = gw {
                    self.add_grad(grads, *weight, &gw);
                }
                if let (Some(gb), Some(b)) = (gb, bias) {
                    self.add_grad(grads, *b, &gb);
                }
            }
            Op::MaxPool2x2 { input, argmax } => {
                self.with_grad(grads, *input, |dx| {
                    for (gv, &src) in g.iter().zip(argmax) {
                        dx[src as usize] = dx[src as usize] + *gv;
                    }
                });
            }
            Op::Elu { input } => {
                let y = node.value.data();
                self.with_grad(grads, *input, |dx| {
                    for ((d, gv), yv) in dx.iter_mut().zip(g).zip(y) {
                        // For x ≤ 0, d/dx (e^x − 1) = e^x = y + 1.
                        let slope = if *yv > T::zero() { T::one() } else { *yv + T::one() };
                        *d = *d + *gv * slope;
                    }
                });
            }
            Op::Softmax { input } => {
                let y = node.value.data();
                self.with_grad(grads, *input, |dx| kernels::softmax_backward(y, g, dx));
            }
            Op::Affine { input, weight, bias } => {
                let (m, n) = (g.len(), self.value(*input).numel());
                if self.requires_grad(*weight) {
                    let x = self.value(*input).data();
                    self.with_grad(grads, *weight, |dw| {
                        gemm(m, 1, n, g, Layout::Normal, x, Layout::Normal, dw, true);
                    });
                }
                if self.requires_grad(*input) {
                    let wt = self.value(*weight).data();
                    self.with_grad(grads, *input, |dx| {
                        gemm(n, m, 1, wt, Layout::Transposed, g, Layout::Normal, dx, true);
                    });
                }
                if let Some(b) = bias {
                    self.add_grad(grads, *b, g);
                }
            }
            Op::Add { a, b } => {
                self.add_grad(grads, *a, g);
                self.add_grad(grads, *b, g);
            }
            Op::Scale { input, factor } => {
                self.with_grad(grads, *input, |dx| {
                    dx.iter_mut().zip(g).for_each(|(d, gv)| *d = *d + *gv * *factor);
                });
            }
            Op::ScaleShift { input, scale } => {
                self.with_grad(grads, *input, |dx| {
                    for ((d, gv), s) in dx.iter_mut().zip(g).zip(scale) {
                        *d = *d + *gv * *s;
                    }
                });
            }
            Op::Reshape { input } => self.add_grad(grads, *input, g),
            Op::Sum { input } => {
                self.with_grad(grads, *input, |dx| dx.iter_mut().for_each(|d| *d = *d + g[0]));
            }
            Op::WeightedSum { weights, maps } => {
                let (c, h, w) = self.value(*maps).chw().expect("validated in forward");
                let s = h * w;
                if self.requires_grad(*maps) {
                    let wv = self.value(*weights).data();
                    self.with_grad(grads, *maps, |dm| {
                        gemm(c, 1, s, g, Layout::Normal, wv, Layout::Normal, dm, true);
                    });
                }
                if self.requires_grad(*weights) {
                    let mv = self.value(*maps).data();
                    self.with_grad(grads, *weights, |dw| {
                        gemm(s, c, 1, mv, Layout::Transposed, g, Layout::Normal, dw, true);
                    });
                }
            }
            Op::SoftArgmax { attn, width } => {
                self.with_grad(grads, *attn, |da| {
                    for (idx, d) in da.iter_mut().enumerate() {
                        let (i, j) = (idx / width, idx % width);
                        *d = *d + g[0] * T::from_f64(j as f64) + g[1] * T::from_f64(i as f64);
                    }
                });
            }
            Op::BilinearSelect { a, b, kernel, mixed } => {
                let (p, o) = (self.value(*a).numel(), self.value(*b).numel());
                let s = g.len();
                if self.requires_grad(*b) {
                    self.with_grad(grads, *b, |db| {
                        gemm(o, s, 1, mixed, Layout::Normal, g, Layout::Normal, db, true);
                    });
                }
                if self.requires_grad(*a) {
                    // da[p] = Σ_{o,s} kernel[p,o,s]·b[o]·g[s]
                    let bv = self.value(*b).data();
                    let mut outer = Vec::with_capacity(o * s);
                    for bo in bv {
                        outer.extend(g.iter().map(|gs| *bo * *gs));
                    }
                    self.with_grad(grads, *a, |da| {
                        gemm(p, o * s, 1, kernel, Layout::Normal, &outer, Layout::Normal, da, true);
                    });
                }
            }
            Op::Mse { pred, target } => {
                let p = self.value(*pred).data();
                let n = T::from_f64(p.len() as f64);
                let two = T::from_f64(2.0);
                self.with_grad(grads, *pred, |dp| {
                    for ((d, pv), tv) in dp.iter_mut().zip(p).zip(target) {
                        *d = *d + g[0] * two * (*pv - *tv) / n;
                    }
                });
            }
        }
    }

    fn add_grad(&self, grads: &mut Gradients<T>, var: Var, g: &[T]) {
        self.with_grad(grads, var, |d| d.iter_mut().zip(g).for_each(|(a, b)| *a = *a + *b));
    }

    fn with_grad(&self, grads: &mut Gradients<T>, var: Var, f: impl FnOnce(&mut [T])) {
        if !self.requires_grad(var) {
            return;
        }
        let len = self.value(var).numel();
        let slot = match var.0 {
            Slot::Node(i) => &mut grads.nodes[i],
            Slot::Param(i) => &mut grads.params[i],
        };
        f(slot.get_or_insert_with(|| vec![T::zero(); len]));
    }
}
