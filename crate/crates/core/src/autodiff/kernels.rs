//! Slice-level forward/backward kernels. The tape owns bookkeeping; these
//! functions only do arithmetic and assume extents were validated.

use crate::tensor::{gemm, Layout, Scalar};

/// Patch matrix of a `c×h×w` input for a `k×k` valid convolution:
/// `(c·k·k) × (ho·wo)`, row `(ci·k + dy)·k + dx`.
pub fn im2col<T: Scalar>(input: &[T], c: usize, h: usize, w: usize, k: usize) -> Vec<T> {
    let (ho, wo) = (h - k + 1, w - k + 1);
    let plane = ho * wo;
    let mut cols = vec![T::zero(); c * k * k * plane];
    for ci in 0..c {
        for dy in 0..k {
            for dx in 0..k {
                let row = (ci * k + dy) * k + dx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for y in 0..ho {
                    let src = ci * h * w + (y + dy) * w + dx;
                    dst[y * wo..(y + 1) * wo].copy_from_slice(&input[src..src + wo]);
                }
            }
        }
    }
    cols
}

/// Scatter-add a patch matrix back onto a `c×h×w` gradient buffer.
pub fn col2im_add<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize, k: usize, out: &mut [T]) {
    let (ho, wo) = (h - k + 1, w - k + 1);
    let plane = ho * wo;
    for ci in 0..c {
        for dy in 0..k {
            for dx in 0..k {
                let row = (ci * k + dy) * k + dx;
                let src = &cols[row * plane..(row + 1) * plane];
                for y in 0..ho {
                    let dst = ci * h * w + (y + dy) * w + dx;
                    for (o, s) in out[dst..dst + wo].iter_mut().zip(&src[y * wo..(y + 1) * wo]) {
                        *o = *o + *s;
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConvDims {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub k: usize,
}

impl ConvDims {
    pub fn out_hw(&self) -> (usize, usize) {
        (self.h - self.k + 1, self.w - self.k + 1)
    }
    fn patch(&self) -> usize {
        self.c * self.k * self.k
    }
}

pub fn conv2d_forward<T: Scalar>(input: &[T], weight: &[T], bias: Option<&[T]>, d: ConvDims) -> Vec<T> {
    let (ho, wo) = d.out_hw();
    let plane = ho * wo;
    let mut out = vec![T::zero(); d.o * plane];
    if d.k == 1 {
        gemm(d.o, d.c, plane, weight, Layout::Normal, input, Layout::Normal, &mut out, false);
    } else {
        let cols = im2col(input, d.c, d.h, d.w, d.k);
        gemm(d.o, d.patch(), plane, weight, Layout::Normal, &cols, Layout::Normal, &mut out, false);
    }
    if let Some(bias) = bias {
        for (row, b) in out.chunks_exact_mut(plane).zip(bias) {
            row.iter_mut().for_each(|v| *v = *v + *b);
        }
    }
    out
}

/// Accumulates weight/bias/input gradients for a valid convolution. Any of
/// the output buffers may be skipped.
pub fn conv2d_backward<T: Scalar>(
    input: &[T],
    weight: &[T],
    grad_out: &[T],
    d: ConvDims,
    grad_input: Option<&mut [T]>,
    grad_weight: Option<&mut [T]>,
    grad_bias: Option<&mut [T]>,
) {
    let (ho, wo) = d.out_hw();
    let plane = ho * wo;
    if let Some(gb) = grad_bias {
        for (b, row) in gb.iter_mut().zip(grad_out.chunks_exact(plane)) {
            *b = *b + row.iter().copied().sum::<T>();
        }
    }
    if d.k == 1 {
        if let Some(gw) = grad_weight {
            gemm(d.o, plane, d.c, grad_out, Layout::Normal, input, Layout::Transposed, gw, true);
        }
        if let Some(gi) = grad_input {
            gemm(d.c, d.o, plane, weight, Layout::Transposed, grad_out, Layout::Normal, gi, true);
        }
        return;
    }
    let patch = d.patch();
    if let Some(gw) = grad_weight {
        let cols = im2col(input, d.c, d.h, d.w, d.k);
        gemm(d.o, plane, patch, grad_out, Layout::Normal, &cols, Layout::Transposed, gw, true);
    }
    if let Some(gi) = grad_input {
        let mut dcols = vec![T::zero(); patch * plane];
        gemm(patch, d.o, plane, weight, Layout::Transposed, grad_out, Layout::Normal, &mut dcols, false);
        col2im_add(&dcols, d.c, d.h, d.w, d.k, gi);
    }
}

/// 2×2 stride-2 max pool. Returns the pooled values and, per output, the
/// flat input index that won (first in row-major order on ties).
pub fn maxpool2x2_forward<T: Scalar>(input: &[T], c: usize, h: usize, w: usize) -> (Vec<T>, Vec<u32>) {
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * ho * wo);
    let mut arg = Vec::with_capacity(c * ho * wo);
    for ci in 0..c {
        let base = ci * h * w;
        for y in 0..ho {
            for x in 0..wo {
                let top = base + 2 * y * w + 2 * x;
                let candidates = [top, top + 1, top + w, top + w + 1];
                let mut best = candidates[0];
                for &idx in &candidates[1..] {
                    if input[idx] > input[best] {
                        best = idx;
                    }
                }
                out.push(input[best]);
                arg.push(best as u32);
            }
        }
    }
    (out, arg)
}

pub fn elu<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        x.exp_m1()
    }
}

/// Numerically safe softmax over the whole slice.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let mut out: Vec<T> = logits.iter().map(|&v| (v - max).exp()).collect();
    let total: T = out.iter().copied().sum();
    out.iter_mut().for_each(|v| *v = *v / total);
    out
}

/// `dx = y ⊙ (g − ⟨g, y⟩)`.
pub fn softmax_backward<T: Scalar>(y: &[T], g: &[T], dx: &mut [T]) {
    let dot: T = y.iter().zip(g).map(|(a, b)| *a * *b).sum();
    for ((d, yi), gi) in dx.iter_mut().zip(y).zip(g) {
        *d = *d + *yi * (*gi - dot);
    }
}
