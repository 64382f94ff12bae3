//! Forward and reverse-mode kernels on channel-major `C x H x W` buffers.
//!
//! All loops run in a fixed order, so results do not depend on how callers
//! schedule work across threads.

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![T::zero(); c * h * w],
        }
    }

    #[inline]
    pub fn plane(&self, c: usize) -> &[T] {
        let len = self.h * self.w;
        &self.data[c * len..(c + 1) * len]
    }

    #[inline]
    pub fn plane_mut(&mut self, c: usize) -> &mut [T] {
        let len = self.h * self.w;
        &mut self.data[c * len..(c + 1) * len]
    }

    /// Stacks `a` over `b` along the channel axis.
    pub fn concat(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
        debug_assert_eq!((a.h, a.w), (b.h, b.w));
        let mut data = Vec::with_capacity(a.data.len() + b.data.len());
        data.extend_from_slice(&a.data);
        data.extend_from_slice(&b.data);
        Tensor {
            c: a.c + b.c,
            h: a.h,
            w: a.w,
            data,
        }
    }

    /// Inverse of [`Tensor::concat`] for gradients.
    pub fn split(self, first: usize) -> (Tensor<T>, Tensor<T>) {
        let cut = first * self.h * self.w;
        let mut data = self.data;
        let tail = data.split_off(cut);
        (
            Tensor {
                c: first,
                h: self.h,
                w: self.w,
                data,
            },
            Tensor {
                c: self.c - first,
                h: self.h,
                w: self.w,
                data: tail,
            },
        )
    }
}

#[inline]
fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += alpha * *xv;
    }
}

#[inline]
fn dot<T: Scalar>(x: &[T], y: &[T]) -> T {
    // four partial sums break the dependency chain; fixed order, so still deterministic
    let mut acc = [T::zero(); 4];
    let chunks = x.len() / 4;
    for k in 0..chunks {
        let b = 4 * k;
        acc[0] += x[b] * y[b];
        acc[1] += x[b + 1] * y[b + 1];
        acc[2] += x[b + 2] * y[b + 2];
        acc[3] += x[b + 3] * y[b + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for k in 4 * chunks..x.len() {
        s += x[k] * y[k];
    }
    s
}

/// Column range `[lo, hi)` of output pixels whose tap `kx` stays inside a
/// row of width `w` under zero padding of 1.
#[inline]
fn tap_cols(kx: usize, w: usize) -> (usize, usize) {
    match kx {
        0 => (1, w),
        1 => (0, w),
        _ => (0, w - 1),
    }
}

/// 3x3 convolution, stride 1, zero padding 1. Weights `[cout][cin][3][3]`.
pub fn conv3x3<T: Scalar>(input: &Tensor<T>, weight: &[T], bias: &[T], cout: usize) -> Tensor<T> {
    let (cin, h, w) = (input.c, input.h, input.w);
    debug_assert_eq!(weight.len(), cout * cin * 9);
    let mut out = Tensor::zeros(cout, h, w);
    for co in 0..cout {
        let op = out.plane_mut(co);
        op.iter_mut().for_each(|v| *v = bias[co]);
        for ci in 0..cin {
            let ip = input.plane(ci);
            let wk = &weight[(co * cin + ci) * 9..(co * cin + ci + 1) * 9];
            for y in 0..h {
                let orow = &mut op[y * w..(y + 1) * w];
                for ky in 0..3 {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let irow = &ip[sy as usize * w..(sy as usize + 1) * w];
                    for kx in 0..3 {
                        let (lo, hi) = tap_cols(kx, w);
                        // output column x reads input column x + kx - 1
                        axpy(wk[ky * 3 + kx], &irow[lo + kx - 1..hi + kx - 1], &mut orow[lo..hi]);
                    }
                }
            }
        }
    }
    out
}

/// Reverse of [`conv3x3`]. Accumulates into `gw`, `gb` and returns the
/// input gradient (skipped when `need_input_grad` is false).
pub fn conv3x3_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &[T],
    grad_out: &Tensor<T>,
    gw: &mut [T],
    gb: &mut [T],
    need_input_grad: bool,
) -> Option<Tensor<T>> {
    let (cin, h, w) = (input.c, input.h, input.w);
    let cout = grad_out.c;
    let mut gin = if need_input_grad {
        Some(Tensor::zeros(cin, h, w))
    } else {
        None
    };
    for co in 0..cout {
        let gp = grad_out.plane(co);
        gb[co] += gp.iter().copied().sum::<T>();
        for ci in 0..cin {
            let ip = input.plane(ci);
            let base = (co * cin + ci) * 9;
            for ky in 0..3 {
                for kx in 0..3 {
                    let (lo, hi) = tap_cols(kx, w);
                    let wv = weight[base + ky * 3 + kx];
                    let mut acc = T::zero();
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let sy = sy as usize;
                        let grow = &gp[y * w + lo..y * w + hi];
                        let irow = &ip[sy * w + lo + kx - 1..sy * w + hi + kx - 1];
                        acc += dot(grow, irow);
                        if let Some(g) = gin.as_mut() {
                            let gi = g.plane_mut(ci);
                            axpy(wv, grow, &mut gi[sy * w + lo + kx - 1..sy * w + hi + kx - 1]);
                        }
                    }
                    gw[base + ky * 3 + kx] += acc;
                }
            }
        }
    }
    gin
}

/// 1x1 convolution. Weights `[cout][cin]`.
pub fn conv1x1<T: Scalar>(input: &Tensor<T>, weight: &[T], bias: &[T], cout: usize) -> Tensor<T> {
    let cin = input.c;
    let mut out = Tensor::zeros(cout, input.h, input.w);
    for co in 0..cout {
        let op = out.plane_mut(co);
        op.iter_mut().for_each(|v| *v = bias[co]);
        for ci in 0..cin {
            axpy(weight[co * cin + ci], input.plane(ci), op);
        }
    }
    out
}

pub fn conv1x1_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &[T],
    grad_out: &Tensor<T>,
    gw: &mut [T],
    gb: &mut [T],
) -> Tensor<T> {
    let cin = input.c;
    let mut gin = Tensor::zeros(cin, input.h, input.w);
    for co in 0..grad_out.c {
        let gp = grad_out.plane(co);
        gb[co] += gp.iter().copied().sum::<T>();
        for ci in 0..cin {
            gw[co * cin + ci] += dot(gp, input.plane(ci));
            axpy(weight[co * cin + ci], gp, gin.plane_mut(ci));
        }
    }
    gin
}

/// 2x2 transposed convolution with stride 2 (exact 2x upsampling).
/// Weights `[cin][cout][2][2]`.
pub fn conv_transpose2x2<T: Scalar>(input: &Tensor<T>, weight: &[T], bias: &[T], cout: usize) -> Tensor<T> {
    let (cin, h, w) = (input.c, input.h, input.w);
    let (h2, w2) = (2 * h, 2 * w);
    let mut out = Tensor::zeros(cout, h2, w2);
    for co in 0..cout {
        out.plane_mut(co).iter_mut().for_each(|v| *v = bias[co]);
    }
    for ci in 0..cin {
        let ip = input.plane(ci);
        for co in 0..cout {
            let wk = &weight[(ci * cout + co) * 4..(ci * cout + co + 1) * 4];
            let op = out.plane_mut(co);
            for y in 0..h {
                let irow = &ip[y * w..(y + 1) * w];
                for dy in 0..2 {
                    let orow = &mut op[(2 * y + dy) * w2..(2 * y + dy + 1) * w2];
                    let (w0, w1) = (wk[dy * 2], wk[dy * 2 + 1]);
                    for (pair, &v) in orow.chunks_exact_mut(2).zip(irow) {
                        pair[0] += w0 * v;
                        pair[1] += w1 * v;
                    }
                }
            }
        }
    }
    out
}

pub fn conv_transpose2x2_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &[T],
    grad_out: &Tensor<T>,
    gw: &mut [T],
    gb: &mut [T],
) -> Tensor<T> {
    let (cin, h, w) = (input.c, input.h, input.w);
    let cout = grad_out.c;
    let w2 = 2 * w;
    for co in 0..cout {
        gb[co] += grad_out.plane(co).iter().copied().sum::<T>();
    }
    let mut gin = Tensor::zeros(cin, h, w);
    for ci in 0..cin {
        let ip = input.plane(ci);
        for co in 0..cout {
            let base = (ci * cout + co) * 4;
            let gp = grad_out.plane(co);
            let mut acc = [T::zero(); 4];
            let gi = gin.plane_mut(ci);
            for y in 0..h {
                for dy in 0..2 {
                    let grow = &gp[(2 * y + dy) * w2..(2 * y + dy + 1) * w2];
                    let (w0, w1) = (weight[base + dy * 2], weight[base + dy * 2 + 1]);
                    for x in 0..w {
                        let (g0, g1) = (grow[2 * x], grow[2 * x + 1]);
                        let v = ip[y * w + x];
                        acc[dy * 2] += g0 * v;
                        acc[dy * 2 + 1] += g1 * v;
                        gi[y * w + x] += w0 * g0 + w1 * g1;
                    }
                }
            }
            for k in 0..4 {
                gw[base + k] += acc[k];
            }
        }
    }
    gin
}

pub fn relu_inplace<T: Scalar>(t: &mut Tensor<T>) {
    for v in t.data.iter_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Zeroes `grad` wherever the rectified output was not positive.
pub fn relu_backward_inplace<T: Scalar>(activated: &Tensor<T>, grad: &mut Tensor<T>) {
    for (g, a) in grad.data.iter_mut().zip(&activated.data) {
        if *a <= T::zero() {
            *g = T::zero();
        }
    }
}

/// 2x2 max pooling, stride 2. Returns the pooled tensor and, per output,
/// the flat input index of the winning element (first maximum in raster
/// order).
pub fn maxpool2<T: Scalar>(input: &Tensor<T>) -> (Tensor<T>, Vec<u32>) {
    let (c, h, w) = (input.c, input.h, input.w);
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Tensor::zeros(c, ho, wo);
    let mut arg = vec![0u32; c * ho * wo];
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..ho {
            for x in 0..wo {
                let cands = [
                    base + 2 * y * w + 2 * x,
                    base + 2 * y * w + 2 * x + 1,
                    base + (2 * y + 1) * w + 2 * x,
                    base + (2 * y + 1) * w + 2 * x + 1,
                ];
                let mut best = cands[0];
                for &k in &cands[1..] {
                    if input.data[k] > input.data[best] {
                        best = k;
                    }
                }
                let o = ch * ho * wo + y * wo + x;
                out.data[o] = input.data[best];
                arg[o] = best as u32;
            }
        }
    }
    (out, arg)
}

pub fn maxpool2_backward<T: Scalar>(grad_out: &Tensor<T>, arg: &[u32], c: usize, h: usize, w: usize) -> Tensor<T> {
    let mut gin = Tensor::zeros(c, h, w);
    for (g, &k) in grad_out.data.iter().zip(arg) {
        gin.data[k as usize] += *g;
    }
    gin
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv3(input: &Tensor<f64>, wt: &[f64], b: &[f64], cout: usize) -> Tensor<f64> {
        let (cin, h, w) = (input.c, input.h, input.w);
        let mut out = Tensor::zeros(cout, h, w);
        for co in 0..cout {
            for y in 0..h as isize {
                for x in 0..w as isize {
                    let mut s = b[co];
                    for ci in 0..cin {
                        for ky in 0..3isize {
                            for kx in 0..3isize {
                                let (sy, sx) = (y + ky - 1, x + kx - 1);
                                if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                                    s += wt[(co * cin + ci) * 9 + (ky * 3 + kx) as usize]
                                        * input.data[ci * h * w + sy as usize * w + sx as usize];
                                }
                            }
                        }
                    }
                    out.data[co * h * w + y as usize * w + x as usize] = s;
                }
            }
        }
        out
    }

    fn pseudo(k: usize) -> f64 {
        ((k as f64 * 12.9898).sin() * 43758.5453).fract()
    }

    #[test]
    fn conv3_matches_naive() {
        let (cin, cout, h, w) = (3, 2, 5, 7);
        let input = Tensor {
            c: cin,
            h,
            w,
            data: (0..cin * h * w).map(pseudo).collect(),
        };
        let wt: Vec<f64> = (0..cout * cin * 9).map(|k| pseudo(k + 1000)).collect();
        let b = vec![0.1, -0.2];
        let fast = conv3x3(&input, &wt, &b, cout);
        let slow = naive_conv3(&input, &wt, &b, cout);
        for (a, b) in fast.data.iter().zip(&slow.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv3_adjoint_identity() {
        // <conv(x), y> - bias term = <x, conv^T(y)>
        let (cin, cout, h, w) = (2, 3, 4, 6);
        let x = Tensor {
            c: cin,
            h,
            w,
            data: (0..cin * h * w).map(pseudo).collect(),
        };
        let y = Tensor {
            c: cout,
            h,
            w,
            data: (0..cout * h * w).map(|k| pseudo(k + 77)).collect(),
        };
        let wt: Vec<f64> = (0..cout * cin * 9).map(|k| pseudo(k + 500)).collect();
        let zero_b = vec![0.0; cout];
        let lhs: f64 = conv3x3(&x, &wt, &zero_b, cout).data.iter().zip(&y.data).map(|(a, b)| a * b).sum();
        let mut gw = vec![0.0; wt.len()];
        let mut gb = vec![0.0; cout];
        let gx = conv3x3_backward(&x, &wt, &y, &mut gw, &mut gb, true).unwrap();
        let rhs: f64 = gx.data.iter().zip(&x.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
        // and <conv_w(x), y> is linear in w with gradient gw
        let lhs_w: f64 = gw.iter().zip(&wt).map(|(a, b)| a * b).sum();
        assert!((lhs - lhs_w).abs() < 1e-12);
    }

    #[test]
    fn transpose_conv_upsamples() {
        let x = Tensor {
            c: 1,
            h: 2,
            w: 2,
            data: vec![1.0, 2.0, 3.0, 4.0],
        };
        let out = conv_transpose2x2(&x, &[1.0, 10.0, 100.0, 1000.0], &[0.5], 1);
        assert_eq!((out.h, out.w), (4, 4));
        assert_eq!(out.data[0], 1.5);
        assert_eq!(out.data[1], 10.5);
        assert_eq!(out.data[4], 100.5);
        assert_eq!(out.data[5 + 10], 4000.5);
    }

    #[test]
    fn maxpool_routes_gradient_to_winner() {
        let x = Tensor {
            c: 1,
            h: 2,
            w: 4,
            data: vec![1.0, 5.0, 2.0, 2.0, 3.0, 4.0, 2.0, 1.0],
        };
        let (p, arg) = maxpool2(&x);
        assert_eq!(p.data, vec![5.0, 2.0]);
        // tie resolves to the first element in raster order
        assert_eq!(arg, vec![1, 2]);
        let g = maxpool2_backward(&Tensor { c: 1, h: 1, w: 2, data: vec![1.0, 2.0] }, &arg, 1, 2, 4);
        assert_eq!(g.data, vec![0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }
}
