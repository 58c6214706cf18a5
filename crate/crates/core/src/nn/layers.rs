//! Forward and backward kernels of the layer kinds the U-Net is built from.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Scalar, Tensor4};
use crate::error::{bail, Result};

/// Trainable tensor with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<S> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<S>,
    pub grad: Vec<S>,
}

impl<S: Scalar> Param<S> {
    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            name: name.into(),
            shape,
            value: vec![S::zero(); len],
            grad: vec![S::zero(); len],
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = S::zero());
    }
}

/// Square-kernel, stride-1 convolution with "same" padding.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<S> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub weight: Param<S>,
    pub bias: Param<S>,
}

impl<S: Scalar> Conv2d<S> {
    pub fn new(name: &str, in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            weight: Param::zeros(
                format!("{name}.weight"),
                vec![out_channels, in_channels, kernel, kernel],
            ),
            bias: Param::zeros(format!("{name}.bias"), vec![out_channels]),
        }
    }

    pub fn pad(&self) -> usize {
        (self.kernel - 1) / 2
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    /// He-normal weights, zero biases.
    pub fn he_init(&mut self, rng: &mut impl Rng) {
        let std = (2.0 / self.fan_in() as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        for w in &mut self.weight.value {
            *w = S::of(normal.sample(rng));
        }
        self.bias.value.iter_mut().for_each(|b| *b = S::zero());
    }

    fn check_input(&self, x: &Tensor4<S>) -> Result<()> {
        if x.channels() != self.in_channels {
            bail!(
                Shape,
                "{} expects input [N, {}, H, W], got {:?}",
                self.weight.name,
                self.in_channels,
                x.shape()
            );
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor4<S>) -> Result<Tensor4<S>> {
        self.check_input(x)?;
        conv_forward(
            x,
            &self.weight.value,
            [self.out_channels, self.in_channels, self.kernel, self.kernel],
            &self.bias.value,
            self.pad(),
        )
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, x: &Tensor4<S>, dy: &Tensor4<S>) -> Result<Tensor4<S>> {
        self.check_input(x)?;
        let (k, p) = (self.kernel, self.pad());
        let [n, cin, h, w] = x.shape();
        let oh = h + 2 * p + 1 - k;
        let ow = w + 2 * p + 1 - k;
        if dy.shape() != [n, self.out_channels, oh, ow] {
            bail!(
                Shape,
                "{} output gradient {:?} does not match output [{n}, {}, {oh}, {ow}]",
                self.weight.name,
                dy.shape(),
                self.out_channels
            );
        }
        let kdim = cin * k * k;
        let ohw = oh * ow;
        let cout = self.out_channels;
        let mut dx = Tensor4::zeros(x.shape());
        let mut col = vec![S::zero(); kdim * ohw];
        let mut dcol = vec![S::zero(); kdim * ohw];
        for b in 0..n {
            let dyb = dy.item(b);
            for (o, db) in self.bias.grad.iter_mut().enumerate() {
                let mut s = S::zero();
                for v in &dyb[o * ohw..(o + 1) * ohw] {
                    s += *v;
                }
                *db += s;
            }
            let xb = x.item(b);
            let colb: &[S] = if k == 1 && p == 0 {
                xb
            } else {
                im2col(xb, cin, h, w, k, p, &mut col);
                &col
            };
            // dW[cout, kdim] += dy[cout, ohw] * col^T
            S::gemm(
                cout,
                ohw,
                kdim,
                S::one(),
                dyb,
                (ohw, 1),
                colb,
                (1, ohw),
                S::one(),
                &mut self.weight.grad,
                (kdim, 1),
            );
            // dcol[kdim, ohw] = W^T * dy
            let target: &mut [S] = if k == 1 && p == 0 {
                dx.item_mut(b)
            } else {
                &mut dcol
            };
            S::gemm(
                kdim,
                cout,
                ohw,
                S::one(),
                &self.weight.value,
                (1, kdim),
                dyb,
                (ohw, 1),
                S::zero(),
                target,
                (ohw, 1),
            );
            if !(k == 1 && p == 0) {
                col2im(&dcol, cin, h, w, k, p, dx.item_mut(b));
            }
        }
        Ok(dx)
    }
}

fn im2col<S: Scalar>(x: &[S], c: usize, h: usize, w: usize, k: usize, p: usize, col: &mut [S]) {
    let oh = h + 2 * p + 1 - k;
    let ow = w + 2 * p + 1 - k;
    let mut row = 0;
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let dst = &mut col[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = oy as isize + ky as isize - p as isize;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        line.iter_mut().for_each(|v| *v = S::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = ox as isize + kx as isize - p as isize;
                        *v = if ix < 0 || ix >= w as isize {
                            S::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

fn col2im<S: Scalar>(col: &[S], c: usize, h: usize, w: usize, k: usize, p: usize, dx: &mut [S]) {
    let oh = h + 2 * p + 1 - k;
    let ow = w + 2 * p + 1 - k;
    let mut row = 0;
    for ci in 0..c {
        let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let src = &col[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = oy as isize + ky as isize - p as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = ox as isize + kx as isize - p as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Stride-1 cross-correlation plus bias; `w` is `[out, in, kh, kw]` with `kh == kw`.
pub fn conv_forward<S: Scalar>(
    x: &Tensor4<S>,
    w: &[S],
    w_shape: [usize; 4],
    b: &[S],
    pad: usize,
) -> Result<Tensor4<S>> {
    let [cout, cin, k, kw] = w_shape;
    let [n, xc, h, wd] = x.shape();
    if k != kw || w.len() != cout * cin * k * k || b.len() != cout {
        bail!(
            Shape,
            "weights {w_shape:?} ({} values) with bias of {} values",
            w.len(),
            b.len()
        );
    }
    if xc != cin {
        bail!(Shape, "input {:?} does not match weights {w_shape:?}", x.shape());
    }
    if h + 2 * pad < k || wd + 2 * pad < k {
        bail!(Shape, "input {:?} smaller than kernel {k} with pad {pad}", x.shape());
    }
    let oh = h + 2 * pad + 1 - k;
    let ow = wd + 2 * pad + 1 - k;
    let ohw = oh * ow;
    let kdim = cin * k * k;
    let mut out = Tensor4::zeros([n, cout, oh, ow]);
    let mut col = vec![S::zero(); kdim * ohw];
    for bi in 0..n {
        let xb = x.item(bi);
        let colb: &[S] = if k == 1 && pad == 0 {
            xb
        } else {
            im2col(xb, cin, h, wd, k, pad, &mut col);
            &col
        };
        let ob = out.item_mut(bi);
        for (o, bias) in b.iter().enumerate() {
            ob[o * ohw..(o + 1) * ohw].iter_mut().for_each(|v| *v = *bias);
        }
        S::gemm(
            cout,
            kdim,
            ohw,
            S::one(),
            w,
            (kdim, 1),
            colb,
            (ohw, 1),
            S::one(),
            ob,
            (ohw, 1),
        );
    }
    Ok(out)
}

pub fn relu_forward<S: Scalar>(x: &Tensor4<S>) -> Tensor4<S> {
    let mut y = x.clone();
    y.data_mut().iter_mut().for_each(|v| {
        if !(*v > S::zero()) {
            *v = S::zero()
        }
    });
    y
}

/// Gradient passes where the forward output was positive.
pub fn relu_backward<S: Scalar>(y: &Tensor4<S>, dy: &Tensor4<S>) -> Tensor4<S> {
    let mut dx = dy.clone();
    for (g, v) in dx.data_mut().iter_mut().zip(y.data()) {
        if !(*v > S::zero()) {
            *g = S::zero();
        }
    }
    dx
}

/// 2x2 stride-2 max pooling; returns the output and the flat argmax of each window.
pub fn maxpool2_forward<S: Scalar>(x: &Tensor4<S>) -> Result<(Tensor4<S>, Vec<u32>)> {
    let [n, c, h, w] = x.shape();
    if h % 2 != 0 || w % 2 != 0 {
        bail!(Shape, "maxpool2 needs even spatial dims, got {:?}", x.shape());
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor4::zeros([n, c, oh, ow]);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    let src = x.data();
    let dst = out.data_mut();
    let mut o = 0;
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for idx in [best + 1, best + w, best + w + 1] {
                    if src[idx] > src[best] {
                        best = idx;
                    }
                }
                dst[o] = src[best];
                arg.push(best as u32);
                o += 1;
            }
        }
    }
    Ok((out, arg))
}

pub fn maxpool2_backward<S: Scalar>(in_shape: [usize; 4], arg: &[u32], dy: &Tensor4<S>) -> Tensor4<S> {
    let mut dx = Tensor4::zeros(in_shape);
    let d = dx.data_mut();
    for (g, &i) in dy.data().iter().zip(arg) {
        d[i as usize] += *g;
    }
    dx
}

pub fn upsample2_forward<S: Scalar>(x: &Tensor4<S>) -> Tensor4<S> {
    let [n, c, h, w] = x.shape();
    let mut out = Tensor4::zeros([n, c, 2 * h, 2 * w]);
    let src = x.data();
    let dst = out.data_mut();
    for plane in 0..n * c {
        for y in 0..2 * h {
            let srow = &src[plane * h * w + (y / 2) * w..][..w];
            let drow = &mut dst[plane * 4 * h * w + y * 2 * w..][..2 * w];
            for (x2, v) in drow.iter_mut().enumerate() {
                *v = srow[x2 / 2];
            }
        }
    }
    out
}

pub fn upsample2_backward<S: Scalar>(dy: &Tensor4<S>) -> Tensor4<S> {
    let [n, c, h2, w2] = dy.shape();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut dx = Tensor4::zeros([n, c, h, w]);
    let src = dy.data();
    let dst = dx.data_mut();
    for plane in 0..n * c {
        for y in 0..h2 {
            for x in 0..w2 {
                dst[plane * h * w + (y / 2) * w + x / 2] += src[plane * h2 * w2 + y * w2 + x];
            }
        }
    }
    dx
}

/// Channel concatenation `[a, b]`.
pub fn concat_forward<S: Scalar>(a: &Tensor4<S>, b: &Tensor4<S>) -> Result<Tensor4<S>> {
    let [n, ca, h, w] = a.shape();
    let [nb, cb, hb, wb] = b.shape();
    if (n, h, w) != (nb, hb, wb) {
        bail!(Shape, "cannot concat {:?} with {:?}", a.shape(), b.shape());
    }
    let mut out = Tensor4::zeros([n, ca + cb, h, w]);
    for i in 0..n {
        let dst = out.item_mut(i);
        let (left, right) = dst.split_at_mut(ca * h * w);
        left.copy_from_slice(a.item(i));
        right.copy_from_slice(b.item(i));
    }
    Ok(out)
}

pub fn concat_backward<S: Scalar>(ca: usize, dy: &Tensor4<S>) -> (Tensor4<S>, Tensor4<S>) {
    let [n, c, h, w] = dy.shape();
    let mut da = Tensor4::zeros([n, ca, h, w]);
    let mut db = Tensor4::zeros([n, c - ca, h, w]);
    for i in 0..n {
        let (left, right) = dy.item(i).split_at(ca * h * w);
        da.item_mut(i).copy_from_slice(left);
        db.item_mut(i).copy_from_slice(right);
    }
    (da, db)
}
