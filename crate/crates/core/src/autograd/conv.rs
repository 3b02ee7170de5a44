//! Direct 2-D convolution over an explicitly padded input, plus the affine
//! map used by the channel-attention MLP.

use crate::error::{invalid, shape_err, Result};
use crate::tensor::{Element, Shape, Tensor};

use super::graph::{ConvSpec, Graph, GradSink, Op, PadMode, Var};

/// Source coordinate of padded coordinate `p` (which may lie in `[-pad, len + pad)`).
#[inline]
pub(crate) fn reflect_index(p: isize, len: usize) -> usize {
    let n = len as isize;
    let mut q = p;
    if q < 0 {
        q = -q;
    }
    if q >= n {
        q = 2 * (n - 1) - q;
    }
    q as usize
}

/// Copies `x` into a buffer padded by `pad` on every side.
fn pad_input<T: Element>(x: &[T], s: Shape, pad: usize, mode: PadMode) -> Vec<T> {
    if pad == 0 {
        return x.to_vec();
    }
    let [n, c, h, w] = s.0;
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    let mut out = vec![T::zero(); n * c * hp * wp];
    for plane in 0..n * c {
        let src = &x[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * hp * wp..(plane + 1) * hp * wp];
        match mode {
            PadMode::Zeros => {
                for y in 0..h {
                    dst[(y + pad) * wp + pad..(y + pad) * wp + pad + w].copy_from_slice(&src[y * w..(y + 1) * w]);
                }
            }
            PadMode::Reflect => {
                for py in 0..hp {
                    let sy = reflect_index(py as isize - pad as isize, h);
                    for px in 0..wp {
                        let sx = reflect_index(px as isize - pad as isize, w);
                        dst[py * wp + px] = src[sy * w + sx];
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`pad_input`]: folds a padded-shape gradient back onto `gx`.
fn unpad_accumulate<T: Element>(gp: &[T], gx: &mut [T], s: Shape, pad: usize, mode: PadMode) {
    let [n, c, h, w] = s.0;
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    for plane in 0..n * c {
        let src = &gp[plane * hp * wp..(plane + 1) * hp * wp];
        let dst = &mut gx[plane * h * w..(plane + 1) * h * w];
        match mode {
            PadMode::Zeros => {
                for y in 0..h {
                    let row = &src[(y + pad) * wp + pad..(y + pad) * wp + pad + w];
                    for (d, &v) in dst[y * w..(y + 1) * w].iter_mut().zip(row) {
                        *d += v;
                    }
                }
            }
            PadMode::Reflect => {
                for py in 0..hp {
                    let sy = reflect_index(py as isize - pad as isize, h);
                    for px in 0..wp {
                        let sx = reflect_index(px as isize - pad as isize, w);
                        dst[sy * w + sx] += src[py * wp + px];
                    }
                }
            }
        }
    }
}

pub(crate) fn conv_out_dim(len: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = len + 2 * pad;
    if padded < k || stride == 0 {
        return None;
    }
    Some((padded - k) / stride + 1)
}

fn check_conv(xs: Shape, ws: Shape, bias: Option<Shape>, spec: ConvSpec) -> Result<Shape> {
    let [n, c, h, w] = xs.0;
    let [oc, ic, kh, kw] = ws.0;
    if ic != c {
        return Err(shape_err(
            "conv2d",
            format!("input channels: weight {ws} expects {ic}, input {xs} has {c}"),
        ));
    }
    if let Some(bs) = bias {
        if bs.numel() != oc {
            return Err(shape_err(
                "conv2d",
                format!("bias length {} does not match output channels {oc}", bs.numel()),
            ));
        }
    }
    if spec.stride == 0 {
        return Err(invalid("conv2d: stride must be at least 1"));
    }
    if spec.mode == PadMode::Reflect && spec.padding > 0 {
        if spec.padding >= kh || spec.padding >= kw {
            return Err(invalid(format!(
                "conv2d: reflect padding {} must be smaller than the kernel extent {kh}x{kw}",
                spec.padding
            )));
        }
        if spec.padding >= h || spec.padding >= w {
            return Err(invalid(format!(
                "conv2d: reflect padding {} needs input height and width above it, got {h}x{w}",
                spec.padding
            )));
        }
    }
    let oh = conv_out_dim(h, kh, spec.stride, spec.padding)
        .ok_or_else(|| shape_err("conv2d", format!("height: kernel {kh} exceeds padded input {}", h + 2 * spec.padding)))?;
    let ow = conv_out_dim(w, kw, spec.stride, spec.padding)
        .ok_or_else(|| shape_err("conv2d", format!("width: kernel {kw} exceeds padded input {}", w + 2 * spec.padding)))?;
    Ok(Shape::new(n, oc, oh, ow))
}

impl<T: Element> Graph<T> {
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let (xi, wi) = (self.idx(x)?, self.idx(weight)?);
        let bi = bias.map(|b| self.idx(b)).transpose()?;
        let xs = self.shape(x);
        let ws = self.shape(weight);
        let os = check_conv(xs, ws, bias.map(|b| self.shape(b)), spec)?;

        let [n, c, h, w] = xs.0;
        let [oc, _, kh, kw] = ws.0;
        let [_, _, oh, ow] = os.0;
        let pad = spec.padding;
        let (hp, wp) = (h + 2 * pad, w + 2 * pad);
        let s = spec.stride;

        let xp = pad_input(self.value(x).data(), xs, pad, spec.mode);
        let wv = self.value(weight).data();
        let bv = bias.map(|b| self.value(b).data());
        let mut out = vec![T::zero(); os.numel()];

        for bn in 0..n {
            for o in 0..oc {
                let dst = &mut out[(bn * oc + o) * oh * ow..(bn * oc + o + 1) * oh * ow];
                if let Some(b) = bv {
                    dst.fill(b[o]);
                }
                for ci in 0..c {
                    let src = &xp[(bn * c + ci) * hp * wp..(bn * c + ci + 1) * hp * wp];
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let wk = wv[((o * c + ci) * kh + ky) * kw + kx];
                            if wk == T::zero() {
                                continue;
                            }
                            for oy in 0..oh {
                                let row = &src[(oy * s + ky) * wp..];
                                let drow = &mut dst[oy * ow..(oy + 1) * ow];
                                if s == 1 {
                                    for (d, &v) in drow.iter_mut().zip(&row[kx..kx + ow]) {
                                        *d += wk * v;
                                    }
                                } else {
                                    for (ox, d) in drow.iter_mut().enumerate() {
                                        *d += wk * row[ox * s + kx];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        self.count_macs((os.numel() * c * kh * kw) as u64);
        let value = Tensor::from_vec(os, out)?;
        let mut inputs = vec![xi, wi];
        inputs.extend(bi);
        self.push("conv2d", value, Op::Conv2d { x: xi, w: wi, b: bi, spec }, &inputs)
    }

    /// `x` is `(N, F, 1, 1)`, `weight` is `(G, F, 1, 1)`, `bias` has `G` entries;
    /// the result is `(N, G, 1, 1)`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let (xi, wi, bi) = (self.idx(x)?, self.idx(weight)?, self.idx(bias)?);
        let (xs, ws, bs) = (self.shape(x), self.shape(weight), self.shape(bias));
        let f = xs.c() * xs.h() * xs.w();
        let [g_out, wf, wh, ww] = ws.0;
        if wf * wh * ww != f {
            return Err(shape_err("linear", format!("features: input {xs} has {f}, weight {ws} expects {}", wf * wh * ww)));
        }
        if bs.numel() != g_out {
            return Err(shape_err("linear", format!("bias length {} vs {g_out} outputs", bs.numel())));
        }
        let n = xs.n();
        let (xv, wv, bv) = (self.value(x).data(), self.value(weight).data(), self.value(bias).data());
        let mut out = vec![T::zero(); n * g_out];
        for r in 0..n {
            let xr = &xv[r * f..(r + 1) * f];
            for o in 0..g_out {
                let wr = &wv[o * f..(o + 1) * f];
                out[r * g_out + o] = bv[o] + xr.iter().zip(wr).map(|(&a, &b)| a * b).sum::<T>();
            }
        }
        self.count_macs((n * g_out * f) as u64);
        let value = Tensor::from_vec(Shape::new(n, g_out, 1, 1), out)?;
        self.push("linear", value, Op::Linear { x: xi, w: wi, b: bi }, &[xi, wi, bi])
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    spec: ConvSpec,
    g: &[T],
    os: Shape,
    xi: usize,
    wi: usize,
    bi: Option<usize>,
    sink: &mut GradSink<'_, T>,
) {
    let xs = x.shape();
    let [n, c, h, wd] = xs.0;
    let [oc, _, kh, kw] = w.shape().0;
    let [_, _, oh, ow] = os.0;
    let pad = spec.padding;
    let (hp, wp) = (h + 2 * pad, wd + 2 * pad);
    let s = spec.stride;

    if let Some(b) = bi {
        if let Some(gb) = sink.buf(b) {
            for bn in 0..n {
                for o in 0..oc {
                    let plane = &g[(bn * oc + o) * oh * ow..(bn * oc + o + 1) * oh * ow];
                    gb[o] += plane.iter().copied().sum::<T>();
                }
            }
        }
    }

    let need_w = sink.wants(wi);
    let need_x = sink.wants(xi);
    if !need_w && !need_x {
        return;
    }

    if need_w {
        let xp = pad_input(x.data(), xs, pad, spec.mode);
        let gw = sink.buf(wi).unwrap();
        for bn in 0..n {
            for o in 0..oc {
                let gplane = &g[(bn * oc + o) * oh * ow..(bn * oc + o + 1) * oh * ow];
                for ci in 0..c {
                    let src = &xp[(bn * c + ci) * hp * wp..(bn * c + ci + 1) * hp * wp];
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let mut acc = T::zero();
                            for oy in 0..oh {
                                let row = &src[(oy * s + ky) * wp..];
                                let grow = &gplane[oy * ow..(oy + 1) * ow];
                                if s == 1 {
                                    acc += grow.iter().zip(&row[kx..kx + ow]).map(|(&a, &b)| a * b).sum::<T>();
                                } else {
                                    for (ox, &gv) in grow.iter().enumerate() {
                                        acc += gv * row[ox * s + kx];
                                    }
                                }
                            }
                            gw[((o * c + ci) * kh + ky) * kw + kx] += acc;
                        }
                    }
                }
            }
        }
    }

    if need_x {
        let wv = w.data();
        let mut gp = vec![T::zero(); n * c * hp * wp];
        for bn in 0..n {
            for o in 0..oc {
                let gplane = &g[(bn * oc + o) * oh * ow..(bn * oc + o + 1) * oh * ow];
                for ci in 0..c {
                    let dst = &mut gp[(bn * c + ci) * hp * wp..(bn * c + ci + 1) * hp * wp];
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let wk = wv[((o * c + ci) * kh + ky) * kw + kx];
                            if wk == T::zero() {
                                continue;
                            }
                            for oy in 0..oh {
                                let grow = &gplane[oy * ow..(oy + 1) * ow];
                                let base = (oy * s + ky) * wp + kx;
                                if s == 1 {
                                    for (d, &gv) in dst[base..base + ow].iter_mut().zip(grow) {
                                        *d += wk * gv;
                                    }
                                } else {
                                    for (ox, &gv) in grow.iter().enumerate() {
                                        dst[base + ox * s] += wk * gv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        let gx = sink.buf(xi).unwrap();
        unpad_accumulate(&gp, gx, xs, pad, spec.mode);
    }
}

pub(crate) fn linear_backward<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    g: &[T],
    xi: usize,
    wi: usize,
    bi: usize,
    sink: &mut GradSink<'_, T>,
) {
    let n = x.shape().n();
    let f = x.shape().numel() / n;
    let g_out = w.shape().n();
    let (xv, wv) = (x.data(), w.data());
    if let Some(gb) = sink.buf(bi) {
        for r in 0..n {
            for o in 0..g_out {
                gb[o] += g[r * g_out + o];
            }
        }
    }
    if let Some(gw) = sink.buf(wi) {
        for r in 0..n {
            for o in 0..g_out {
                let go = g[r * g_out + o];
                for k in 0..f {
                    gw[o * f + k] += go * xv[r * f + k];
                }
            }
        }
    }
    if let Some(gx) = sink.buf(xi) {
        for r in 0..n {
            for o in 0..g_out {
                let go = g[r * g_out + o];
                for k in 0..f {
                    gx[r * f + k] += go * wv[o * f + k];
                }
            }
        }
    }
}
