use crate::error::{invalid, shape_err, Result};
use crate::tensor::{Element, Shape, Tensor};

use super::graph::{Graph, GradSink, Op, PoolKind, PoolScope, StatKind, Var};

/// Degenerate-deviation guard: below this the deviation is offset by the same amount.
pub const STD_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct PoolGeom {
    kh: usize,
    kw: usize,
    stride: usize,
    oh: usize,
    ow: usize,
}

/// `(outer, len, inner)` split of a shape around `axis`.
fn axis_split(s: Shape, axis: usize) -> (usize, usize, usize) {
    let outer: usize = s.0[..axis].iter().product();
    let inner: usize = s.0[axis + 1..].iter().product();
    (outer, s.0[axis], inner)
}

impl<T: Element> Graph<T> {
    /// Softmax along `axis` (0..4), computed with max subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xi = self.idx(x)?;
        let s = self.shape(x);
        if axis >= 4 {
            return Err(invalid(format!("softmax: axis {axis} out of range for rank-4 tensor {s}")));
        }
        let (outer, len, inner) = axis_split(s, axis);
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); s.numel()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * len + k) * inner + i;
                let m = (0..len).map(|k| xv[at(k)]).fold(T::neg_infinity(), T::max);
                let mut z = T::zero();
                for k in 0..len {
                    let e = (xv[at(k)] - m).exp();
                    out[at(k)] = e;
                    z += e;
                }
                for k in 0..len {
                    out[at(k)] = out[at(k)] / z;
                }
            }
        }
        let value = Tensor::from_vec(s, out)?;
        self.push("softmax", value, Op::Softmax { a: xi, axis }, &[xi])
    }

    /// Average or max pooling. Windows that would run past the border are
    /// dropped (floor rule), so the output is `floor((H - k) / stride) + 1`.
    /// Max ties go to the lowest linear index.
    pub fn pool2d(&mut self, x: Var, kind: PoolKind, scope: PoolScope) -> Result<Var> {
        let xi = self.idx(x)?;
        let s = self.shape(x);
        let [n, c, h, w] = s.0;
        let (kh, kw, stride) = match scope {
            PoolScope::Global => (h, w, 1),
            PoolScope::Window { k, stride } => (k, k, stride),
        };
        if kh == 0 || kw == 0 || stride == 0 || kh > h || kw > w {
            return Err(invalid(format!(
                "pool2d: empty window ({kh}x{kw}, stride {stride}) on input {s}"
            )));
        }
        let geom = PoolGeom {
            kh,
            kw,
            stride,
            oh: (h - kh) / stride + 1,
            ow: (w - kw) / stride + 1,
        };
        let os = Shape::new(n, c, geom.oh, geom.ow);
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); os.numel()];
        let mut argmax = Vec::new();
        if kind == PoolKind::Max {
            argmax.reserve(os.numel());
        }
        let inv = T::one() / T::c((kh * kw) as f64);
        let mut o = 0;
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..geom.oh {
                for ox in 0..geom.ow {
                    let (y0, x0) = (oy * stride, ox * stride);
                    match kind {
                        PoolKind::Avg => {
                            let mut acc = T::zero();
                            for y in y0..y0 + kh {
                                acc += xv[base + y * w + x0..base + y * w + x0 + kw].iter().copied().sum::<T>();
                            }
                            out[o] = acc * inv;
                        }
                        PoolKind::Max => {
                            let mut best = base + y0 * w + x0;
                            for y in y0..y0 + kh {
                                for xx in x0..x0 + kw {
                                    let j = base + y * w + xx;
                                    if xv[j] > xv[best] {
                                        best = j;
                                    }
                                }
                            }
                            out[o] = xv[best];
                            argmax.push(best);
                        }
                    }
                    o += 1;
                }
            }
        }
        let value = Tensor::from_vec(os, out)?;
        self.push("pool2d", value, Op::Pool { a: xi, kind, geom, argmax }, &[xi])
    }

    /// Per-pixel mean or max across channels: `(N, C, H, W) -> (N, 1, H, W)`.
    pub fn channel_stats(&mut self, x: Var, kind: StatKind) -> Result<Var> {
        let xi = self.idx(x)?;
        let s = self.shape(x);
        let [n, c, h, w] = s.0;
        if c == 0 {
            return Err(shape_err("channel_stats", "input has no channels"));
        }
        let plane = h * w;
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); n * plane];
        let mut argmax = Vec::new();
        for bn in 0..n {
            for p in 0..plane {
                let at = |ch: usize| (bn * c + ch) * plane + p;
                match kind {
                    StatKind::Mean => {
                        out[bn * plane + p] = (0..c).map(|ch| xv[at(ch)]).sum::<T>() / T::c(c as f64);
                    }
                    StatKind::Max => {
                        let mut best = at(0);
                        for ch in 1..c {
                            if xv[at(ch)] > xv[best] {
                                best = at(ch);
                            }
                        }
                        out[bn * plane + p] = xv[best];
                        argmax.push(best);
                    }
                }
            }
        }
        let value = Tensor::from_vec(Shape::new(n, 1, h, w), out)?;
        self.push("channel_stats", value, Op::ChannelStats { a: xi, kind, argmax }, &[xi])
    }

    /// Per-sample, per-channel mean over the spatial axes: `(N, C, 1, 1)`.
    pub fn spatial_mean(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let s = self.shape(x);
        let plane = s.h() * s.w();
        let xv = self.value(x).data();
        let out: Vec<T> = xv
            .chunks(plane)
            .map(|p| p.iter().copied().sum::<T>() / T::c(plane as f64))
            .collect();
        let value = Tensor::from_vec(Shape::new(s.n(), s.c(), 1, 1), out)?;
        self.push("spatial_mean", value, Op::SpatialMean { a: xi }, &[xi])
    }

    /// Per-sample, per-channel population standard deviation over the spatial
    /// axes. A deviation below [`STD_EPS`] is offset by `STD_EPS` so callers
    /// can divide by it; such planes are counted in `degenerate_norms`.
    pub fn spatial_std(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let s = self.shape(x);
        let plane = s.h() * s.w();
        let eps = T::c(STD_EPS);
        let xv = self.value(x).data();
        let mut mean = Vec::with_capacity(s.n() * s.c());
        let mut raw_std = Vec::with_capacity(s.n() * s.c());
        let mut out = Vec::with_capacity(s.n() * s.c());
        let mut degenerate = 0;
        for p in xv.chunks(plane) {
            let m = p.iter().copied().sum::<T>() / T::c(plane as f64);
            let var = p.iter().map(|&v| (v - m) * (v - m)).sum::<T>() / T::c(plane as f64);
            let sd = var.sqrt();
            mean.push(m);
            raw_std.push(sd);
            if sd < eps {
                degenerate += 1;
                out.push(sd + eps);
            } else {
                out.push(sd);
            }
        }
        self.count_degenerate(degenerate);
        let value = Tensor::from_vec(Shape::new(s.n(), s.c(), 1, 1), out)?;
        self.push("spatial_std", value, Op::SpatialStd { a: xi, mean, raw_std }, &[xi])
    }
}

pub(crate) fn softmax_backward<T: Element>(y: &Tensor<T>, axis: usize, g: &[T], ai: usize, sink: &mut GradSink<'_, T>) {
    let Some(ga) = sink.buf(ai) else { return };
    let (outer, len, inner) = axis_split(y.shape(), axis);
    let yv = y.data();
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * len + k) * inner + i;
            let dot: T = (0..len).map(|k| g[at(k)] * yv[at(k)]).sum();
            for k in 0..len {
                ga[at(k)] += yv[at(k)] * (g[at(k)] - dot);
            }
        }
    }
}

pub(crate) fn pool_backward<T: Element>(
    kind: PoolKind,
    geom: &PoolGeom,
    argmax: &[usize],
    xs: Shape,
    g: &[T],
    ai: usize,
    sink: &mut GradSink<'_, T>,
) {
    let Some(ga) = sink.buf(ai) else { return };
    match kind {
        PoolKind::Max => {
            for (&j, &gv) in argmax.iter().zip(g) {
                ga[j] += gv;
            }
        }
        PoolKind::Avg => {
            let [n, c, h, w] = xs.0;
            let inv = T::one() / T::c((geom.kh * geom.kw) as f64);
            let mut o = 0;
            for plane in 0..n * c {
                let base = plane * h * w;
                for oy in 0..geom.oh {
                    for ox in 0..geom.ow {
                        let share = g[o] * inv;
                        let (y0, x0) = (oy * geom.stride, ox * geom.stride);
                        for y in y0..y0 + geom.kh {
                            for d in &mut ga[base + y * w + x0..base + y * w + x0 + geom.kw] {
                                *d += share;
                            }
                        }
                        o += 1;
                    }
                }
            }
        }
    }
}

pub(crate) fn channel_stats_backward<T: Element>(
    kind: StatKind,
    argmax: &[usize],
    xs: Shape,
    g: &[T],
    ai: usize,
    sink: &mut GradSink<'_, T>,
) {
    let Some(ga) = sink.buf(ai) else { return };
    let [n, c, h, w] = xs.0;
    let plane = h * w;
    match kind {
        StatKind::Max => {
            for (&j, &gv) in argmax.iter().zip(g) {
                ga[j] += gv;
            }
        }
        StatKind::Mean => {
            let inv = T::one() / T::c(c as f64);
            for bn in 0..n {
                for ch in 0..c {
                    for p in 0..plane {
                        ga[(bn * c + ch) * plane + p] += g[bn * plane + p] * inv;
                    }
                }
            }
        }
    }
}

pub(crate) fn spatial_mean_backward<T: Element>(xs: Shape, g: &[T], ai: usize, sink: &mut GradSink<'_, T>) {
    let Some(ga) = sink.buf(ai) else { return };
    let plane = xs.h() * xs.w();
    let inv = T::one() / T::c(plane as f64);
    for (chunk, &gv) in ga.chunks_mut(plane).zip(g) {
        for d in chunk {
            *d += gv * inv;
        }
    }
}

pub(crate) fn spatial_std_backward<T: Element>(
    x: &Tensor<T>,
    mean: &[T],
    raw_std: &[T],
    g: &[T],
    ai: usize,
    sink: &mut GradSink<'_, T>,
) {
    let Some(ga) = sink.buf(ai) else { return };
    let plane = x.shape().h() * x.shape().w();
    let np = T::c(plane as f64);
    for (k, (gchunk, xchunk)) in ga.chunks_mut(plane).zip(x.data().chunks(plane)).enumerate() {
        // d sd / d x_i = (x_i - mean) / (n sd); a zero deviation has zero slope
        // because every centered value is zero as well.
        if raw_std[k] == T::zero() {
            continue;
        }
        let f = g[k] / (np * raw_std[k]);
        for (d, &v) in gchunk.iter_mut().zip(xchunk) {
            *d += f * (v - mean[k]);
        }
    }
}
