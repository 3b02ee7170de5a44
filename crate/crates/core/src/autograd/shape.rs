//! Layout operations. Most are index gathers whose adjoint is a scatter-add.

use std::sync::Arc;

use crate::error::{invalid, shape_err, Result};
use crate::tensor::{Element, Shape, Tensor};

use super::conv::reflect_index;
use super::graph::{Graph, GradSink, Op, PoolKind, PoolScope, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ResizeFactor {
    Down2,
    Up2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ResizeMode {
    Bilinear,
    Nearest,
}

/// Source coordinate and weights for one axis of a 2x bilinear upsample
/// (half-pixel centers, edge clamped).
fn up2_taps(len: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * len)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

impl<T: Element> Graph<T> {
    /// Gathers `out[i] = x[index[i]]`.
    pub fn gather(&mut self, x: Var, out_shape: Shape, index: Arc<Vec<usize>>) -> Result<Var> {
        let xi = self.idx(x)?;
        if index.len() != out_shape.numel() {
            return Err(shape_err("gather", format!("{} indices for output {out_shape}", index.len())));
        }
        let xv = self.value(x).data();
        if let Some(&bad) = index.iter().find(|&&j| j >= xv.len()) {
            return Err(shape_err("gather", format!("index {bad} out of range for {}", self.shape(x))));
        }
        let out: Vec<T> = index.iter().map(|&j| xv[j]).collect();
        let value = Tensor::from_vec(out_shape, out)?;
        self.push("gather", value, Op::Gather { a: xi, index }, &[xi])
    }

    pub fn reshape(&mut self, x: Var, shape: Shape) -> Result<Var> {
        let xi = self.idx(x)?;
        let value = self.value(x).clone().reshape(shape)?;
        self.push("reshape", value, Op::Reshape { a: xi }, &[xi])
    }

    /// Reorders axes: output axis `k` is input axis `axes[k]`.
    pub fn permute(&mut self, x: Var, axes: [usize; 4]) -> Result<Var> {
        let s = self.shape(x);
        let mut seen = [false; 4];
        for &a in &axes {
            if a >= 4 || seen[a] {
                return Err(invalid(format!("permute: {axes:?} is not a permutation of 0..4")));
            }
            seen[a] = true;
        }
        let st = s.strides();
        let os = Shape([s.0[axes[0]], s.0[axes[1]], s.0[axes[2]], s.0[axes[3]]]);
        let src_st = [st[axes[0]], st[axes[1]], st[axes[2]], st[axes[3]]];
        let mut index = Vec::with_capacity(s.numel());
        for a in 0..os.0[0] {
            for b in 0..os.0[1] {
                for c in 0..os.0[2] {
                    for d in 0..os.0[3] {
                        index.push(a * src_st[0] + b * src_st[1] + c * src_st[2] + d * src_st[3]);
                    }
                }
            }
        }
        self.gather(x, os, Arc::new(index))
    }

    /// Spatial crop of `h x w` starting at `(top, left)`.
    pub fn crop(&mut self, x: Var, top: usize, left: usize, h: usize, w: usize) -> Result<Var> {
        let s = self.shape(x);
        let [n, c, sh, sw] = s.0;
        if top + h > sh || left + w > sw {
            return Err(shape_err("crop", format!("{h}x{w} at ({top},{left}) exceeds {s}")));
        }
        let mut index = Vec::with_capacity(n * c * h * w);
        for plane in 0..n * c {
            for y in 0..h {
                for xx in 0..w {
                    index.push(plane * sh * sw + (top + y) * sw + left + xx);
                }
            }
        }
        self.gather(x, Shape::new(n, c, h, w), Arc::new(index))
    }

    /// Reflect padding on the bottom and right edges (mirror without repeating the edge).
    pub fn pad_reflect(&mut self, x: Var, bottom: usize, right: usize) -> Result<Var> {
        let s = self.shape(x);
        let [n, c, h, w] = s.0;
        if bottom == 0 && right == 0 {
            return Ok(x);
        }
        if bottom >= h.max(1) || right >= w.max(1) {
            return Err(invalid(format!(
                "pad_reflect: padding ({bottom}, {right}) must be smaller than the input size {h}x{w}"
            )));
        }
        let (hp, wp) = (h + bottom, w + right);
        let mut index = Vec::with_capacity(n * c * hp * wp);
        for plane in 0..n * c {
            for y in 0..hp {
                let sy = reflect_index(y as isize, h);
                for xx in 0..wp {
                    index.push(plane * h * w + sy * w + reflect_index(xx as isize, w));
                }
            }
        }
        self.gather(x, Shape::new(n, c, hp, wp), Arc::new(index))
    }

    /// Concatenates along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| invalid("concat_channels: nothing to concatenate"))?;
        let s0 = self.shape(first);
        let mut idxs = Vec::with_capacity(parts.len());
        let mut c_total = 0;
        for &p in parts {
            idxs.push(self.idx(p)?);
            let s = self.shape(p);
            if (s.n(), s.h(), s.w()) != (s0.n(), s0.h(), s0.w()) {
                return Err(shape_err("concat_channels", format!("{s} vs {s0}")));
            }
            c_total += s.c();
        }
        let [n, _, h, w] = s0.0;
        let plane = h * w;
        let mut out = Vec::with_capacity(n * c_total * plane);
        for bn in 0..n {
            for &p in parts {
                let c = self.shape(p).c();
                out.extend_from_slice(&self.value(p).data()[bn * c * plane..(bn + 1) * c * plane]);
            }
        }
        let value = Tensor::from_vec(Shape::new(n, c_total, h, w), out)?;
        self.push("concat", value, Op::Concat { parts: idxs.clone() }, &idxs)
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x);
        let [n, c, h, w] = s.0;
        if start + len > c {
            return Err(shape_err("slice_channels", format!("channels {start}..{} of {s}", start + len)));
        }
        let plane = h * w;
        let mut index = Vec::with_capacity(n * len * plane);
        for bn in 0..n {
            let base = (bn * c + start) * plane;
            index.extend(base..base + len * plane);
        }
        self.gather(x, Shape::new(n, len, h, w), Arc::new(index))
    }

    /// 2x spatial resize. Bilinear down2 is the mean of each 2x2 block;
    /// bilinear up2 uses half-pixel centers with clamped edges.
    pub fn resize2d(&mut self, x: Var, factor: ResizeFactor, mode: ResizeMode) -> Result<Var> {
        let s = self.shape(x);
        let [n, c, h, w] = s.0;
        match factor {
            ResizeFactor::Down2 => {
                if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
                    return Err(shape_err("resize2d", format!("down2 needs even height and width, got {s}")));
                }
                match mode {
                    ResizeMode::Bilinear => self.pool2d(x, PoolKind::Avg, PoolScope::Window { k: 2, stride: 2 }),
                    ResizeMode::Nearest => {
                        let (oh, ow) = (h / 2, w / 2);
                        let mut index = Vec::with_capacity(n * c * oh * ow);
                        for plane in 0..n * c {
                            for y in 0..oh {
                                for xx in 0..ow {
                                    index.push(plane * h * w + 2 * y * w + 2 * xx);
                                }
                            }
                        }
                        self.gather(x, Shape::new(n, c, oh, ow), Arc::new(index))
                    }
                }
            }
            ResizeFactor::Up2 => match mode {
                ResizeMode::Nearest => {
                    let (oh, ow) = (2 * h, 2 * w);
                    let mut index = Vec::with_capacity(n * c * oh * ow);
                    for plane in 0..n * c {
                        for y in 0..oh {
                            for xx in 0..ow {
                                index.push(plane * h * w + (y / 2) * w + xx / 2);
                            }
                        }
                    }
                    self.gather(x, Shape::new(n, c, oh, ow), Arc::new(index))
                }
                ResizeMode::Bilinear => {
                    let xi = self.idx(x)?;
                    let (ty, tx) = (up2_taps(h), up2_taps(w));
                    let xv = self.value(x).data();
                    let (oh, ow) = (2 * h, 2 * w);
                    let mut out = Vec::with_capacity(n * c * oh * ow);
                    for plane in 0..n * c {
                        let p = &xv[plane * h * w..(plane + 1) * h * w];
                        for &(y0, y1, ly) in &ty {
                            let (ly, hy) = (T::c(ly), T::c(1.0 - ly));
                            for &(x0, x1, lx) in &tx {
                                let (lx, hx) = (T::c(lx), T::c(1.0 - lx));
                                let top = p[y0 * w + x0] * hx + p[y0 * w + x1] * lx;
                                let bot = p[y1 * w + x0] * hx + p[y1 * w + x1] * lx;
                                out.push(top * hy + bot * ly);
                            }
                        }
                    }
                    let value = Tensor::from_vec(Shape::new(n, c, oh, ow), out)?;
                    self.push("bilinear_up2", value, Op::BilinearUp2 { a: xi }, &[xi])
                }
            },
        }
    }
}

pub(crate) fn bilinear_up2_backward<T: Element>(xs: Shape, g: &[T], ai: usize, sink: &mut GradSink<'_, T>) {
    let Some(ga) = sink.buf(ai) else { return };
    let [n, c, h, w] = xs.0;
    let (ty, tx) = (up2_taps(h), up2_taps(w));
    let ow = 2 * w;
    for plane in 0..n * c {
        let gp = &mut ga[plane * h * w..(plane + 1) * h * w];
        let go = &g[plane * 4 * h * w..(plane + 1) * 4 * h * w];
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            let (ly, hy) = (T::c(ly), T::c(1.0 - ly));
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let (lx, hx) = (T::c(lx), T::c(1.0 - lx));
                let v = go[oy * ow + ox];
                gp[y0 * w + x0] += v * hy * hx;
                gp[y0 * w + x1] += v * hy * lx;
                gp[y1 * w + x0] += v * ly * hx;
                gp[y1 * w + x1] += v * ly * lx;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resize_anchors() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 3.0, 5.0, 7.0]).unwrap());
        let d = g.resize2d(x, ResizeFactor::Down2, ResizeMode::Bilinear).unwrap();
        assert_eq!(g.value(d).data(), &[4.0]);

        let one = g.input(Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![2.5]).unwrap());
        let u = g.resize2d(one, ResizeFactor::Up2, ResizeMode::Nearest).unwrap();
        assert_eq!(g.value(u).data(), &[2.5; 4]);

        let c = g.input(Tensor::full(Shape::new(2, 3, 4, 6), 0.3));
        for f in [ResizeFactor::Down2, ResizeFactor::Up2] {
            for m in [ResizeMode::Bilinear, ResizeMode::Nearest] {
                let r = g.resize2d(c, f, m).unwrap();
                assert!(g.value(r).data().iter().all(|&v| (v - 0.3).abs() < 1e-15), "{f:?} {m:?}");
            }
        }
        let odd = g.input(Tensor::zeros(Shape::new(1, 1, 3, 4)));
        assert!(g.resize2d(odd, ResizeFactor::Down2, ResizeMode::Nearest).is_err());
    }

    #[test]
    fn up_then_down_preserves_shape() {
        let mut g = Graph::<f32>::new();
        let x = g.input(Tensor::from_fn(Shape::new(1, 2, 3, 5), |[_, c, h, w]| (c + h * w) as f32));
        let u = g.resize2d(x, ResizeFactor::Up2, ResizeMode::Bilinear).unwrap();
        let d = g.resize2d(u, ResizeFactor::Down2, ResizeMode::Bilinear).unwrap();
        assert_eq!(g.shape(d), g.shape(x));
    }

    #[test]
    fn permute_and_reshape() {
        let mut g = Graph::<f64>::new();
        let t = Tensor::from_fn(Shape::new(2, 3, 4, 5), |[a, b, c, d]| (a * 1000 + b * 100 + c * 10 + d) as f64);
        let x = g.input(t.clone());
        let p = g.permute(x, [0, 2, 3, 1]).unwrap();
        assert_eq!(g.shape(p), Shape::new(2, 4, 5, 3));
        assert_eq!(g.value(p).at([1, 2, 3, 0]), t.at([1, 0, 2, 3]));
        let back = g.permute(p, [0, 3, 1, 2]).unwrap();
        assert_eq!(g.value(back), &t);
        assert!(g.permute(x, [0, 0, 1, 2]).is_err());
        let r = g.reshape(x, Shape::new(1, 6, 20, 1)).unwrap();
        assert_eq!(g.value(r).data(), t.data());
    }

    #[test]
    fn pad_reflect_and_crop() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![1.0, 2.0, 3.0]).unwrap());
        let p = g.pad_reflect(x, 0, 2).unwrap();
        assert_eq!(g.value(p).data(), &[1.0, 2.0, 3.0, 2.0, 1.0]);
        let c = g.crop(p, 0, 1, 1, 3).unwrap();
        assert_eq!(g.value(c).data(), &[2.0, 3.0, 2.0]);
        assert!(g.pad_reflect(x, 0, 3).is_err());
    }

    #[test]
    fn concat_and_slice() {
        let mut g = Graph::<f64>::new();
        let a = g.input(Tensor::full(Shape::new(2, 1, 2, 2), 1.0));
        let b = g.input(Tensor::full(Shape::new(2, 2, 2, 2), 2.0));
        let c = g.concat_channels(&[a, b]).unwrap();
        assert_eq!(g.shape(c), Shape::new(2, 3, 2, 2));
        let s = g.slice_channels(c, 1, 2).unwrap();
        assert!(g.value(s).data().iter().all(|&v| v == 2.0));
        let s = g.slice_channels(c, 0, 1).unwrap();
        assert!(g.value(s).data().iter().all(|&v| v == 1.0));
    }
}
