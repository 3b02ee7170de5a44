use crate::error::{shape_err, Result};
use crate::tensor::{Element, Shape, Tensor};

use super::graph::{BinaryKind, Graph, GradSink, Op, UnaryKind, Var};

/// Strides into `b` when iterating over `a`'s index space; broadcast axes get
/// stride zero. `b` broadcasts to `a` when every axis is equal or 1.
fn broadcast_strides(a: Shape, b: Shape) -> Option<[usize; 4]> {
    let bs = b.strides();
    let mut out = [0; 4];
    for k in 0..4 {
        if b.0[k] == a.0[k] {
            out[k] = bs[k];
        } else if b.0[k] != 1 {
            return None;
        }
    }
    Some(out)
}

/// Calls `f(out_index, b_index)` over `a`'s index space.
#[inline]
fn for_each_bcast(a: Shape, bstr: [usize; 4], mut f: impl FnMut(usize, usize)) {
    let [n, c, h, w] = a.0;
    let mut o = 0;
    for i0 in 0..n {
        for i1 in 0..c {
            for i2 in 0..h {
                let base = i0 * bstr[0] + i1 * bstr[1] + i2 * bstr[2];
                for i3 in 0..w {
                    f(o, base + i3 * bstr[3]);
                    o += 1;
                }
            }
        }
    }
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

#[inline]
fn sigmoid<T: Element>(x: T) -> T {
    let one = T::one();
    let y = if x >= T::zero() {
        one / (one + (-x).exp())
    } else {
        let e = x.exp();
        e / (one + e)
    };
    // keep the open interval (0, 1) even where the exponential saturates
    y.max(T::min_positive_value()).min(one - T::epsilon() * T::c(0.5))
}

#[inline]
fn gelu<T: Element>(x: T) -> T {
    let inner = T::c(SQRT_2_OVER_PI) * (x + T::c(GELU_C) * x * x * x);
    T::c(0.5) * x * (T::one() + inner.tanh())
}

#[inline]
fn gelu_grad<T: Element>(x: T) -> T {
    let k = T::c(SQRT_2_OVER_PI);
    let c = T::c(GELU_C);
    let t = (k * (x + c * x * x * x)).tanh();
    let half = T::c(0.5);
    half * (T::one() + t) + half * x * (T::one() - t * t) * k * (T::one() + T::c(3.0) * c * x * x)
}

pub fn apply_unary<T: Element>(kind: UnaryKind, x: T) -> T {
    match kind {
        UnaryKind::Relu => x.max(T::zero()),
        UnaryKind::Gelu => gelu(x),
        UnaryKind::Sigmoid => sigmoid(x),
        UnaryKind::Abs => x.abs(),
    }
}

impl<T: Element> Graph<T> {
    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let (mut ai, mut bi) = (self.idx(a)?, self.idx(b)?);
        let (mut sa, mut sb) = (self.shape(a), self.shape(b));
        let commutes = matches!(kind, BinaryKind::Add | BinaryKind::Mul);
        if broadcast_strides(sa, sb).is_none() && commutes && broadcast_strides(sb, sa).is_some() {
            std::mem::swap(&mut ai, &mut bi);
            std::mem::swap(&mut sa, &mut sb);
        }
        let bstr = broadcast_strides(sa, sb).ok_or_else(|| {
            shape_err(
                "binary",
                format!("{kind:?}: operand {sb} does not broadcast to {sa} (each axis must match or be 1)"),
            )
        })?;
        let av = self.nodes[ai].value.data();
        let bv = self.nodes[bi].value.data();
        let mut out = vec![T::zero(); sa.numel()];
        match kind {
            BinaryKind::Add => for_each_bcast(sa, bstr, |o, j| out[o] = av[o] + bv[j]),
            BinaryKind::Sub => for_each_bcast(sa, bstr, |o, j| out[o] = av[o] - bv[j]),
            BinaryKind::Mul => for_each_bcast(sa, bstr, |o, j| out[o] = av[o] * bv[j]),
            BinaryKind::Div => for_each_bcast(sa, bstr, |o, j| out[o] = av[o] / bv[j]),
        }
        let value = Tensor::from_vec(sa, out)?;
        self.push(&format!("{kind:?}").to_lowercase(), value, Op::Binary { kind, a: ai, b: bi }, &[ai, bi])
    }

    /// `a + b`; either operand may broadcast (axes equal or 1).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    /// `a - b`; `b` may broadcast to `a`.
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    /// `a / b`; `b` may broadcast to `a`.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Div, a, b)
    }

    fn unary(&mut self, kind: UnaryKind, a: Var) -> Result<Var> {
        let ai = self.idx(a)?;
        let value = self.nodes[ai].value.map(|x| apply_unary(kind, x));
        self.push(&format!("{kind:?}").to_lowercase(), value, Op::Unary { kind, a: ai }, &[ai])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Relu, a)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Gelu, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Sigmoid, a)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Abs, a)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        let ai = self.idx(a)?;
        let value = self.nodes[ai].value.map(|x| x * c);
        self.push("scale", value, Op::Scale { a: ai, c }, &[ai])
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Result<Var> {
        let ai = self.idx(a)?;
        let value = self.nodes[ai].value.map(|x| x + c);
        self.push("add_scalar", value, Op::AddScalar { a: ai }, &[ai])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ai = self.idx(a)?;
        let s: T = self.nodes[ai].value.data().iter().copied().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum { a: ai }, &[ai])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let ai = self.idx(a)?;
        let d = self.nodes[ai].value.data();
        let s: T = d.iter().copied().sum::<T>() / T::c(d.len() as f64);
        self.push("mean", Tensor::scalar(s), Op::Mean { a: ai }, &[ai])
    }

    /// Mean absolute error. The subgradient at exact ties is zero.
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (sp, st) = (self.shape(pred), self.shape(target));
        if sp != st {
            return Err(shape_err("l1_loss", format!("prediction {sp} vs target {st}")));
        }
        let d = self.sub(pred, target)?;
        let a = self.abs(d)?;
        self.mean(a)
    }
}

pub(crate) fn binary_backward<T: Element>(
    kind: BinaryKind,
    a: &Tensor<T>,
    b: &Tensor<T>,
    g: &[T],
    ai: usize,
    bi: usize,
    sink: &mut GradSink<'_, T>,
) {
    let sa = a.shape();
    let bstr = broadcast_strides(sa, b.shape()).expect("validated in forward");
    let (av, bv) = (a.data(), b.data());
    if let Some(ga) = sink.buf(ai) {
        match kind {
            BinaryKind::Add | BinaryKind::Sub => {
                for (d, &s) in ga.iter_mut().zip(g) {
                    *d += s;
                }
            }
            BinaryKind::Mul => for_each_bcast(sa, bstr, |o, j| ga[o] += g[o] * bv[j]),
            BinaryKind::Div => for_each_bcast(sa, bstr, |o, j| ga[o] += g[o] / bv[j]),
        }
    }
    if let Some(gb) = sink.buf(bi) {
        match kind {
            BinaryKind::Add => for_each_bcast(sa, bstr, |o, j| gb[j] += g[o]),
            BinaryKind::Sub => for_each_bcast(sa, bstr, |o, j| gb[j] -= g[o]),
            BinaryKind::Mul => for_each_bcast(sa, bstr, |o, j| gb[j] += g[o] * av[o]),
            BinaryKind::Div => for_each_bcast(sa, bstr, |o, j| gb[j] -= g[o] * av[o] / (bv[j] * bv[j])),
        }
    }
}

pub(crate) fn unary_backward<T: Element>(
    kind: UnaryKind,
    x: &Tensor<T>,
    y: &Tensor<T>,
    g: &[T],
    ai: usize,
    sink: &mut GradSink<'_, T>,
) {
    let Some(ga) = sink.buf(ai) else { return };
    let (xv, yv) = (x.data(), y.data());
    let zero = T::zero();
    for i in 0..ga.len() {
        let d = match kind {
            UnaryKind::Relu => {
                if xv[i] > zero {
                    T::one()
                } else {
                    zero
                }
            }
            UnaryKind::Gelu => gelu_grad(xv[i]),
            UnaryKind::Sigmoid => yv[i] * (T::one() - yv[i]),
            UnaryKind::Abs => {
                if xv[i] > zero {
                    T::one()
                } else if xv[i] < zero {
                    -T::one()
                } else {
                    zero
                }
            }
        };
        ga[i] += g[i] * d;
    }
}
