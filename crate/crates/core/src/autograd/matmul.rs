use crate::error::{shape_err, Result};
use crate::tensor::{Element, Shape, Tensor};

use super::graph::{Graph, GradSink, Op, Var};

impl<T: Element> Graph<T> {
    /// Batched matrix product over the last two axes: `(B, H, M, K) x (B, H, K, N)`,
    /// or `(B, H, M, K) x (B, H, N, K)^T` when `transpose_b` is set.
    pub fn matmul(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        let (sa, sb) = (self.shape(a), self.shape(b));
        let [bn, bh, m, k] = sa.0;
        let (kb, nn) = if transpose_b { (sb.w(), sb.h()) } else { (sb.h(), sb.w()) };
        if (sb.n(), sb.c()) != (bn, bh) {
            return Err(shape_err("matmul", format!("batch axes differ: {sa} vs {sb}")));
        }
        if kb != k {
            return Err(shape_err("matmul", format!("inner dimension: {sa} has {k}, {sb} has {kb}")));
        }
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![T::zero(); bn * bh * m * nn];
        for batch in 0..bn * bh {
            let am = &av[batch * m * k..(batch + 1) * m * k];
            let bm = &bv[batch * k * nn..(batch + 1) * k * nn];
            let om = &mut out[batch * m * nn..(batch + 1) * m * nn];
            for i in 0..m {
                let arow = &am[i * k..(i + 1) * k];
                let orow = &mut om[i * nn..(i + 1) * nn];
                if transpose_b {
                    for (j, o) in orow.iter_mut().enumerate() {
                        *o = arow.iter().zip(&bm[j * k..(j + 1) * k]).map(|(&x, &y)| x * y).sum();
                    }
                } else {
                    for (p, &av) in arow.iter().enumerate() {
                        for (o, &bv) in orow.iter_mut().zip(&bm[p * nn..(p + 1) * nn]) {
                            *o += av * bv;
                        }
                    }
                }
            }
        }
        self.count_macs((bn * bh * m * nn * k) as u64);
        let value = Tensor::from_vec(Shape::new(bn, bh, m, nn), out)?;
        self.push("matmul", value, Op::MatMul { a: ai, b: bi, transpose_b }, &[ai, bi])
    }
}

pub(crate) fn matmul_backward<T: Element>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    transpose_b: bool,
    g: &[T],
    ai: usize,
    bi: usize,
    sink: &mut GradSink<'_, T>,
) {
    let [bn, bh, m, k] = a.shape().0;
    let nn = if transpose_b { b.shape().h() } else { b.shape().w() };
    let (av, bv) = (a.data(), b.data());
    // b element (p, j) of the logical K x N matrix
    let b_at = |bm: &[T], p: usize, j: usize| if transpose_b { bm[j * k + p] } else { bm[p * nn + j] };
    if let Some(ga) = sink.buf(ai) {
        for batch in 0..bn * bh {
            let bm = &bv[batch * k * nn..(batch + 1) * k * nn];
            let gm = &g[batch * m * nn..(batch + 1) * m * nn];
            for i in 0..m {
                for p in 0..k {
                    let mut acc = T::zero();
                    for j in 0..nn {
                        acc += gm[i * nn + j] * b_at(bm, p, j);
                    }
                    ga[batch * m * k + i * k + p] += acc;
                }
            }
        }
    }
    if let Some(gb) = sink.buf(bi) {
        for batch in 0..bn * bh {
            let am = &av[batch * m * k..(batch + 1) * m * k];
            let gm = &g[batch * m * nn..(batch + 1) * m * nn];
            let gbm = &mut gb[batch * k * nn..(batch + 1) * k * nn];
            for p in 0..k {
                for j in 0..nn {
                    let mut acc = T::zero();
                    for i in 0..m {
                        acc += am[i * k + p] * gm[i * nn + j];
                    }
                    if transpose_b {
                        gbm[j * k + p] += acc;
                    } else {
                        gbm[p * nn + j] += acc;
                    }
                }
            }
        }
    }
}
