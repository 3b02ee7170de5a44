use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Element, Shape, Tensor};

use super::{conv, elementwise, matmul, reduce, shape as shape_ops};

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u64,
    idx: usize,
}

impl Var {
    pub fn index(&self) -> usize {
        self.idx
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryKind {
    Relu,
    Gelu,
    Sigmoid,
    Abs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PadMode {
    Zeros,
    Reflect,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolKind {
    Avg,
    Max,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolScope {
    Global,
    Window { k: usize, stride: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StatKind {
    Mean,
    Max,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
    pub mode: PadMode,
}

pub(crate) enum Op<T: Element> {
    Leaf,
    Binary {
        kind: BinaryKind,
        a: usize,
        b: usize,
    },
    Unary {
        kind: UnaryKind,
        a: usize,
    },
    Scale {
        a: usize,
        c: T,
    },
    AddScalar {
        a: usize,
    },
    Reshape {
        a: usize,
    },
    Sum {
        a: usize,
    },
    Mean {
        a: usize,
    },
    Conv2d {
        x: usize,
        w: usize,
        b: Option<usize>,
        spec: ConvSpec,
    },
    Linear {
        x: usize,
        w: usize,
        b: usize,
    },
    Softmax {
        a: usize,
        axis: usize,
    },
    Pool {
        a: usize,
        kind: PoolKind,
        geom: reduce::PoolGeom,
        argmax: Vec<usize>,
    },
    ChannelStats {
        a: usize,
        kind: StatKind,
        argmax: Vec<usize>,
    },
    SpatialMean {
        a: usize,
    },
    SpatialStd {
        a: usize,
        mean: Vec<T>,
        raw_std: Vec<T>,
    },
    Gather {
        a: usize,
        index: Arc<Vec<usize>>,
    },
    BilinearUp2 {
        a: usize,
    },
    MatMul {
        a: usize,
        b: usize,
        transpose_b: bool,
    },
    Concat {
        parts: Vec<usize>,
    },
}

pub(crate) struct Node<T: Element> {
    pub value: Tensor<T>,
    pub op: Op<T>,
    pub requires_grad: bool,
}

/// Records a forward computation so that [`Graph::backward`] can replay it in
/// reverse. One graph per forward pass; a graph can be differentiated once.
pub struct Graph<T: Element> {
    id: u64,
    pub(crate) nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    consumed: bool,
    macs: u64,
    degenerate_norms: usize,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Graph {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            grads: Vec::new(),
            consumed: false,
            macs: 0,
            degenerate_norms: 0,
        }
    }

    /// Records a leaf. Its gradient is kept after `backward` when
    /// `tensor.requires_grad` is set.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let requires_grad = tensor.requires_grad;
        let mut value = tensor;
        value.clear_grad();
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        self.var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, mut tensor: Tensor<T>) -> Var {
        tensor.requires_grad = false;
        self.leaf(tensor)
    }

    pub fn param(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.with_requires_grad())
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.idx].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.idx].value.shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Multiply-accumulate operations recorded so far (conv, linear, matmul).
    pub fn macs(&self) -> u64 {
        self.macs
    }

    /// Number of normalizations that hit the zero-variance guard.
    pub fn degenerate_norms(&self) -> usize {
        self.degenerate_norms
    }

    pub(crate) fn count_macs(&mut self, n: u64) {
        self.macs += n;
    }

    pub(crate) fn count_degenerate(&mut self, n: usize) {
        self.degenerate_norms += n;
    }

    fn var(&self, idx: usize) -> Var {
        Var { graph: self.id, idx }
    }

    /// Validates that `v` belongs to this graph and returns its node index.
    pub(crate) fn idx(&self, v: Var) -> Result<usize> {
        if v.graph != self.id || v.idx >= self.nodes.len() {
            return Err(Error::Graph(format!(
                "variable {} does not belong to this graph",
                v.idx
            )));
        }
        Ok(v.idx)
    }

    pub(crate) fn push(&mut self, label: &str, value: Tensor<T>, op: Op<T>, inputs: &[usize]) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite(label.to_string()));
        }
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(self.var(self.nodes.len() - 1))
    }

    /// Gradient of the last `backward` call with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        if v.graph != self.id {
            return None;
        }
        self.grads.get(v.idx).and_then(|g| g.as_deref())
    }

    /// Reverse-mode sweep from a scalar `loss`. Every leaf that requires a
    /// gradient receives `d loss / d leaf`; leaves the loss does not depend
    /// on get zeros.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let li = self.idx(loss)?;
        if self.consumed {
            return Err(Error::Graph("backward already ran on this graph".into()));
        }
        let ls = self.nodes[li].value.shape();
        if !ls.is_scalar() {
            return Err(shape_err("backward", format!("loss must be a scalar, got {ls}")));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[li] = Some(vec![T::one()]);
        let mut leaf_grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();

        for i in (0..=li).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if let Op::Leaf = node.op {
                leaf_grads[i] = Some(g);
                continue;
            }
            let mut sink = GradSink {
                nodes: &self.nodes,
                grads: &mut grads,
            };
            backward_node(&self.nodes, i, &g, &mut sink);
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad && leaf_grads[i].is_none() {
                leaf_grads[i] = Some(vec![T::zero(); node.value.shape().numel()]);
            }
        }
        self.grads = leaf_grads;
        Ok(())
    }
}

/// Accumulates gradient contributions into input nodes.
pub(crate) struct GradSink<'a, T: Element> {
    nodes: &'a [Node<T>],
    grads: &'a mut [Option<Vec<T>>],
}

impl<T: Element> GradSink<'_, T> {
    pub fn wants(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    /// Buffer for input `i`, allocated on first use; `None` when `i` does not
    /// need a gradient.
    pub fn buf(&mut self, i: usize) -> Option<&mut [T]> {
        if !self.nodes[i].requires_grad {
            return None;
        }
        let n = self.nodes[i].value.shape().numel();
        Some(self.grads[i].get_or_insert_with(|| vec![T::zero(); n]).as_mut_slice())
    }
}

fn backward_node<T: Element>(nodes: &[Node<T>], i: usize, g: &[T], sink: &mut GradSink<'_, T>) {
    let out = &nodes[i].value;
    let val = |j: usize| &nodes[j].value;
    match &nodes[i].op {
        Op::Leaf => {}
        Op::Binary { kind, a, b } => elementwise::binary_backward(*kind, val(*a), val(*b), g, *a, *b, sink),
        Op::Unary { kind, a } => elementwise::unary_backward(*kind, val(*a), out, g, *a, sink),
        Op::Scale { a, c } => {
            if let Some(ga) = sink.buf(*a) {
                for (d, &s) in ga.iter_mut().zip(g) {
                    *d += s * *c;
                }
            }
        }
        Op::AddScalar { a } | Op::Reshape { a } => {
            if let Some(ga) = sink.buf(*a) {
                for (d, &s) in ga.iter_mut().zip(g) {
                    *d += s;
                }
            }
        }
        Op::Sum { a } => {
            if let Some(ga) = sink.buf(*a) {
                for d in ga.iter_mut() {
                    *d += g[0];
                }
            }
        }
        Op::Mean { a } => {
            if let Some(ga) = sink.buf(*a) {
                let s = g[0] / T::c(ga.len() as f64);
                for d in ga.iter_mut() {
                    *d += s;
                }
            }
        }
        Op::Conv2d { x, w, b, spec } => conv::conv2d_backward(val(*x), val(*w), *spec, g, out.shape(), *x, *w, *b, sink),
        Op::Linear { x, w, b } => conv::linear_backward(val(*x), val(*w), g, *x, *w, *b, sink),
        Op::Softmax { a, axis } => reduce::softmax_backward(out, *axis, g, *a, sink),
        Op::Pool { a, kind, geom, argmax } => reduce::pool_backward(*kind, geom, argmax, val(*a).shape(), g, *a, sink),
        Op::ChannelStats { a, kind, argmax } => {
            reduce::channel_stats_backward(*kind, argmax, val(*a).shape(), g, *a, sink)
        }
        Op::SpatialMean { a } => reduce::spatial_mean_backward(val(*a).shape(), g, *a, sink),
        Op::SpatialStd { a, mean, raw_std } => reduce::spatial_std_backward(val(*a), mean, raw_std, g, *a, sink),
        Op::Gather { a, index } => {
            if let Some(ga) = sink.buf(*a) {
                for (&src, &s) in index.iter().zip(g) {
                    ga[src] += s;
                }
            }
        }
        Op::BilinearUp2 { a } => shape_ops::bilinear_up2_backward(val(*a).shape(), g, *a, sink),
        Op::MatMul { a, b, transpose_b } => matmul::matmul_backward(val(*a), val(*b), *transpose_b, g, *a, *b, sink),
        Op::Concat { parts } => {
            let [n, c_out, h, w] = out.shape().0;
            let plane = h * w;
            let mut c0 = 0;
            for &p in parts {
                let c = nodes[p].value.shape().c();
                if let Some(gp) = sink.buf(p) {
                    for bn in 0..n {
                        let src = &g[(bn * c_out + c0) * plane..(bn * c_out + c0 + c) * plane];
                        let dst = &mut gp[bn * c * plane..(bn + 1) * c * plane];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
                c0 += c;
            }
        }
    }
}
