use indexmap::IndexMap;
use rand::Rng as _;

use crate::autograd::{Graph, Var};
use crate::error::{invalid, Result};
use crate::rng::stream;
use crate::tensor::{Element, Shape, Tensor};

use super::config::ModelConfig;

/// Initial value rule for a parameter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform in `±sqrt(6 / fan_in)`, for weights followed by ReLU.
    He,
    /// Uniform in `±sqrt(3 / fan_in)`.
    FanIn,
    Const(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Shape,
    pub init: Init,
}

/// Named learnable tensors in a fixed iteration order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore<T: Element> {
    params: IndexMap<String, Tensor<T>>,
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: IndexMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) {
        self.params.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|k| k.as_str())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.values().map(|t| t.shape().numel()).sum()
    }

    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        ParamStore {
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Records every parameter as a gradient-tracking leaf of `g`.
    pub fn bind(&self, g: &mut Graph<T>) -> Bound {
        Bound {
            vars: self.params.iter().map(|(k, v)| (k.clone(), g.param(v.clone()))).collect(),
        }
    }

    /// Checks names and shapes against `specs`, in order.
    pub fn check_against(&self, specs: &[ParamSpec]) -> Result<()> {
        if self.params.len() != specs.len() {
            return Err(invalid(format!(
                "parameter count mismatch: have {}, configuration expects {}",
                self.params.len(),
                specs.len()
            )));
        }
        for ((name, t), spec) in self.params.iter().zip(specs) {
            if *name != spec.name {
                return Err(invalid(format!("parameter {name:?} found where {:?} was expected", spec.name)));
            }
            if t.shape() != spec.shape {
                return Err(invalid(format!("parameter {name}: shape {} but expected {}", t.shape(), spec.shape)));
            }
        }
        Ok(())
    }
}

/// Graph variables of a bound [`ParamStore`], looked up by name.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: IndexMap<String, Var>,
}

impl Bound {
    /// Binds names to variables already recorded on a graph.
    pub fn from_vars(vars: impl IntoIterator<Item = (String, Var)>) -> Self {
        Bound { vars: vars.into_iter().collect() }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| invalid(format!("missing parameter {name:?}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Gradients after `backward`, in store order.
    pub fn grads<T: Element>(&self, g: &Graph<T>) -> Result<Vec<(String, Vec<T>)>> {
        self.vars
            .iter()
            .map(|(k, &v)| {
                g.grad(v)
                    .map(|gr| (k.clone(), gr.to_vec()))
                    .ok_or_else(|| invalid(format!("no gradient for parameter {k}")))
            })
            .collect()
    }
}

struct SpecBuilder(Vec<ParamSpec>);

impl SpecBuilder {
    fn push(&mut self, name: String, shape: Shape, init: Init) {
        self.0.push(ParamSpec { name, shape, init });
    }

    fn conv(&mut self, prefix: &str, out: usize, inp: usize, k: usize, init: Init) {
        self.conv_bias(prefix, out, inp, k, init, 0.0);
    }

    fn conv_bias(&mut self, prefix: &str, out: usize, inp: usize, k: usize, init: Init, bias: f64) {
        self.push(format!("{prefix}.w"), Shape::new(out, inp, k, k), init);
        self.push(format!("{prefix}.b"), Shape::vector(out), Init::Const(bias));
    }

    fn norm(&mut self, prefix: &str, c: usize) {
        self.push(format!("{prefix}.gamma"), Shape::new(1, c, 1, 1), Init::Const(1.0));
        self.push(format!("{prefix}.beta"), Shape::new(1, c, 1, 1), Init::Const(0.0));
        self.push(format!("{prefix}.w_gamma"), Shape::scalar(), Init::Const(1.0));
        self.push(format!("{prefix}.b_gamma"), Shape::scalar(), Init::Const(0.0));
        self.push(format!("{prefix}.w_beta"), Shape::scalar(), Init::Const(0.0));
        self.push(format!("{prefix}.b_beta"), Shape::scalar(), Init::Const(0.0));
    }
}

/// Initial biases of the channel and pixel gates; both start mostly open.
pub const CHANNEL_GATE_BIAS: f64 = 2.0;
pub const PIXEL_GATE_BIAS: f64 = 3.0;

/// Every parameter of the model described by `cfg`, in canonical order.
pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let w = cfg.widths;
    let mut b = SpecBuilder(Vec::new());
    b.conv("stem", w[0], 3, 3, Init::FanIn);
    for i in 0..4 {
        let prev = if i == 0 { w[0] } else { w[i - 1] };
        b.conv(&format!("cnn{i}.trunk"), w[i], prev, 3, Init::He);
        if cfg.has_fusion_head() {
            b.conv(&format!("cnn{i}.fuse"), w[i], w[i], 3, Init::He);
        }
        b.conv(&format!("cnn{i}.main"), w[i], w[i], 3, Init::He);

        let t_in = if i == 0 { 3 } else { w[i - 1] };
        b.conv(&format!("tr{i}.embed"), w[i], t_in, 2, Init::FanIn);
        let r = 2 * cfg.window - 1;
        let hidden = cfg.mlp_hidden(i);
        for blk in 0..2 {
            let p = format!("tr{i}.blk{blk}");
            b.norm(&format!("{p}.attn_norm"), w[i]);
            b.conv(&format!("{p}.attn.qkv"), 3 * w[i], w[i], 1, Init::FanIn);
            b.push(format!("{p}.attn.rel_bias"), Shape::new(cfg.heads[i], r * r, 1, 1), Init::Const(0.0));
            b.conv(&format!("{p}.attn.agg"), w[i], w[i], 3, Init::FanIn);
            b.conv(&format!("{p}.attn.proj"), w[i], w[i], 1, Init::FanIn);
            b.norm(&format!("{p}.mlp_norm"), w[i]);
            b.conv(&format!("{p}.mlp.fc1"), hidden, w[i], 1, Init::He);
            b.conv(&format!("{p}.mlp.fc2"), w[i], hidden, 1, Init::FanIn);
        }

        if cfg.use_cpa {
            let h = cfg.cpa_hidden(i);
            b.conv(&format!("cpa{i}.fc1"), h, w[i], 1, Init::He);
            b.conv_bias(&format!("cpa{i}.fc2"), w[i], h, 1, Init::FanIn, CHANNEL_GATE_BIAS);
            b.conv_bias(&format!("cpa{i}.pix"), 1, 2, cfg.pixel_kernel, Init::FanIn, PIXEL_GATE_BIAS);
        }
    }
    let outs = [w[2], w[1], w[0], w[0]];
    let mut c = w[3];
    for (k, &out) in outs.iter().enumerate() {
        b.conv(&format!("dec{k}"), out, c + w[3 - k], 3, Init::He);
        c = out;
    }
    b.conv("head", 3, w[0], 3, Init::Const(0.0));
    b.0
}

/// Deterministic initialization; each parameter draws from its own stream.
pub fn init_params<T: Element>(cfg: &ModelConfig, seed: u64) -> Result<ParamStore<T>> {
    cfg.validate()?;
    let mut store = ParamStore::new();
    for (k, spec) in param_specs(cfg).into_iter().enumerate() {
        let fan_in = spec.shape.c() * spec.shape.h() * spec.shape.w();
        let bound = match spec.init {
            Init::He => (6.0 / fan_in as f64).sqrt(),
            Init::FanIn => (3.0 / fan_in as f64).sqrt(),
            Init::Const(v) => {
                store.insert(spec.name, Tensor::full(spec.shape, T::c(v)));
                continue;
            }
        };
        let mut rng = stream(seed, k as u64);
        let data = (0..spec.shape.numel()).map(|_| T::c(rng.gen_range(-bound..bound))).collect();
        store.insert(spec.name, Tensor::from_vec(spec.shape, data)?);
    }
    Ok(store)
}
