//! Checks shared by the integration suites and the acceptance run.

#![allow(dead_code)]

use igdehaze::autograd::{
    grad_check, grad_check_entries, ConvSpec, PadMode, PoolKind, PoolScope, ResizeFactor, ResizeMode, DEFAULT_EPS,
};
use igdehaze::haze::{apply_haze, invert_haze, transmission, Airlight, HazeScene};
use igdehaze::metrics::{entropy, psnr, ssim};
use igdehaze::network::{
    attention_core, channel_attention, cpa, init_params, model_forward, param_specs, pixel_attention, rescale_norm,
    transformer_layer, window_attention, window_merge, window_partition, Bound, NormVars, RescaleNormParams,
};
use igdehaze::rng::stream;
use igdehaze::{Graph, ModelConfig, ParamStore, Shape, Tensor, Var, Variant};
use rand::Rng as _;

/// A measured deviation and the bound it must stay under (`value <= tol`).
#[derive(Clone, Debug)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tol: f64,
}

impl Check {
    pub fn new(name: impl Into<String>, value: f64, tol: f64) -> Self {
        Check { name: name.into(), value, tol }
    }

    pub fn passed(&self) -> bool {
        self.value <= self.tol
    }
}

pub fn random(shape: Shape, seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut rng = stream(seed, 17);
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Tiny-config parameters whose names start with `prefix`, drawn uniformly from `[-1, 1)`.
pub fn random_params(cfg: &ModelConfig, prefix: &str, seed: u64) -> Vec<(String, Tensor<f64>)> {
    param_specs(cfg)
        .into_iter()
        .filter(|s| s.name.starts_with(prefix))
        .enumerate()
        .map(|(k, s)| (s.name, random(s.shape, seed.wrapping_add(k as u64), -1.0, 1.0)))
        .collect()
}

fn bound(names: &[String], vars: &[Var]) -> Bound {
    Bound::from_vars(names.iter().cloned().zip(vars.iter().copied()))
}

type Block<'a> = dyn Fn(&mut Graph<f64>, Var, &Bound) -> igdehaze::Result<Var> + 'a;

/// Gradient check of `f(x; params)` contracted with a fixed random tensor.
fn check_block(name: &str, tol: f64, x: Tensor<f64>, params: Vec<(String, Tensor<f64>)>, f: &Block) -> Check {
    let names: Vec<String> = params.iter().map(|p| p.0.clone()).collect();
    let mut inputs = vec![x];
    inputs.extend(params.into_iter().map(|p| p.1));
    let out_shape = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
        let y = f(&mut g, vars[0], &bound(&names, &vars[1..])).unwrap_or_else(|e| panic!("{name}: {e}"));
        g.shape(y)
    };
    let r = random(out_shape, 99, -1.0, 1.0);
    let err = grad_check(
        |g: &mut Graph<f64>, v: &[Var]| {
            let y = f(g, v[0], &bound(&names, &v[1..]))?;
            let rv = g.input(r.clone());
            let p = g.mul(y, rv)?;
            g.sum(p)
        },
        &inputs,
        DEFAULT_EPS,
    )
    .unwrap_or_else(|e| panic!("{name}: {e}"));
    Check::new(name, err, tol)
}

const SMOOTH: f64 = 1e-5;
const PIECEWISE: f64 = 1e-3;

/// Finite-difference audit of every differentiable block in 64-bit.
pub fn gradient_checks() -> Vec<Check> {
    let tiny = ModelConfig::tiny();
    let x = || random(Shape::new(2, 3, 6, 6), 1, -2.0, 2.0);
    let conv_params = || {
        vec![
            ("w".to_string(), random(Shape::new(4, 3, 3, 3), 2, -1.0, 1.0)),
            ("b".to_string(), random(Shape::vector(4), 3, -1.0, 1.0)),
        ]
    };
    let mut out = Vec::new();
    for (label, stride, mode) in [("zeros", 1, PadMode::Zeros), ("reflect", 2, PadMode::Reflect)] {
        out.push(check_block(&format!("conv2d {label} stride {stride}"), PIECEWISE, x(), conv_params(), &|g, x, p| {
            g.conv2d(x, p.get("w")?, Some(p.get("b")?), ConvSpec { stride, padding: 1, mode })
        }));
    }
    out.push(check_block(
        "linear",
        SMOOTH,
        random(Shape::new(2, 8, 1, 1), 4, -2.0, 2.0),
        vec![
            ("w".into(), random(Shape::new(5, 8, 1, 1), 5, -1.0, 1.0)),
            ("b".into(), random(Shape::vector(5), 6, -1.0, 1.0)),
        ],
        &|g, x, p| g.linear(x, p.get("w")?, p.get("b")?),
    ));
    out.push(check_block("softmax", SMOOTH, x(), vec![], &|g, x, _| g.softmax(x, 3)));
    out.push(check_block("sigmoid", SMOOTH, x(), vec![], &|g, x, _| g.sigmoid(x)));
    for (label, kind, scope, tol) in [
        ("avg-pool 2x2", PoolKind::Avg, PoolScope::Window { k: 2, stride: 2 }, SMOOTH),
        ("avg-pool global", PoolKind::Avg, PoolScope::Global, SMOOTH),
        ("max-pool 2x2", PoolKind::Max, PoolScope::Window { k: 2, stride: 2 }, PIECEWISE),
        ("max-pool global", PoolKind::Max, PoolScope::Global, PIECEWISE),
    ] {
        out.push(check_block(label, tol, x(), vec![], &|g, x, _| g.pool2d(x, kind, scope)));
    }
    for (label, factor, mode, tol) in [
        ("bilinear down", ResizeFactor::Down2, ResizeMode::Bilinear, SMOOTH),
        ("bilinear up", ResizeFactor::Up2, ResizeMode::Bilinear, SMOOTH),
        ("nearest down", ResizeFactor::Down2, ResizeMode::Nearest, PIECEWISE),
        ("nearest up", ResizeFactor::Up2, ResizeMode::Nearest, PIECEWISE),
    ] {
        out.push(check_block(label, tol, x(), vec![], &|g, x, _| g.resize2d(x, factor, mode)));
    }

    let norm_params: Vec<(String, Tensor<f64>)> = ["gamma", "beta", "w_gamma", "b_gamma", "w_beta", "b_beta"]
        .iter()
        .enumerate()
        .map(|(k, n)| {
            let shape = if k < 2 { Shape::new(1, 3, 1, 1) } else { Shape::scalar() };
            (format!("n.{n}"), random(shape, 20 + k as u64, 0.5, 1.5))
        })
        .collect();
    out.push(check_block("rescale_norm", PIECEWISE, x(), norm_params, &|g, x, p| {
        let nv = NormVars::from_bound(p, "n")?;
        rescale_norm(g, x, &nv, |g, h| g.gelu(h))
    }));

    let xs = || random(Shape::new(1, 16, 8, 8), 7, -2.0, 2.0);
    for shift in [0, 3] {
        out.push(check_block(
            &format!("window_attention shift {shift}"),
            PIECEWISE,
            xs(),
            random_params(&tiny, "tr1.blk0.attn.", 30),
            &|g, x, p| window_attention(g, x, p, "tr1.blk0.attn", 2, 7, shift),
        ));
    }
    out.push(check_block("transformer_layer", PIECEWISE, xs(), random_params(&tiny, "tr1.", 40), &|g, x, p| {
        transformer_layer(g, x, p, &tiny, 1)
    }));
    let cpa_params = || random_params(&tiny, "cpa1.", 50);
    out.push(check_block("channel_attention", PIECEWISE, xs(), cpa_params(), &|g, x, p| {
        channel_attention(g, x, p, "cpa1")
    }));
    out.push(check_block("pixel_attention", PIECEWISE, xs(), cpa_params(), &|g, x, p| pixel_attention(g, x, p, "cpa1")));
    out.push(check_block("cpa", PIECEWISE, xs(), cpa_params(), &|g, x, p| cpa(g, x, p, "cpa1")));
    out.push(full_model_check(Variant::Ours));
    out
}

/// Parameters of `cfg` with every tensor perturbed, including the zero-initialized head.
pub fn perturbed_params(cfg: &ModelConfig, seed: u64) -> ParamStore<f64> {
    let mut p: ParamStore<f64> = init_params(cfg, seed).expect("valid config");
    let mut rng = stream(seed, 1000);
    for (_, t) in p.iter_mut() {
        for v in t.data_mut() {
            *v += rng.gen_range(-0.1..0.1);
        }
    }
    p
}

/// Full tiny model on `1x3x16x16`: every input entry plus sampled parameter entries.
pub fn full_model_check(variant: Variant) -> Check {
    let cfg = ModelConfig::tiny().with_variant(variant);
    let params = perturbed_params(&cfg, 3);
    let names: Vec<String> = params.names().map(str::to_string).collect();
    let x = random(Shape::new(1, 3, 16, 16), 8, 0.0, 1.0);
    let r = random(Shape::new(1, 3, 16, 16), 9, -1.0, 1.0);
    let mut inputs = vec![x];
    inputs.extend(params.iter().map(|(_, t)| t.clone()));
    let mut rng = stream(5, 5);
    let picks: Vec<Vec<usize>> = inputs
        .iter()
        .enumerate()
        .map(|(k, t)| {
            let n = t.data().len();
            let count = if k == 0 { 24 } else { 2.min(n) };
            (0..count).map(|_| rng.gen_range(0..n)).collect()
        })
        .collect();
    let err = grad_check_entries(
        |g: &mut Graph<f64>, v: &[Var]| {
            let y = model_forward(g, v[0], &cfg, &bound(&names, &v[1..]))?;
            let rv = g.input(r.clone());
            let p = g.mul(y, rv)?;
            g.sum(p)
        },
        &inputs,
        &picks,
        DEFAULT_EPS,
    )
    .expect("full model gradient check");
    Check::new(format!("full tiny model ({variant})"), err, PIECEWISE)
}

fn max_dev(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.max_abs_diff(b)
}

/// Convex-combination bound over 1,000 random scenes and the inversion
/// round trip on scenes whose transmission stays at or above 0.1.
pub fn asm_checks() -> Vec<Check> {
    let mut rng = stream(2024, 0);
    let mut worst_bound = 0.0f64;
    let mut worst_trip = 0.0f64;
    for i in 0..1000 {
        let shape = Shape::new(1, 3, 4, 5);
        let clean = random(shape, i, 0.0, 1.0);
        let depth = random(Shape::new(1, 1, 4, 5), 10_000 + i, 0.0, 1.0);
        let airlight = if i % 2 == 0 {
            Airlight::Gray(rng.gen_range(0.0..1.0))
        } else {
            Airlight::Rgb([rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)])
        };
        let beta = rng.gen_range(0.0..4.0);
        let scene = HazeScene { clean: clean.clone(), depth: depth.clone(), airlight, beta };
        let hazy = apply_haze(&scene).expect("valid scene");
        for ([_, c, y, x], &v) in (0..hazy.data().len()).map(|k| (unflat(shape, k), &hazy.data()[k])) {
            let (j, a) = (clean.at([0, c, y, x]), airlight.channel(c));
            let below = j.min(a) - v;
            let above = v - j.max(a);
            worst_bound = worst_bound.max(below).max(above);
        }
        let t = transmission(&depth, beta).expect("valid depth");
        if t.data().iter().all(|&tv| tv >= 0.1) {
            let back = invert_haze(&hazy, &t, airlight, 0.05).expect("valid inversion");
            worst_trip = worst_trip.max(max_dev(&back, &clean));
        }
    }
    vec![
        Check::new("min(J,A) <= I <= max(J,A) on 1000 scenes (violation)", worst_bound.max(0.0), 0.0),
        Check::new("invert(apply(scene)) round trip for t >= 0.1", worst_trip, 1e-6),
    ]
}

fn unflat(s: Shape, k: usize) -> [usize; 4] {
    let [_, c, h, w] = s.0;
    [k / (c * h * w), (k / (h * w)) % c, (k / w) % h, k % w]
}

fn with_zeroed(mut store: ParamStore<f64>, names: &[&str]) -> ParamStore<f64> {
    for n in names {
        let t = store.get_mut(n).unwrap_or_else(|| panic!("missing {n}"));
        *t = Tensor::zeros(t.shape());
    }
    store
}

/// Exact identities of the building blocks.
pub fn identity_checks() -> Vec<Check> {
    let mut out = Vec::new();
    let x = random(Shape::new(2, 5, 6, 7), 11, -2.0, 2.0);

    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let p = RescaleNormParams::<f64>::identity(5).record(&mut g);
    let y = rescale_norm(&mut g, xv, &p, |_, h| Ok(h)).expect("norm");
    out.push(Check::new("identity-parameter rescale_norm", max_dev(g.value(y), &x), 1e-6));

    let tiny = ModelConfig::tiny();
    let mut worst = 0.0f64;
    for stage in 0..4 {
        let c = tiny.widths[stage];
        let mut zero = Vec::new();
        for blk in 0..2 {
            for proj in ["attn.proj", "mlp.fc2"] {
                for wb in ["w", "b"] {
                    zero.push(format!("tr{stage}.blk{blk}.{proj}.{wb}"));
                }
            }
        }
        let refs: Vec<&str> = zero.iter().map(String::as_str).collect();
        let store = with_zeroed(perturbed_norm_free(&tiny, stage), &refs);
        let input = random(Shape::new(2, c, 9, 6), 12 + stage as u64, -2.0, 2.0);
        let mut g = Graph::new();
        let b = store.bind(&mut g);
        let xv = g.input(input.clone());
        let y = transformer_layer(&mut g, xv, &b, &tiny, stage).expect("layer");
        worst = worst.max(max_dev(g.value(y), &input));
    }
    out.push(Check::new("transformer_layer with zeroed output projections", worst, 0.0));

    let mut store: ParamStore<f64> = ParamStore::new();
    for (name, t) in random_params(&tiny, "cpa2.", 60) {
        store.insert(name, Tensor::zeros(t.shape()));
    }
    let mut g = Graph::new();
    let b = store.bind(&mut g);
    let input = random(Shape::new(2, tiny.widths[2], 5, 4), 13, -2.0, 2.0);
    let xv = g.input(input.clone());
    let y = cpa(&mut g, xv, &b, "cpa2").expect("cpa");
    out.push(Check::new("zero-parameter CPA equals 0.25 x", max_dev(g.value(y), &input.map(|v| 0.25 * v)), 0.0));

    let mut worst = 0.0f64;
    for v in Variant::ALL {
        let cfg = ModelConfig::tiny().with_variant(v);
        let mut store = perturbed_params(&cfg, 4);
        for n in ["head.w", "head.b"] {
            let t = store.get_mut(n).expect("head");
            *t = Tensor::zeros(t.shape());
        }
        for (h, w) in [(32, 32), (21, 17)] {
            let input = random(Shape::new(1, 3, h, w), 14, 0.0, 1.0);
            let mut g = Graph::new();
            let b = store.bind(&mut g);
            let xv = g.input(input.clone());
            let y = model_forward(&mut g, xv, &cfg, &b).expect("forward");
            worst = worst.max(max_dev(g.value(y), &input));
        }
    }
    out.push(Check::new("zero final decoder conv gives J_hat = I", worst, 0.0));

    let mut worst = 0.0f64;
    for (h, w, win, shift) in [(7, 7, 7, 0), (10, 10, 7, 0), (10, 10, 7, 3), (9, 15, 7, 3), (8, 8, 4, 2)] {
        let input = random(Shape::new(2, 3, h, w), 15, -2.0, 2.0);
        let mut g = Graph::new();
        let xv = g.input(input.clone());
        let (tok, layout) = window_partition(&mut g, xv, win, shift).expect("partition");
        let back = window_merge(&mut g, tok, &layout).expect("merge");
        if g.value(back) != &input {
            worst = f64::INFINITY;
        }
    }
    out.push(Check::new("window partition/merge round trip is bitwise exact", worst, 0.0));
    out
}

/// Stage parameters of `cfg` perturbed except the normalization output
/// affine terms `w_beta`, `b_beta`, which stay at their zero initialization.
fn perturbed_norm_free(cfg: &ModelConfig, stage: usize) -> ParamStore<f64> {
    let mut p = perturbed_params(cfg, 6 + stage as u64);
    let keep: Vec<String> = p
        .names()
        .filter(|n| n.ends_with(".w_beta") || n.ends_with(".b_beta"))
        .map(str::to_string)
        .collect();
    for n in keep {
        let t = p.get_mut(&n).expect("norm term");
        *t = Tensor::zeros(t.shape());
    }
    p
}

/// `window_attention` on a map of two tokens with one 4-dimensional head
/// against a scalar evaluation of `Softmax(Q K^T / sqrt(d) + B) V`.
pub fn attention_brute_force() -> Check {
    let (c, win) = (4usize, 2usize);
    let x = random(Shape::new(1, c, 1, 2), 21, -1.0, 1.0);
    let wqkv = random(Shape::new(3 * c, c, 1, 1), 22, -1.0, 1.0);
    let bqkv = random(Shape::vector(3 * c), 23, -0.5, 0.5);
    let table = random(Shape::new(1, (2 * win - 1).pow(2), 1, 1), 24, -1.0, 1.0);
    let mut store: ParamStore<f64> = ParamStore::new();
    store.insert("a.qkv.w", wqkv.clone());
    store.insert("a.qkv.b", bqkv.clone());
    store.insert("a.rel_bias", table.clone());
    store.insert("a.agg.w", Tensor::zeros(Shape::new(c, c, 3, 3)));
    store.insert("a.agg.b", Tensor::zeros(Shape::vector(c)));
    store.insert("a.proj.w", Tensor::from_fn(Shape::new(c, c, 1, 1), |[o, i, _, _]| f64::from(u8::from(o == i))));
    store.insert("a.proj.b", Tensor::zeros(Shape::vector(c)));
    let mut g = Graph::new();
    let b = store.bind(&mut g);
    let xv = g.input(x.clone());
    let y = window_attention(&mut g, xv, &b, "a", 1, win, 0).expect("attention");

    // tokens are the two pixels of the 1x2 map
    let tok = |t: usize| -> Vec<f64> { (0..c).map(|ch| x.at([0, ch, 0, t])).collect() };
    let project = |part: usize, t: usize| -> Vec<f64> {
        let v = tok(t);
        (0..c)
            .map(|o| {
                let row = part * c + o;
                bqkv.data()[row] + (0..c).map(|i| wqkv.data()[row * c + i] * v[i]).sum::<f64>()
            })
            .collect()
    };
    let r = 2 * win - 1;
    let mut expect = vec![[0.0; 2]; c];
    for a in 0..2 {
        let q = project(0, a);
        let logits: Vec<f64> = (0..2)
            .map(|bt| {
                let k = project(1, bt);
                let dot: f64 = q.iter().zip(&k).map(|(p, s)| p * s).sum();
                let offset = (win - 1) * r + (a + win - 1 - bt);
                dot / (c as f64).sqrt() + table.data()[offset]
            })
            .collect();
        let m = logits[0].max(logits[1]);
        let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let z = e[0] + e[1];
        for (ch, slot) in expect.iter_mut().enumerate() {
            slot[a] = (0..2).map(|bt| e[bt] / z * project(2, bt)[ch]).sum();
        }
    }
    let got = g.value(y);
    let mut worst = 0.0f64;
    for (ch, row) in expect.iter().enumerate() {
        for (t, &e) in row.iter().enumerate() {
            worst = worst.max((got.at([0, ch, 0, t]) - e).abs());
        }
    }

    let mut g = Graph::new();
    let q = g.input(random(Shape::new(1, 1, 2, 4), 25, -1.0, 1.0));
    let k = g.input(random(Shape::new(1, 1, 2, 4), 26, -1.0, 1.0));
    let v = g.input(random(Shape::new(1, 1, 2, 4), 27, -1.0, 1.0));
    let bias = g.input(random(Shape::new(1, 1, 2, 2), 28, -1.0, 1.0));
    let out = attention_core(&mut g, q, k, v, Some(bias)).expect("core");
    let (qv, kv, vv, bv) = (g.value(q).clone(), g.value(k).clone(), g.value(v).clone(), g.value(bias).clone());
    for a in 0..2 {
        let logits: Vec<f64> = (0..2)
            .map(|bt| (0..4).map(|d| qv.at([0, 0, a, d]) * kv.at([0, 0, bt, d])).sum::<f64>() / 2.0 + bv.at([0, 0, a, bt]))
            .collect();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        for d in 0..4 {
            let e: f64 = (0..2).map(|bt| logits[bt].exp() / z * vv.at([0, 0, bt, d])).sum();
            worst = worst.max((g.value(out).at([0, 0, a, d]) - e).abs());
        }
    }
    Check::new("two-token attention against scalar evaluation", worst, 1e-6)
}

fn luma_direct(img: &Tensor<f64>) -> Vec<Vec<f64>> {
    let [_, _, h, w] = img.shape().0;
    (0..h)
        .map(|y| {
            (0..w)
                .map(|x| 0.299 * img.at([0, 0, y, x]) + 0.587 * img.at([0, 1, y, x]) + 0.114 * img.at([0, 2, y, x]))
                .collect()
        })
        .collect()
}

fn psnr_direct(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let n = a.data().len() as f64;
    let mse: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n;
    10.0 * (1.0 / mse).log10()
}

fn ssim_direct(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let (x, y) = (luma_direct(a), luma_direct(b));
    let (h, w) = (x.len(), x[0].len());
    let mut weights = [[0.0; 11]; 11];
    let mut total = 0.0;
    for (i, row) in weights.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let d2 = ((i as f64 - 5.0).powi(2) + (j as f64 - 5.0).powi(2)) / (2.0 * 1.5 * 1.5);
            *v = (-d2).exp();
            total += *v;
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut sum = 0.0;
    let mut count = 0;
    for oy in 0..=h - 11 {
        for ox in 0..=w - 11 {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let wgt = weights[i][j] / total;
                    let (p, q) = (x[oy + i][ox + j], y[oy + i][ox + j]);
                    mx += wgt * p;
                    my += wgt * q;
                    sxx += wgt * p * p;
                    syy += wgt * q * q;
                    sxy += wgt * p * q;
                }
            }
            let (vx, vy, cov) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
            sum += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    sum / count as f64
}

fn entropy_direct(img: &Tensor<f64>) -> f64 {
    let mut counts = std::collections::BTreeMap::new();
    let y = luma_direct(img);
    let n = (y.len() * y[0].len()) as f64;
    for v in y.into_iter().flatten() {
        *counts.entry((v.clamp(0.0, 1.0) * 255.0).round() as i64).or_insert(0usize) += 1;
    }
    counts.values().map(|&c| c as f64 / n).map(|p| -p * p.log2()).sum()
}

/// Library metrics against direct evaluations of their definitions on 50
/// random image pairs, plus analytic anchors.
pub fn metric_checks() -> Vec<Check> {
    let (mut dp, mut ds, mut de) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..50 {
        let a = random(Shape::new(1, 3, 16, 16), 300 + i, 0.0, 1.0);
        let noise = random(Shape::new(1, 3, 16, 16), 400 + i, -0.2, 0.2);
        let b = Tensor::from_fn(a.shape(), |ix| (a.at(ix) + noise.at(ix)).clamp(0.0, 1.0));
        dp = dp.max((psnr(&a, &b, 1.0).unwrap() - psnr_direct(&a, &b)).abs());
        ds = ds.max((ssim(&a, &b, 1.0).unwrap() - ssim_direct(&a, &b)).abs());
        de = de.max((entropy(&b).unwrap() - entropy_direct(&b)).abs());
    }
    let base = Tensor::from_fn(Shape::new(1, 3, 16, 16), |[_, c, y, x]| 0.3 + 0.02 * ((c + y + x) % 10) as f64);
    let psnr20 = psnr(&base, &base.map(|v| v + 0.1), 1.0).unwrap();
    let zero = Tensor::<f64>::zeros(Shape::new(1, 3, 16, 16));
    let one = Tensor::<f64>::ones(Shape::new(1, 3, 16, 16));
    let ssim01 = ssim(&zero, &one, 1.0).unwrap();
    let levels = Tensor::from_fn(Shape::new(1, 3, 16, 16), |[_, _, y, x]| (y * 16 + x) as f64 / 255.0);
    vec![
        Check::new("PSNR vs direct definition (50 pairs)", dp, 1e-6),
        Check::new("SSIM vs direct definition (50 pairs)", ds, 1e-6),
        Check::new("entropy vs direct definition (50 pairs)", de, 1e-6),
        Check::new("PSNR anchor 20 dB at MSE 0.01", (psnr20 - 20.0).abs(), 1e-9),
        Check::new("SSIM anchor 9.999e-5 for constant 0 vs 1", (ssim01 - 1e-4 / (1.0 + 1e-4)).abs(), 1e-12),
        Check::new("entropy anchor 8 bits for 256 equiprobable levels", (entropy(&levels).unwrap() - 8.0).abs(), 1e-12),
    ]
}

pub fn report(checks: &[Check]) -> bool {
    let mut ok = true;
    for c in checks {
        let mark = if c.passed() { "ok  " } else { "FAIL" };
        println!("    {mark} {:<58} {:.3e} (limit {:.0e})", c.name, c.value, c.tol);
        ok &= c.passed();
    }
    ok
}

pub fn assert_all(checks: &[Check]) {
    let failed: Vec<String> = checks
        .iter()
        .filter(|c| !c.passed())
        .map(|c| format!("{}: {:e} > {:e}", c.name, c.value, c.tol))
        .collect();
    assert!(failed.is_empty(), "{failed:#?}");
}
