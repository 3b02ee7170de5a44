//! Building blocks of the two-branch model, recorded on a [`Graph`].

use std::sync::Arc;

use crate::autograd::{ConvSpec, Graph, PadMode, PoolKind, PoolScope, ResizeFactor, ResizeMode, StatKind, Var};
use crate::error::{invalid, shape_err, Result};
use crate::tensor::{Element, Shape, Tensor};

use super::config::ModelConfig;
use super::params::Bound;

pub(crate) fn same(k: usize) -> ConvSpec {
    ConvSpec {
        stride: 1,
        padding: k / 2,
        mode: PadMode::Zeros,
    }
}

pub(crate) fn conv<T: Element>(g: &mut Graph<T>, x: Var, p: &Bound, prefix: &str, spec: ConvSpec) -> Result<Var> {
    let w = p.get(&format!("{prefix}.w"))?;
    let b = p.get(&format!("{prefix}.b"))?;
    g.conv2d(x, w, Some(b), spec)
}

pub(crate) fn conv_relu<T: Element>(g: &mut Graph<T>, x: Var, p: &Bound, prefix: &str, spec: ConvSpec) -> Result<Var> {
    let y = conv(g, x, p, prefix, spec)?;
    g.relu(y)
}

/// Graph handles of one normalization's learnables.
#[derive(Clone, Copy, Debug)]
pub struct NormVars {
    pub gamma: Var,
    pub beta: Var,
    pub w_gamma: Var,
    pub b_gamma: Var,
    pub w_beta: Var,
    pub b_beta: Var,
}

impl NormVars {
    pub fn from_bound(p: &Bound, prefix: &str) -> Result<Self> {
        let get = |s: &str| p.get(&format!("{prefix}.{s}"));
        Ok(NormVars {
            gamma: get("gamma")?,
            beta: get("beta")?,
            w_gamma: get("w_gamma")?,
            b_gamma: get("b_gamma")?,
            w_beta: get("w_beta")?,
            b_beta: get("b_beta")?,
        })
    }
}

/// Tensor values of one normalization's learnables.
#[derive(Clone, Debug, PartialEq)]
pub struct RescaleNormParams<T: Element> {
    /// `(1, C, 1, 1)`.
    pub gamma: Tensor<T>,
    /// `(1, C, 1, 1)`.
    pub beta_n: Tensor<T>,
    pub w_gamma: T,
    pub b_gamma: T,
    pub w_beta: T,
    pub b_beta: T,
}

impl<T: Element> RescaleNormParams<T> {
    /// With `F` the identity these parameters make the normalization the identity map.
    pub fn identity(channels: usize) -> Self {
        RescaleNormParams {
            gamma: Tensor::ones(Shape::new(1, channels, 1, 1)),
            beta_n: Tensor::zeros(Shape::new(1, channels, 1, 1)),
            w_gamma: T::one(),
            b_gamma: T::zero(),
            w_beta: T::one(),
            b_beta: T::zero(),
        }
    }

    pub fn record(&self, g: &mut Graph<T>) -> NormVars {
        NormVars {
            gamma: g.param(self.gamma.clone()),
            beta: g.param(self.beta_n.clone()),
            w_gamma: g.param(Tensor::scalar(self.w_gamma)),
            b_gamma: g.param(Tensor::scalar(self.b_gamma)),
            w_beta: g.param(Tensor::scalar(self.w_beta)),
            b_beta: g.param(Tensor::scalar(self.b_beta)),
        }
    }
}

/// `F((x - mu) / sigma * gamma + beta) * (sigma W_gamma + B_gamma) + (mu W_beta + B_beta)`
/// with per-sample, per-channel spatial statistics.
pub fn rescale_norm<T: Element>(
    g: &mut Graph<T>,
    x: Var,
    p: &NormVars,
    f: impl FnOnce(&mut Graph<T>, Var) -> Result<Var>,
) -> Result<Var> {
    let mu = g.spatial_mean(x)?;
    let sigma = g.spatial_std(x)?;
    let centered = g.sub(x, mu)?;
    let normed = g.div(centered, sigma)?;
    let scaled = g.mul(normed, p.gamma)?;
    let inner = g.add(scaled, p.beta)?;
    let y = f(g, inner)?;
    let s = g.mul(sigma, p.w_gamma)?;
    let s = g.add(s, p.b_gamma)?;
    let m = g.mul(mu, p.w_beta)?;
    let m = g.add(m, p.b_beta)?;
    let y = g.mul(y, s)?;
    g.add(y, m)
}

/// Geometry of a (possibly shifted) window tiling of an `H x W` map.
/// The map is reflect-padded on the bottom and right to whole windows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowLayout {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub win_h: usize,
    pub win_w: usize,
    pub shift_h: usize,
    pub shift_w: usize,
    pub padded_h: usize,
    pub padded_w: usize,
}

impl WindowLayout {
    pub fn new(n: usize, h: usize, w: usize, window: usize, shift: usize) -> Result<Self> {
        if window == 0 || shift >= window {
            return Err(invalid(format!("window {window} with shift {shift}: need 0 <= shift < window")));
        }
        if window > h || window > w {
            return Err(invalid(format!("window {window} larger than the {h}x{w} map")));
        }
        Ok(Self::build(n, h, w, window, window, shift, shift))
    }

    /// Clamps the window to the map; shifting is skipped along an axis a
    /// single window already covers.
    pub fn fitted(n: usize, h: usize, w: usize, window: usize, shift: usize) -> Self {
        let (wh, ww) = (window.min(h), window.min(w));
        let sh = if wh < h { shift % wh } else { 0 };
        let sw = if ww < w { shift % ww } else { 0 };
        Self::build(n, h, w, wh, ww, sh, sw)
    }

    fn build(n: usize, h: usize, w: usize, win_h: usize, win_w: usize, shift_h: usize, shift_w: usize) -> Self {
        WindowLayout {
            n,
            h,
            w,
            win_h,
            win_w,
            shift_h,
            shift_w,
            padded_h: h.div_ceil(win_h) * win_h,
            padded_w: w.div_ceil(win_w) * win_w,
        }
    }

    pub fn windows_per_image(&self) -> usize {
        (self.padded_h / self.win_h) * (self.padded_w / self.win_w)
    }

    pub fn tokens(&self) -> usize {
        self.win_h * self.win_w
    }

    /// Batch size of the token tensor.
    pub fn batches(&self) -> usize {
        self.n * self.windows_per_image()
    }

    /// Source indices into an `(N, total_c, H, W)` map for the token tensor
    /// `(N * nW, heads, T, d)` built from channels `offset .. offset + heads * d`.
    fn partition_index(&self, total_c: usize, offset: usize, heads: usize, d: usize) -> Vec<usize> {
        let (h, w) = (self.h, self.w);
        let cols = self.padded_w / self.win_w;
        let mut index = Vec::with_capacity(self.batches() * heads * self.tokens() * d);
        for n in 0..self.n {
            for win in 0..self.windows_per_image() {
                let (wy, wx) = (win / cols, win % cols);
                for head in 0..heads {
                    for ty in 0..self.win_h {
                        let py = (wy * self.win_h + ty + self.shift_h) % self.padded_h;
                        let sy = reflect(py, h);
                        for tx in 0..self.win_w {
                            let px = (wx * self.win_w + tx + self.shift_w) % self.padded_w;
                            let sx = reflect(px, w);
                            for j in 0..d {
                                let c = offset + head * d + j;
                                index.push(((n * total_c + c) * h + sy) * w + sx);
                            }
                        }
                    }
                }
            }
        }
        index
    }

    /// Source indices into `(N * nW, heads, T, d)` for the merged `(N, heads * d, H, W)` map.
    fn merge_index(&self, heads: usize, d: usize) -> Vec<usize> {
        let cols = self.padded_w / self.win_w;
        let t = self.tokens();
        let mut index = Vec::with_capacity(self.n * heads * d * self.h * self.w);
        for n in 0..self.n {
            for head in 0..heads {
                for j in 0..d {
                    for y in 0..self.h {
                        let py = (y + self.padded_h - self.shift_h) % self.padded_h;
                        let (wy, ty) = (py / self.win_h, py % self.win_h);
                        for x in 0..self.w {
                            let px = (x + self.padded_w - self.shift_w) % self.padded_w;
                            let (wx, tx) = (px / self.win_w, px % self.win_w);
                            let b = n * self.windows_per_image() + wy * cols + wx;
                            index.push(((b * heads + head) * t + ty * self.win_w + tx) * d + j);
                        }
                    }
                }
            }
        }
        index
    }
}

fn reflect(p: usize, len: usize) -> usize {
    if p < len {
        p
    } else {
        2 * (len - 1) - p
    }
}

/// Splits `x` into windows: tokens `(N * nW, 1, window^2, C)`.
pub fn window_partition<T: Element>(g: &mut Graph<T>, x: Var, window: usize, shift: usize) -> Result<(Var, WindowLayout)> {
    let [n, c, h, w] = g.shape(x).0;
    let layout = WindowLayout::new(n, h, w, window, shift)?;
    let out = Shape::new(layout.batches(), 1, layout.tokens(), c);
    let tokens = g.gather(x, out, Arc::new(layout.partition_index(c, 0, 1, c)))?;
    Ok((tokens, layout))
}

/// Inverse of [`window_partition`]: undoes the shift and drops the padding.
pub fn window_merge<T: Element>(g: &mut Graph<T>, tokens: Var, layout: &WindowLayout) -> Result<Var> {
    let [b, heads, t, d] = g.shape(tokens).0;
    if b != layout.batches() || t != layout.tokens() {
        return Err(shape_err("window_merge", format!("tokens {} do not fit layout {layout:?}", g.shape(tokens))));
    }
    let out = Shape::new(layout.n, heads * d, layout.h, layout.w);
    g.gather(tokens, out, Arc::new(layout.merge_index(heads, d)))
}

/// `Softmax(Q K^T / sqrt(d) + B) V` over `(batch, heads, tokens, d)` tensors.
pub fn attention_core<T: Element>(g: &mut Graph<T>, q: Var, k: Var, v: Var, bias: Option<Var>) -> Result<Var> {
    let d = g.shape(q).w();
    let logits = g.matmul(q, k, true)?;
    let logits = g.scale(logits, T::c(1.0 / (d as f64).sqrt()))?;
    let logits = match bias {
        Some(b) => g.add(logits, b)?,
        None => logits,
    };
    let attn = g.softmax(logits, 3)?;
    g.matmul(attn, v, false)
}

/// Index of the relative-offset table entry for every token pair: `(1, heads, T, T)`.
fn rel_bias_index(layout: &WindowLayout, window: usize, heads: usize) -> Vec<usize> {
    let r = 2 * window - 1;
    let t = layout.tokens();
    let mut index = Vec::with_capacity(heads * t * t);
    for head in 0..heads {
        for a in 0..t {
            let (ay, ax) = (a / layout.win_w, a % layout.win_w);
            for b in 0..t {
                let (by, bx) = (b / layout.win_w, b % layout.win_w);
                let dy = ay + window - 1 - by;
                let dx = ax + window - 1 - bx;
                index.push(head * r * r + dy * r + dx);
            }
        }
    }
    index
}

/// Window self-attention with relative position bias, plus a 3x3 aggregation
/// conv over the unpartitioned V map, followed by a 1x1 output projection.
pub fn window_attention<T: Element>(
    g: &mut Graph<T>,
    x: Var,
    p: &Bound,
    prefix: &str,
    heads: usize,
    window: usize,
    shift: usize,
) -> Result<Var> {
    let [n, c, h, w] = g.shape(x).0;
    if heads == 0 || c % heads != 0 {
        return Err(shape_err("window_attention", format!("{c} channels cannot be split into {heads} heads")));
    }
    let d = c / heads;
    let qkv = conv(g, x, p, &format!("{prefix}.qkv"), same(1))?;
    let layout = WindowLayout::fitted(n, h, w, window, shift);
    let tok = Shape::new(layout.batches(), heads, layout.tokens(), d);
    let mut qkv_tokens = [None; 3];
    for (i, slot) in qkv_tokens.iter_mut().enumerate() {
        *slot = Some(g.gather(qkv, tok, Arc::new(layout.partition_index(3 * c, i * c, heads, d)))?);
    }
    let [q, k, v] = qkv_tokens.map(Option::unwrap);

    let table = p.get(&format!("{prefix}.rel_bias"))?;
    let ts = g.shape(table);
    if ts != Shape::new(heads, (2 * window - 1).pow(2), 1, 1) {
        return Err(shape_err("window_attention", format!("relative bias table {ts} for {heads} heads, window {window}")));
    }
    let t = layout.tokens();
    let bias = g.gather(table, Shape::new(1, heads, t, t), Arc::new(rel_bias_index(&layout, window, heads)))?;

    let out = attention_core(g, q, k, v, Some(bias))?;
    let merged = window_merge(g, out, &layout)?;

    let v_map = g.slice_channels(qkv, 2 * c, c)?;
    let mode = if h > 1 && w > 1 { PadMode::Reflect } else { PadMode::Zeros };
    let agg = conv(g, v_map, p, &format!("{prefix}.agg"), ConvSpec { stride: 1, padding: 1, mode })?;
    let sum = g.add(merged, agg)?;
    conv(g, sum, p, &format!("{prefix}.proj"), same(1))
}

fn mlp<T: Element>(g: &mut Graph<T>, x: Var, p: &Bound, prefix: &str) -> Result<Var> {
    let hdn = conv(g, x, p, &format!("{prefix}.fc1"), same(1))?;
    let hdn = g.gelu(hdn)?;
    conv(g, hdn, p, &format!("{prefix}.fc2"), same(1))
}

/// Two residual blocks (window shift 0, then window / 2), each with a
/// normalized attention branch and a normalized MLP branch.
pub fn transformer_layer<T: Element>(g: &mut Graph<T>, x: Var, p: &Bound, cfg: &ModelConfig, stage: usize) -> Result<Var> {
    let mut x = x;
    for blk in 0..2 {
        let pre = format!("tr{stage}.blk{blk}");
        let shift = if blk == 1 { cfg.window / 2 } else { 0 };
        let norm = NormVars::from_bound(p, &format!("{pre}.attn_norm"))?;
        let attn_prefix = format!("{pre}.attn");
        let a = rescale_norm(g, x, &norm, |g, h| {
            window_attention(g, h, p, &attn_prefix, cfg.heads[stage], cfg.window, shift)
        })?;
        x = g.add(x, a)?;
        let norm = NormVars::from_bound(p, &format!("{pre}.mlp_norm"))?;
        let mlp_prefix = format!("{pre}.mlp");
        let m = rescale_norm(g, x, &norm, |g, h| mlp(g, h, p, &mlp_prefix))?;
        x = g.add(x, m)?;
    }
    Ok(x)
}

/// Stride-2 trunk conv shared by two conv heads. The fusion head exists only
/// when the configuration adds or gates with it.
pub fn cnn_layer<T: Element>(
    g: &mut Graph<T>,
    x: Var,
    p: &Bound,
    cfg: &ModelConfig,
    stage: usize,
) -> Result<(Option<Var>, Var)> {
    let trunk_spec = ConvSpec {
        stride: 2,
        padding: 1,
        mode: PadMode::Zeros,
    };
    let trunk = conv_relu(g, x, p, &format!("cnn{stage}.trunk"), trunk_spec)?;
    let fusion = if cfg.has_fusion_head() {
        Some(conv_relu(g, trunk, p, &format!("cnn{stage}.fuse"), same(3))?)
    } else {
        None
    };
    let main = conv_relu(g, trunk, p, &format!("cnn{stage}.main"), same(3))?;
    Ok((fusion, main))
}

/// `sigmoid(mlp(avgpool(x)) + mlp(maxpool(x)))` with one shared MLP: `(N, C, 1, 1)`.
pub fn channel_attention<T: Element>(g: &mut Graph<T>, x: Var, p: &Bound, prefix: &str) -> Result<Var> {
    let (w1, b1) = (p.get(&format!("{prefix}.fc1.w"))?, p.get(&format!("{prefix}.fc1.b"))?);
    let (w2, b2) = (p.get(&format!("{prefix}.fc2.w"))?, p.get(&format!("{prefix}.fc2.b"))?);
    let branch = |g: &mut Graph<T>, kind| -> Result<Var> {
        let v = g.pool2d(x, kind, PoolScope::Global)?;
        let hdn = g.linear(v, w1, b1)?;
        let hdn = g.relu(hdn)?;
        g.linear(hdn, w2, b2)
    };
    let avg = branch(g, PoolKind::Avg)?;
    let max = branch(g, PoolKind::Max)?;
    let s = g.add(avg, max)?;
    g.sigmoid(s)
}

/// `sigmoid(conv(concat(mean_c(x), max_c(x))))`: `(N, 1, H, W)`.
pub fn pixel_attention<T: Element>(g: &mut Graph<T>, x: Var, p: &Bound, prefix: &str) -> Result<Var> {
    let mean = g.channel_stats(x, StatKind::Mean)?;
    let max = g.channel_stats(x, StatKind::Max)?;
    let both = g.concat_channels(&[mean, max])?;
    let k = g.shape(p.get(&format!("{prefix}.pix.w"))?).h();
    let logits = conv(g, both, p, &format!("{prefix}.pix"), same(k))?;
    g.sigmoid(logits)
}

/// Channel and pixel attention weights applied to `target`.
fn apply_cpa<T: Element>(g: &mut Graph<T>, source: Var, target: Var, p: &Bound, prefix: &str) -> Result<Var> {
    let ca = channel_attention(g, source, p, prefix)?;
    let pa = pixel_attention(g, source, p, prefix)?;
    let y = g.mul(target, ca)?;
    g.mul(y, pa)
}

/// `channel_attention(x) * pixel_attention(x) * x`.
pub fn cpa<T: Element>(g: &mut Graph<T>, x: Var, p: &Bound, prefix: &str) -> Result<Var> {
    apply_cpa(g, x, x, p, prefix)
}

/// Brings the transformer features to CNN resolution, combines them with the
/// fusion head and turns the result into guidance for the main head.
///
/// | FA | CPA | guided |
/// |----|-----|--------|
/// | no | no  | `main` |
/// | yes| no  | `main + (t_up + fusion)` |
/// | no | yes | `cpa_weights(fusion) * main` |
/// | yes| yes | `cpa_weights(t_up + fusion) * main` |
#[allow(clippy::too_many_arguments)]
pub fn fuse_and_guide<T: Element>(
    g: &mut Graph<T>,
    t_feat: Var,
    c_fusion: Option<Var>,
    c_main: Var,
    cfg: &ModelConfig,
    p: &Bound,
    stage: usize,
) -> Result<Var> {
    let (ts, cs) = (g.shape(t_feat), g.shape(c_main));
    let df = cfg.downsample_factor;
    if ts.h() * df != cs.h() || ts.w() * df != cs.w() || ts.c() != cs.c() || ts.n() != cs.n() {
        return Err(shape_err(
            "fuse_and_guide",
            format!("transformer features {ts} are not CNN features {cs} downsampled by {df}"),
        ));
    }
    if !cfg.has_fusion_head() {
        return Ok(c_main);
    }
    let fusion = c_fusion.ok_or_else(|| invalid("fuse_and_guide: configuration needs the fusion head output"))?;
    let s = if cfg.use_fa {
        let t_up = if df == 2 {
            g.resize2d(t_feat, ResizeFactor::Up2, ResizeMode::Bilinear)?
        } else {
            t_feat
        };
        g.add(t_up, fusion)?
    } else {
        fusion
    };
    if cfg.use_cpa {
        apply_cpa(g, s, c_main, p, &format!("cpa{stage}"))
    } else {
        g.add(c_main, s)
    }
}
