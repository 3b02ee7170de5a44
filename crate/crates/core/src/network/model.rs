use crate::autograd::{ConvSpec, Graph, PadMode, ResizeFactor, ResizeMode, Var};
use std::sync::Arc;

use crate::error::{shape_err, Result};
use crate::tensor::{Element, Shape, Tensor};

use super::config::ModelConfig;
use super::layers::{cnn_layer, conv, conv_relu, fuse_and_guide, same, transformer_layer};
use super::params::{param_specs, Bound, ParamStore};

fn patch_embed() -> ConvSpec {
    ConvSpec {
        stride: 2,
        padding: 0,
        mode: PadMode::Zeros,
    }
}

/// Periodic reflection of position `p` into `0..len` (a single row or column repeats).
fn fold(p: usize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len - 1);
    let m = p % period;
    if m < len {
        m
    } else {
        period - m
    }
}

/// Reflect-pads bottom/right to `h x w` by any amount, folding repeatedly
/// when the padding exceeds the map.
fn pad_to<T: Element>(g: &mut Graph<T>, x: Var, h: usize, w: usize) -> Result<Var> {
    let [n, c, sh, sw] = g.shape(x).0;
    if (sh, sw) == (h, w) {
        return Ok(x);
    }
    let mut index = Vec::with_capacity(n * c * h * w);
    for plane in 0..n * c {
        for y in 0..h {
            let row = (plane * sh + fold(y, sh)) * sw;
            index.extend((0..w).map(|xx| row + fold(xx, sw)));
        }
    }
    g.gather(x, Shape::new(n, c, h, w), Arc::new(index))
}

/// Records the full model on `g` and returns the restored image (not clamped).
///
/// The input is reflect-padded to a multiple of [`ModelConfig::size_multiple`]
/// and the output cropped back, so any `N x 3 x H x W` input is accepted.
pub fn model_forward<T: Element>(g: &mut Graph<T>, input: Var, cfg: &ModelConfig, p: &Bound) -> Result<Var> {
    cfg.validate()?;
    let s = g.shape(input);
    if s.c() != 3 {
        return Err(shape_err("model_forward", format!("expected 3 input channels, got {s}")));
    }
    let m = cfg.size_multiple();
    let (h, w) = (s.h(), s.w());
    let x = pad_to(g, input, h.div_ceil(m) * m, w.div_ceil(m) * m)?;

    let stem = conv(g, x, p, "stem", same(3)).map_err(|e| e.in_layer("stem"))?;
    let t_in = if cfg.downsample_factor == 2 {
        g.resize2d(x, ResizeFactor::Down2, ResizeMode::Bilinear)?
    } else {
        x
    };

    let (mut c, mut t) = (stem, t_in);
    let mut guided = Vec::with_capacity(4);
    for i in 0..4 {
        let (fusion, main) = cnn_layer(g, c, p, cfg, i).map_err(|e| e.in_layer(&format!("cnn{i}")))?;
        let tr = (|| {
            let e = conv(g, t, p, &format!("tr{i}.embed"), patch_embed())?;
            transformer_layer(g, e, p, cfg, i)
        })()
        .map_err(|e| e.in_layer(&format!("tr{i}")))?;
        let gd = fuse_and_guide(g, tr, fusion, main, cfg, p, i).map_err(|e| e.in_layer(&format!("fuse{i}")))?;
        guided.push(gd);
        c = gd;
        t = tr;
    }

    let t_top = if cfg.downsample_factor == 2 {
        g.resize2d(t, ResizeFactor::Up2, ResizeMode::Bilinear)?
    } else {
        t
    };
    let mut y = g.add(guided[3], t_top).map_err(|e| e.in_layer("bottleneck"))?;
    for k in 0..4 {
        let name = format!("dec{k}");
        y = (|| {
            let cat = g.concat_channels(&[y, guided[3 - k]])?;
            let up = g.resize2d(cat, ResizeFactor::Up2, ResizeMode::Nearest)?;
            conv_relu(g, up, p, &name, same(3))
        })()
        .map_err(|e| e.in_layer(&name))?;
    }
    let residual = conv(g, y, p, "head", same(3)).map_err(|e| e.in_layer("head"))?;
    let out = g.add(x, residual)?;
    let os = g.shape(out);
    if (os.h(), os.w()) == (h, w) {
        Ok(out)
    } else {
        g.crop(out, 0, 0, h, w)
    }
}

/// Inference on a batch: forward pass without gradients, clamped to `[0, 1]`.
pub fn predict<T: Element>(cfg: &ModelConfig, params: &ParamStore<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let p = params.bind(&mut g);
    let x = g.input(input.clone());
    let y = model_forward(&mut g, x, cfg, &p)?;
    Ok(g.value(y).map(|v| v.max(T::zero()).min(T::one())))
}

/// Parameter count and analytic multiply-accumulate count for one
/// `3 x h x w` image (conv, linear and attention matrix products).
pub fn count_params_macs(cfg: &ModelConfig, h: usize, w: usize) -> (usize, u64) {
    let params = param_specs(cfg).iter().map(|s| s.shape.numel()).sum();
    let m = cfg.size_multiple();
    let (mut hh, mut ww) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
    let wd = cfg.widths;
    let conv = |oh: usize, ow: usize, oc: usize, ic: usize, k: usize| (oh * ow * oc * ic * k * k) as u64;

    let mut macs = conv(hh, ww, wd[0], 3, 3);
    let df = cfg.downsample_factor;
    let (mut th, mut tw) = (hh / df, ww / df);
    let mut skips = Vec::with_capacity(4);
    for i in 0..4 {
        let prev = if i == 0 { wd[0] } else { wd[i - 1] };
        hh /= 2;
        ww /= 2;
        let heads_n = 1 + usize::from(cfg.has_fusion_head());
        macs += conv(hh, ww, wd[i], prev, 3) + heads_n as u64 * conv(hh, ww, wd[i], wd[i], 3);

        let t_prev = if i == 0 { 3 } else { wd[i - 1] };
        th /= 2;
        tw /= 2;
        macs += conv(th, tw, wd[i], t_prev, 2);
        let c = wd[i];
        let d = c / cfg.heads[i];
        for blk in 0..2 {
            let shift = if blk == 1 { cfg.window / 2 } else { 0 };
            let lay = super::layers::WindowLayout::fitted(1, th, tw, cfg.window, shift);
            let t = lay.tokens() as u64;
            let attn = lay.batches() as u64 * cfg.heads[i] as u64 * 2 * t * t * d as u64;
            macs += conv(th, tw, 3 * c, c, 1) + attn + conv(th, tw, c, c, 3) + conv(th, tw, c, c, 1);
            let hid = cfg.mlp_hidden(i);
            macs += conv(th, tw, hid, c, 1) + conv(th, tw, c, hid, 1);
        }
        if cfg.use_cpa {
            let hid = cfg.cpa_hidden(i);
            macs += 2 * (hid * c + c * hid) as u64 + conv(hh, ww, 1, 2, cfg.pixel_kernel);
        }
        skips.push((wd[i], hh, ww));
    }
    let outs = [wd[2], wd[1], wd[0], wd[0]];
    let mut ch = wd[3];
    for (k, &out) in outs.iter().enumerate() {
        let (sc, sh, sw) = skips[3 - k];
        macs += conv(sh * 2, sw * 2, out, ch + sc, 3);
        ch = out;
    }
    let (fh, fw) = (skips[0].1 * 2, skips[0].2 * 2);
    macs += conv(fh, fw, 3, wd[0], 3);
    (params, macs)
}
