//! Full-reference image quality: PSNR on RGB, SSIM and histogram entropy on luma.

use serde::{Serialize, Serializer};

use crate::error::{invalid, shape_err, Result};
use crate::imageio::quantize;
use crate::tensor::{Element, Tensor};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// `10 log10(peak^2 / MSE)` over all elements; identical inputs give `+inf`.
pub fn psnr<T: Element>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(shape_err("psnr", format!("{} vs {}", a.shape(), b.shape())));
    }
    if a.data().is_empty() {
        return Err(invalid("psnr: empty image"));
    }
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x.f64() - y.f64()).powi(2))
        .sum::<f64>()
        / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Luma plane `0.299 R + 0.587 G + 0.114 B` of a `1x3xHxW` image; a
/// single-channel image is returned as is.
pub fn luma<T: Element>(img: &Tensor<T>) -> Result<(usize, usize, Vec<f64>)> {
    let [n, c, h, w] = img.shape().0;
    if n != 1 || !(c == 1 || c == 3) {
        return Err(shape_err("luma", format!("expected 1x3xHxW or 1x1xHxW, got {}", img.shape())));
    }
    let d = img.data();
    let plane = h * w;
    let y = if c == 1 {
        d.iter().map(|v| v.f64()).collect()
    } else {
        (0..plane)
            .map(|i| 0.299 * d[i].f64() + 0.587 * d[plane + i].f64() + 0.114 * d[2 * plane + i].f64())
            .collect()
    };
    Ok((h, w, y))
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian filter over the valid region.
fn filter_valid(x: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for xo in 0..ow {
            rows[y * ow + xo] = (0..n).map(|i| k[i] * x[y * w + xo + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for yo in 0..oh {
        for xo in 0..ow {
            out[yo * ow + xo] = (0..n).map(|i| k[i] * rows[(yo + i) * ow + xo]).sum();
        }
    }
    out
}

/// Mean SSIM on luma with an 11x11 Gaussian window (sigma 1.5), valid region only.
pub fn ssim<T: Element>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(shape_err("ssim", format!("{} vs {}", a.shape(), b.shape())));
    }
    let (h, w, x) = luma(a)?;
    let (_, _, y) = luma(b)?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(invalid(format!("ssim: image {h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")));
    }
    let c1 = (SSIM_K1 * peak).powi(2);
    let c2 = (SSIM_K2 * peak).powi(2);
    let k = gaussian_window();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
    let (mx, my) = (filter_valid(&x, h, w, &k), filter_valid(&y, h, w, &k));
    let (sxx, syy, sxy) = (filter_valid(&xx, h, w, &k), filter_valid(&yy, h, w, &k), filter_valid(&xy, h, w, &k));
    let total: f64 = (0..mx.len())
        .map(|i| {
            let (ma, mb) = (mx[i], my[i]);
            let va = sxx[i] - ma * ma;
            let vb = syy[i] - mb * mb;
            let cov = sxy[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / mx.len() as f64)
}

/// Shannon entropy in bits of the 256-bin histogram of quantized luma.
pub fn entropy<T: Element>(img: &Tensor<T>) -> Result<f64> {
    let (_, _, y) = luma(img)?;
    if y.is_empty() {
        return Err(invalid("entropy: empty image"));
    }
    let mut hist = [0usize; 256];
    for v in &y {
        hist[quantize(*v) as usize] += 1;
    }
    let n = y.len() as f64;
    Ok(hist
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum())
}

fn serialize_db<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_infinite() {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

/// Formats a PSNR value, writing `inf` for identical images.
pub fn format_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.4}")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MetricReport {
    #[serde(serialize_with = "serialize_db")]
    pub psnr: f64,
    pub ssim: f64,
    pub entropy: f64,
}

impl MetricReport {
    /// Scores `pred` against `reference`; entropy is that of `pred`.
    pub fn compute<T: Element>(pred: &Tensor<T>, reference: &Tensor<T>) -> Result<Self> {
        Ok(MetricReport {
            psnr: psnr(pred, reference, 1.0)?,
            ssim: ssim(pred, reference, 1.0)?,
            entropy: entropy(pred)?,
        })
    }

    /// Component-wise arithmetic mean.
    pub fn mean(rows: &[MetricReport]) -> Option<MetricReport> {
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        Some(MetricReport {
            psnr: rows.iter().map(|r| r.psnr).sum::<f64>() / n,
            ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / n,
            entropy: rows.iter().map(|r| r.entropy).sum::<f64>() / n,
        })
    }
}
