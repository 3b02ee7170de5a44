//! Atmospheric scattering model: `I = J t + A (1 - t)` with `t = exp(-beta d)`.
//!
//! Used both to synthesize hazy/clean training pairs with known ground truth
//! and as an analytic oracle (the model inverts exactly when `t` is known).

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};
use crate::imageio;
use crate::rng::{derive_seed, stream, Rng};
use crate::tensor::{Element, Shape, Tensor};

/// Default lower bound on `t` used when inverting the model.
pub const DEFAULT_T_MIN: f64 = 0.05;

/// Global atmospheric light, gray or per channel, in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Airlight {
    Gray(f64),
    Rgb([f64; 3]),
}

impl Airlight {
    pub fn channel(&self, c: usize) -> f64 {
        match *self {
            Airlight::Gray(a) => a,
            Airlight::Rgb(rgb) => rgb[c],
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Airlight::Gray(a) => (0.0..=1.0).contains(&a),
            Airlight::Rgb(rgb) => rgb.iter().all(|a| (0.0..=1.0).contains(a)),
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("atmospheric light {self:?} must lie in [0, 1]")))
        }
    }
}

#[derive(Clone, Debug)]
pub struct HazeScene<T: Element> {
    /// Clean image `1x3xHxW` in `[0, 1]`.
    pub clean: Tensor<T>,
    /// Depth `1x1xHxW`, non-negative.
    pub depth: Tensor<T>,
    pub airlight: Airlight,
    /// Haze density coefficient.
    pub beta: f64,
}

/// `t = exp(-beta d)` elementwise.
pub fn transmission<T: Element>(depth: &Tensor<T>, beta: f64) -> Result<Tensor<T>> {
    if beta.is_nan() || beta < 0.0 {
        return Err(invalid(format!("haze density beta must be non-negative, got {beta}")));
    }
    if let Some(d) = depth.data().iter().find(|d| d.f64().is_nan() || d.f64() < 0.0) {
        return Err(invalid(format!("depth must be non-negative, found {d}")));
    }
    Ok(depth.map(|d| T::c((-beta * d.f64()).exp())))
}

/// A map is congruent with an image if it shares N, H, W and has 1 or C channels.
fn check_congruent(what: &'static str, img: Shape, t: Shape) -> Result<()> {
    if (img.n(), img.h(), img.w()) != (t.n(), t.h(), t.w()) || (t.c() != 1 && t.c() != img.c()) {
        return Err(shape_err(what, format!("image {img} and map {t} are not spatially congruent")));
    }
    Ok(())
}

/// Hazy image `I = J t + A (1 - t)`.
pub fn apply_haze<T: Element>(scene: &HazeScene<T>) -> Result<Tensor<T>> {
    let cs = scene.clean.shape();
    if cs.c() != 3 {
        return Err(shape_err("apply_haze", format!("clean image must have 3 channels, got {cs}")));
    }
    check_congruent("apply_haze", cs, scene.depth.shape())?;
    scene.airlight.validate()?;
    let t = transmission(&scene.depth, scene.beta)?;
    Ok(blend(&scene.clean, &t, scene.airlight))
}

/// `J t + A (1 - t)` evaluated in f64; `t` may be `Nx1xHxW` or full size.
pub fn blend<T: Element>(clean: &Tensor<T>, t: &Tensor<T>, airlight: Airlight) -> Tensor<T> {
    let tc = t.shape().c();
    Tensor::from_fn(clean.shape(), |[n, ch, y, x]| {
        let j = clean.at([n, ch, y, x]).f64();
        let tv = t.at([n, if tc == 1 { 0 } else { ch }, y, x]).f64();
        let a = airlight.channel(ch);
        T::c(j * tv + a * (1.0 - tv))
    })
}

/// Inverts the model given `t`: `J = (I - A (1 - t)) / max(t, t_min)`.
pub fn invert_haze<T: Element>(hazy: &Tensor<T>, t: &Tensor<T>, airlight: Airlight, t_min: f64) -> Result<Tensor<T>> {
    if t_min.is_nan() || t_min <= 0.0 {
        return Err(invalid(format!("t_min must be positive, got {t_min}")));
    }
    check_congruent("invert_haze", hazy.shape(), t.shape())?;
    let tc = t.shape().c();
    Ok(Tensor::from_fn(hazy.shape(), |[n, ch, y, x]| {
        let i = hazy.at([n, ch, y, x]).f64();
        let tv = t.at([n, if tc == 1 { 0 } else { ch }, y, x]).f64();
        let a = airlight.channel(ch);
        T::c((i - a * (1.0 - tv)) / tv.max(t_min))
    }))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DepthKind {
    LinearRamp,
    Radial,
    PerlinLike,
}

impl DepthKind {
    pub const ALL: [DepthKind; 3] = [DepthKind::LinearRamp, DepthKind::Radial, DepthKind::PerlinLike];
}

impl fmt::Display for DepthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DepthKind::LinearRamp => "linear-ramp",
            DepthKind::Radial => "radial",
            DepthKind::PerlinLike => "perlin-like",
        })
    }
}

/// Depth family for a dataset: one kind, or cycle through all three by index.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DepthChoice {
    Fixed(DepthKind),
    Mixed,
}

impl DepthChoice {
    pub fn for_index(&self, i: usize) -> DepthKind {
        match *self {
            DepthChoice::Fixed(k) => k,
            DepthChoice::Mixed => DepthKind::ALL[i % 3],
        }
    }
}

impl FromStr for DepthChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "linear-ramp" => DepthChoice::Fixed(DepthKind::LinearRamp),
            "radial" => DepthChoice::Fixed(DepthKind::Radial),
            "perlin-like" => DepthChoice::Fixed(DepthKind::PerlinLike),
            "mixed" => DepthChoice::Mixed,
            other => {
                return Err(invalid(format!(
                    "unknown depth kind {other:?} (expected linear-ramp, radial, perlin-like or mixed)"
                )))
            }
        })
    }
}

/// Smoothly interpolated lattice noise in `[0, 1]`.
fn value_noise(h: usize, w: usize, cells: usize, rng: &mut Rng) -> Vec<f64> {
    let g = cells + 1;
    let lattice: Vec<f64> = (0..g * g).map(|_| rng.gen::<f64>()).collect();
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        let fy = y as f64 / h.max(2) as f64 * cells as f64;
        let (y0, ty) = (fy.floor() as usize, smooth(fy.fract()));
        for x in 0..w {
            let fx = x as f64 / w.max(2) as f64 * cells as f64;
            let (x0, tx) = (fx.floor() as usize, smooth(fx.fract()));
            let at = |yy: usize, xx: usize| lattice[yy.min(cells) * g + xx.min(cells)];
            let top = at(y0, x0) * (1.0 - tx) + at(y0, x0 + 1) * tx;
            let bot = at(y0 + 1, x0) * (1.0 - tx) + at(y0 + 1, x0 + 1) * tx;
            out.push(top * (1.0 - ty) + bot * ty);
        }
    }
    out
}

fn normalize(v: &mut [f64]) {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-12);
    for x in v {
        *x = (*x - lo) / span;
    }
}

/// Procedural depth map `1x1xHxW` with values in `[0, 1]`.
pub fn depth_map<T: Element>(kind: DepthKind, h: usize, w: usize, rng: &mut Rng) -> Tensor<T> {
    let mut d: Vec<f64> = match kind {
        DepthKind::LinearRamp => {
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            let (dy, dx) = angle.sin_cos();
            (0..h * w)
                .map(|i| {
                    let (y, x) = ((i / w) as f64, (i % w) as f64);
                    y * dy + x * dx
                })
                .collect()
        }
        DepthKind::Radial => {
            let cy = rng.gen_range(0.0..h as f64);
            let cx = rng.gen_range(0.0..w as f64);
            (0..h * w)
                .map(|i| {
                    let (y, x) = ((i / w) as f64 - cy, (i % w) as f64 - cx);
                    (y * y + x * x).sqrt()
                })
                .collect()
        }
        DepthKind::PerlinLike => {
            let mut acc = vec![0.0; h * w];
            let mut amp = 1.0;
            for octave in 0..3 {
                let layer = value_noise(h, w, 2usize << octave, rng);
                for (a, l) in acc.iter_mut().zip(layer) {
                    *a += amp * l;
                }
                amp *= 0.5;
            }
            acc
        }
    };
    normalize(&mut d);
    Tensor::from_vec(Shape::new(1, 1, h, w), d.into_iter().map(T::c).collect()).unwrap()
}

/// Procedural clean image `1x3xHxW`: gradient, checkerboard or filtered noise.
pub fn procedural_clean<T: Element>(variant: usize, h: usize, w: usize, rng: &mut Rng) -> Tensor<T> {
    let mut color = || -> [f64; 3] { [rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95)] };
    let (c0, c1) = (color(), color());
    let mut planes = vec![0.0; 3 * h * w];
    match variant % 3 {
        0 => {
            let freq = rng.gen_range(1.0..4.0);
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            for y in 0..h {
                for x in 0..w {
                    let u = (x as f64 + y as f64 * 0.5) / (w as f64 * 1.5);
                    let s = 0.5 + 0.15 * (freq * std::f64::consts::TAU * y as f64 / h as f64 + phase).sin();
                    for c in 0..3 {
                        planes[c * h * w + y * w + x] = (c0[c] * (1.0 - u) + c1[c] * u) * (0.7 + 0.6 * (s - 0.5)) + 0.15 * s;
                    }
                }
            }
        }
        1 => {
            let cell = rng.gen_range(4..=12usize);
            for y in 0..h {
                for x in 0..w {
                    let on = ((y / cell) + (x / cell)) % 2 == 0;
                    for c in 0..3 {
                        planes[c * h * w + y * w + x] = if on { c0[c] } else { c1[c] };
                    }
                }
            }
        }
        _ => {
            for c in 0..3 {
                let layer = value_noise(h, w, 6, rng);
                for (i, v) in layer.into_iter().enumerate() {
                    planes[c * h * w + i] = c0[c] * 0.4 + v * 0.6;
                }
            }
        }
    }
    for v in &mut planes {
        *v = v.clamp(0.0, 1.0);
    }
    Tensor::from_vec(Shape::new(1, 3, h, w), planes.into_iter().map(T::c).collect()).unwrap()
}

#[derive(Clone, Debug)]
pub enum CleanSource<T: Element> {
    Procedural,
    Images(Vec<Tensor<T>>),
}

#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub n: usize,
    pub height: usize,
    pub width: usize,
    pub depth: DepthChoice,
    pub beta_range: (f64, f64),
    pub airlight_range: (f64, f64),
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n: 8,
            height: 64,
            width: 64,
            depth: DepthChoice::Mixed,
            beta_range: (0.3, 1.0),
            airlight_range: (0.7, 1.0),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: usize,
    pub seed: u64,
    pub beta: f64,
    #[serde(rename = "A")]
    pub airlight: Airlight,
    pub depth_kind: DepthKind,
    pub hazy: String,
    pub clean: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub pairs: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug)]
pub struct Pair<T: Element> {
    pub hazy: Tensor<T>,
    pub clean: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct Dataset<T: Element> {
    pub pairs: Vec<Pair<T>>,
    pub manifest: Manifest,
}

fn check_range(name: &str, (lo, hi): (f64, f64), max: f64) -> Result<()> {
    if !(lo >= 0.0 && lo <= hi && hi <= max) {
        return Err(invalid(format!("{name} range [{lo}, {hi}] must satisfy 0 <= lo <= hi <= {max}")));
    }
    Ok(())
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(invalid("dataset size n must be at least 1"));
        }
        if self.height < 2 || self.width < 2 {
            return Err(invalid(format!("image size {}x{} too small", self.height, self.width)));
        }
        check_range("beta", self.beta_range, f64::MAX)?;
        check_range("atmospheric light", self.airlight_range, 1.0)
    }
}

fn draw(rng: &mut Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..=hi)
    } else {
        lo
    }
}

/// Synthesizes `cfg.n` hazy/clean pairs. Pair `i` only depends on
/// `(cfg.seed, i)`, so any subset can be regenerated independently.
pub fn synth_dataset<T: Element>(sources: &CleanSource<T>, cfg: &SynthConfig) -> Result<Dataset<T>> {
    cfg.validate()?;
    if let CleanSource::Images(imgs) = sources {
        if imgs.is_empty() {
            return Err(invalid("no clean source images"));
        }
    }
    let mut pairs = Vec::with_capacity(cfg.n);
    let mut entries = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let pair_seed = derive_seed(cfg.seed, i as u64);
        let mut rng = stream(pair_seed, 0);
        let clean = match sources {
            CleanSource::Procedural => procedural_clean(i, cfg.height, cfg.width, &mut rng),
            CleanSource::Images(imgs) => {
                let img = &imgs[i % imgs.len()];
                fit_image(img, cfg.height, cfg.width, &mut rng)?
            }
        };
        let kind = cfg.depth.for_index(i);
        let depth = depth_map(kind, cfg.height, cfg.width, &mut rng);
        let beta = draw(&mut rng, cfg.beta_range);
        let airlight = Airlight::Gray(draw(&mut rng, cfg.airlight_range));
        let scene = HazeScene { clean, depth, airlight, beta };
        let hazy = apply_haze(&scene)?;
        entries.push(ManifestEntry {
            index: i,
            seed: pair_seed,
            beta,
            airlight,
            depth_kind: kind,
            hazy: format!("{i:03}_hazy.png"),
            clean: format!("{i:03}_clean.png"),
        });
        pairs.push(Pair { hazy, clean: scene.clean });
    }
    Ok(Dataset {
        pairs,
        manifest: Manifest {
            seed: cfg.seed,
            height: cfg.height,
            width: cfg.width,
            pairs: entries,
        },
    })
}

/// Random crop of a user image to `h x w` (nearest-neighbour upscale first if it is smaller).
fn fit_image<T: Element>(img: &Tensor<T>, h: usize, w: usize, rng: &mut Rng) -> Result<Tensor<T>> {
    let [_, c, ih, iw] = img.shape().0;
    if c != 3 {
        return Err(shape_err("synth_dataset", format!("source image must be RGB, got {}", img.shape())));
    }
    let scale = ((h as f64 / ih as f64).max(w as f64 / iw as f64)).max(1.0);
    let (sh, sw) = (((ih as f64) * scale).ceil() as usize, ((iw as f64) * scale).ceil() as usize);
    let top = rng.gen_range(0..=sh - h);
    let left = rng.gen_range(0..=sw - w);
    Ok(Tensor::from_fn(Shape::new(1, 3, h, w), |[_, ch, y, x]| {
        let sy = (((y + top) as f64 / scale) as usize).min(ih - 1);
        let sx = (((x + left) as f64 / scale) as usize).min(iw - 1);
        img.at([0, ch, sy, sx])
    }))
}

/// Writes the PNG pairs and `manifest.json` into `dir` (created if needed).
pub fn write_dataset<T: Element>(dir: &Path, ds: &Dataset<T>) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (pair, entry) in ds.pairs.iter().zip(&ds.manifest.pairs) {
        imageio::write_png(&dir.join(&entry.hazy), &pair.hazy)?;
        imageio::write_png(&dir.join(&entry.clean), &pair.clean)?;
    }
    let json = serde_json::to_string_pretty(&ds.manifest)?;
    std::fs::write(dir.join(MANIFEST_FILE), json + "\n")?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

/// Loads a dataset written by [`write_dataset`] (values are 8-bit quantized).
pub fn load_dataset<T: Element>(dir: &Path) -> Result<Dataset<T>> {
    let manifest = read_manifest(dir)?;
    if manifest.pairs.is_empty() {
        return Err(invalid(format!("{}: manifest lists no pairs", dir.display())));
    }
    let mut pairs = Vec::with_capacity(manifest.pairs.len());
    for e in &manifest.pairs {
        pairs.push(Pair {
            hazy: imageio::read_png(&dir.join(&e.hazy))?,
            clean: imageio::read_png(&dir.join(&e.clean))?,
        });
    }
    Ok(Dataset { pairs, manifest })
}
