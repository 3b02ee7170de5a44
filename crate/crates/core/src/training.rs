//! Adam on an L1 loss over random crops whose side grows on a schedule.

use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::error::{invalid, shape_err, Error, Result};
use crate::haze::Dataset;
use crate::metrics::{format_db, psnr};
use crate::network::{checkpoint, init_params, model_forward, param_specs, predict, ModelConfig, ParamStore};
use crate::rng::{stream, Rng};
use crate::tensor::{Element, Shape, Tensor};

/// Per-parameter gradients keyed by parameter name.
pub type NamedGrads = Vec<(String, Vec<f32>)>;

pub const LOG_HEADER: &str = "step,loss,patch_side,psnr_holdout";
pub const LOG_FILE: &str = "log.csv";
pub const MODEL_FILE: &str = "model.ckpt";
pub const MODEL_CONFIG_FILE: &str = "model.json";
pub const STATE_FILE: &str = "state.ckpt";
pub const STATE_META_FILE: &str = "state.json";
pub const SUMMARY_FILE: &str = "summary.json";

/// Every patch side must be a multiple of this.
pub const PATCH_MULTIPLE: usize = 16;

const STREAM_CROP: u64 = 1 << 32;
const STREAM_EPOCH: u64 = 2 << 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub steps: usize,
    pub batch: usize,
    /// `(start_step, side)` stages; `None` selects the desk schedule.
    pub patch_schedule: Option<Vec<(usize, usize)>>,
    pub seed: u64,
    /// Write a numbered checkpoint every this many steps (0: final only).
    pub checkpoint_every: usize,
    /// Log held-out PSNR every this many steps (0: final step only).
    pub eval_every: usize,
    /// Withhold the last pair for held-out PSNR when there are at least two.
    pub holdout: bool,
    /// Cosine decay of the learning rate to zero over `steps`.
    pub lr_decay: bool,
    /// Global gradient-norm clip.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            steps: 500,
            batch: 2,
            patch_schedule: None,
            seed: 0,
            checkpoint_every: 0,
            eval_every: 50,
            holdout: true,
            lr_decay: true,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> Result<PatchSchedule> {
        match &self.patch_schedule {
            Some(stages) => PatchSchedule::new(stages.clone()),
            None => Ok(PatchSchedule::desk(self.steps)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(invalid(format!("lr must be positive, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(invalid(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(invalid(format!("eps must be positive, got {}", self.eps)));
        }
        if self.batch == 0 {
            return Err(invalid("batch must be at least 1"));
        }
        if let Some(c) = self.grad_clip {
            if c.is_nan() || c <= 0.0 {
                return Err(invalid(format!("grad_clip must be positive, got {c}")));
            }
        }
        self.schedule().map(|_| ())
    }

    /// Learning rate used at `step`.
    pub fn lr_at(&self, step: usize) -> f64 {
        if self.lr_decay && self.steps > 0 {
            let frac = step as f64 / self.steps as f64;
            self.lr * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
        } else {
            self.lr
        }
    }
}

/// Run configuration file: training fields plus an optional `model` object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(flatten)]
    pub train: TrainConfig,
    #[serde(default)]
    pub model: ModelConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.train.validate()?;
        cfg.model.validate()?;
        Ok(cfg)
    }
}

/// Piecewise-constant patch side over training steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchSchedule {
    stages: Vec<(usize, usize)>,
}

impl PatchSchedule {
    pub fn new(stages: Vec<(usize, usize)>) -> Result<Self> {
        let first = stages.first().ok_or_else(|| invalid("patch schedule is empty"))?;
        if first.0 != 0 {
            return Err(invalid(format!("patch schedule must start at step 0, starts at {}", first.0)));
        }
        for w in stages.windows(2) {
            if w[1].0 <= w[0].0 || w[1].1 < w[0].1 {
                return Err(invalid(format!(
                    "patch schedule stages {:?} -> {:?}: starts must increase and sides must not shrink",
                    w[0], w[1]
                )));
            }
        }
        if let Some(&(_, side)) = stages.iter().find(|(_, s)| *s == 0 || s % PATCH_MULTIPLE != 0) {
            return Err(invalid(format!("patch side {side} is not a positive multiple of {PATCH_MULTIPLE}")));
        }
        Ok(PatchSchedule { stages })
    }

    /// `[(0, 32), (40%, 48), (80%, 64)]` of `steps`.
    pub fn desk(steps: usize) -> Self {
        let mut stages = vec![(0, 32)];
        for (frac, side) in [(0.4, 48), (0.8, 64)] {
            let start = (steps as f64 * frac).round() as usize;
            if start > stages.last().unwrap().0 {
                stages.push((start, side));
            }
        }
        PatchSchedule { stages }
    }

    /// 128-pixel patches for the first half, then `full_side`.
    pub fn full_scale(steps: usize, full_side: usize) -> Result<Self> {
        let half = (steps / 2).max(1);
        Self::new(vec![(0, 128), (half, full_side)])
    }

    pub fn stages(&self) -> &[(usize, usize)] {
        &self.stages
    }

    /// Side of the last stage starting at or before `step`.
    pub fn lookup(&self, step: usize) -> usize {
        self.stages
            .iter()
            .take_while(|(start, _)| *start <= step)
            .last()
            .map(|&(_, s)| s)
            .unwrap_or(self.stages[0].1)
    }
}

/// The same `side x side` window of both images, uniform over valid offsets.
pub fn random_crop_pair<T: Element>(
    hazy: &Tensor<T>,
    clean: &Tensor<T>,
    side: usize,
    rng: &mut Rng,
) -> Result<(Tensor<T>, Tensor<T>)> {
    if hazy.shape() != clean.shape() {
        return Err(shape_err("random_crop_pair", format!("{} vs {}", hazy.shape(), clean.shape())));
    }
    let [n, c, h, w] = hazy.shape().0;
    if side == 0 || side > h || side > w {
        return Err(invalid(format!("crop side {side} does not fit a {h}x{w} image")));
    }
    let top = rng.gen_range(0..=h - side);
    let left = rng.gen_range(0..=w - side);
    let shape = Shape::new(n, c, side, side);
    let crop = |t: &Tensor<T>| Tensor::from_fn(shape, |[b, ch, y, x]| t.at([b, ch, top + y, left + x]));
    Ok((crop(hazy), crop(clean)))
}

/// First and second moments per parameter plus the update counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Element> {
    pub t: u64,
    pub m: ParamStore<T>,
    pub v: ParamStore<T>,
}

impl<T: Element> AdamState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros: ParamStore<T> = {
            let mut z = ParamStore::new();
            for (name, p) in params.iter() {
                z.insert(name, Tensor::zeros(p.shape()));
            }
            z
        };
        AdamState { t: 0, m: zeros.clone(), v: zeros }
    }
}

/// One bias-corrected Adam update with learning rate `lr`.
pub fn adam_step<T: Element>(
    params: &mut ParamStore<T>,
    grads: &[(String, Vec<T>)],
    state: &mut AdamState<T>,
    cfg: &TrainConfig,
    lr: f64,
) -> Result<()> {
    for (name, p) in params.iter() {
        let Some((_, g)) = grads.iter().find(|(n, _)| n == name) else {
            return Err(invalid(format!("missing gradient for parameter {name}")));
        };
        if g.len() != p.data().len() {
            return Err(shape_err("adam_step", format!("{name}: gradient has {} entries, parameter {}", g.len(), p.shape())));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for ((name, p), (_, g)) in params.iter_mut().zip(grads) {
        let m = state.m.get_mut(name).ok_or_else(|| invalid(format!("optimizer state lacks {name}")))?;
        let m = m.data_mut();
        let v = state.v.get_mut(name).ok_or_else(|| invalid(format!("optimizer state lacks {name}")))?;
        let v = v.data_mut();
        for (i, th) in p.data_mut().iter_mut().enumerate() {
            let gi = g[i].f64();
            let mi = b1 * m[i].f64() + (1.0 - b1) * gi;
            let vi = b2 * v[i].f64() + (1.0 - b2) * gi * gi;
            m[i] = T::c(mi);
            v[i] = T::c(vi);
            let update = lr * (mi / c1) / ((vi / c2).sqrt() + cfg.eps);
            *th = T::c(th.f64() - update);
        }
    }
    Ok(())
}

fn clip_grads<T: Element>(grads: &mut [(String, Vec<T>)], max_norm: f64) {
    let norm = grads
        .iter()
        .flat_map(|(_, g)| g.iter())
        .map(|v| v.f64() * v.f64())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = T::c(max_norm / norm);
        for (_, g) in grads {
            for v in g {
                *v *= s;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub loss: f64,
    pub patch_side: usize,
    pub psnr_holdout: Option<f64>,
}

impl LogRow {
    pub fn csv(&self) -> String {
        let h = self.psnr_holdout.map(format_db).unwrap_or_default();
        format!("{},{:?},{},{}", self.step, self.loss, self.patch_side, h)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Summary {
    pub steps: usize,
    pub final_loss: Option<f64>,
    /// Mean PSNR of the model over the training pairs.
    pub train_psnr: f64,
    pub holdout_psnr: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct StateMeta {
    step: usize,
    adam_t: u64,
}

/// Optimization state for one model over one dataset.
pub struct Trainer {
    pub model: ModelConfig,
    pub cfg: TrainConfig,
    pub params: ParamStore<f32>,
    pub adam: AdamState<f32>,
    /// Number of completed steps.
    pub step: usize,
    schedule: PatchSchedule,
    train_idx: Vec<usize>,
    holdout: Option<usize>,
}

impl Trainer {
    pub fn new(model: ModelConfig, cfg: TrainConfig, data: &Dataset<f32>) -> Result<Self> {
        let params = init_params(&model, cfg.seed)?;
        Self::with_params(model, cfg, data, params)
    }

    pub fn with_params(model: ModelConfig, cfg: TrainConfig, data: &Dataset<f32>, params: ParamStore<f32>) -> Result<Self> {
        model.validate()?;
        cfg.validate()?;
        params.check_against(&param_specs(&model))?;
        if data.pairs.is_empty() {
            return Err(invalid("training dataset is empty"));
        }
        let n = data.pairs.len();
        let holdout = (cfg.holdout && n >= 2).then_some(n - 1);
        let train_idx = (0..holdout.unwrap_or(n)).collect();
        Ok(Trainer {
            schedule: cfg.schedule()?,
            adam: AdamState::new(&params),
            model,
            cfg,
            params,
            step: 0,
            train_idx,
            holdout,
        })
    }

    /// Restores a run saved by [`Trainer::save`] (or written by [`Trainer::run`]).
    pub fn resume(dir: &Path, cfg: TrainConfig, data: &Dataset<f32>) -> Result<Self> {
        let model: ModelConfig = serde_json::from_str(&std::fs::read_to_string(dir.join(MODEL_CONFIG_FILE))?)?;
        let params = checkpoint::load(&dir.join(MODEL_FILE), &model)?;
        let meta: StateMeta = serde_json::from_str(&std::fs::read_to_string(dir.join(STATE_META_FILE))?)?;
        let state = checkpoint::decode(&std::fs::read(dir.join(STATE_FILE))?)?;
        let mut tr = Self::with_params(model, cfg, data, params)?;
        for (name, t) in state.iter() {
            let (store, key) = if let Some(k) = name.strip_prefix("adam.m/") {
                (&mut tr.adam.m, k)
            } else if let Some(k) = name.strip_prefix("adam.v/") {
                (&mut tr.adam.v, k)
            } else {
                return Err(Error::Format(format!("unexpected optimizer record {name}")));
            };
            let slot = store.get_mut(key).ok_or_else(|| Error::Format(format!("optimizer record for unknown {key}")))?;
            if slot.shape() != t.shape() {
                return Err(Error::Format(format!("optimizer record {name} has shape {}", t.shape())));
            }
            *slot = t.clone();
        }
        tr.adam.t = meta.adam_t;
        tr.step = meta.step;
        Ok(tr)
    }

    /// Writes the parameters, model configuration and optimizer state.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        checkpoint::save(&dir.join(MODEL_FILE), &self.params)?;
        std::fs::write(dir.join(MODEL_CONFIG_FILE), serde_json::to_string_pretty(&self.model)? + "\n")?;
        let mut state = ParamStore::new();
        for (name, t) in self.adam.m.iter() {
            state.insert(format!("adam.m/{name}"), t.clone());
        }
        for (name, t) in self.adam.v.iter() {
            state.insert(format!("adam.v/{name}"), t.clone());
        }
        std::fs::write(dir.join(STATE_FILE), checkpoint::encode(&state))?;
        let meta = StateMeta { step: self.step, adam_t: self.adam.t };
        std::fs::write(dir.join(STATE_META_FILE), serde_json::to_string_pretty(&meta)? + "\n")?;
        Ok(())
    }

    pub fn schedule(&self) -> &PatchSchedule {
        &self.schedule
    }

    pub fn holdout_index(&self) -> Option<usize> {
        self.holdout
    }

    pub fn train_indices(&self) -> &[usize] {
        &self.train_idx
    }

    /// Training pair drawn at sample position `k`: passes over the training
    /// set in an order reshuffled every epoch.
    fn sample_index(&self, k: usize) -> usize {
        let n = self.train_idx.len();
        let mut order = self.train_idx.clone();
        order.shuffle(&mut stream(self.cfg.seed ^ STREAM_EPOCH, (k / n) as u64));
        order[k % n]
    }

    /// The batch used at `step`: random crops of the next pairs in epoch order.
    pub fn batch(&self, data: &Dataset<f32>, step: usize) -> Result<(Tensor<f32>, Tensor<f32>, usize)> {
        let mut rng = stream(self.cfg.seed ^ STREAM_CROP, step as u64);
        let side = self.schedule.lookup(step);
        let mut hazy = Vec::with_capacity(self.cfg.batch);
        let mut clean = Vec::with_capacity(self.cfg.batch);
        let mut used = side;
        for j in 0..self.cfg.batch {
            let pair = &data.pairs[self.sample_index(step * self.cfg.batch + j)];
            let (h, w) = (pair.hazy.shape().h(), pair.hazy.shape().w());
            if side >= h.min(w) {
                used = h.min(w);
                hazy.push(pair.hazy.clone());
                clean.push(pair.clean.clone());
            } else {
                let (a, b) = random_crop_pair(&pair.hazy, &pair.clean, side, &mut rng)?;
                hazy.push(a);
                clean.push(b);
            }
        }
        Ok((Tensor::stack(&hazy)?, Tensor::stack(&clean)?, used))
    }

    /// Loss of the current parameters on a batch, with gradients.
    pub fn loss_and_grads(&self, hazy: &Tensor<f32>, clean: &Tensor<f32>) -> Result<(f64, NamedGrads)> {
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g);
        let x = g.input(hazy.clone());
        let y = model_forward(&mut g, x, &self.model, &bound)?;
        let t = g.input(clean.clone());
        let loss = g.l1_loss(y, t)?;
        let value = g.value(loss).item()?.f64();
        g.backward(loss)?;
        Ok((value, bound.grads(&g)?))
    }

    /// Runs one optimization step and returns its log row (without held-out PSNR).
    pub fn step_once(&mut self, data: &Dataset<f32>) -> Result<LogRow> {
        let step = self.step;
        let (hazy, clean, side) = self.batch(data, step)?;
        let (loss, mut grads) = self.loss_and_grads(&hazy, &clean).map_err(|e| match e {
            Error::NonFinite(what) => Error::NonFinite(format!("{what} at step {step}")),
            other => other,
        })?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("loss at step {step}")));
        }
        if let Some(c) = self.cfg.grad_clip {
            clip_grads(&mut grads, c);
        }
        adam_step(&mut self.params, &grads, &mut self.adam, &self.cfg, self.cfg.lr_at(step))?;
        self.step += 1;
        Ok(LogRow { step, loss, patch_side: side, psnr_holdout: None })
    }

    pub fn holdout_psnr(&self, data: &Dataset<f32>) -> Result<Option<f64>> {
        let Some(i) = self.holdout else { return Ok(None) };
        let pair = &data.pairs[i];
        let pred = predict(&self.model, &self.params, &pair.hazy)?;
        Ok(Some(psnr(&pred, &pair.clean, 1.0)?))
    }

    /// Mean PSNR over the training pairs.
    pub fn train_psnr(&self, data: &Dataset<f32>) -> Result<f64> {
        let mut total = 0.0;
        for &i in &self.train_idx {
            let pair = &data.pairs[i];
            let pred = predict(&self.model, &self.params, &pair.hazy)?;
            total += psnr(&pred, &pair.clean, 1.0)?;
        }
        Ok(total / self.train_idx.len() as f64)
    }

    /// Trains until `cfg.steps`. With `out`, writes the log, numbered
    /// checkpoints, the final model with its optimizer state, and a summary.
    pub fn run(&mut self, data: &Dataset<f32>, out: Option<&Path>, mut on_row: impl FnMut(&LogRow)) -> Result<(Vec<LogRow>, Summary)> {
        let mut log_file = match out {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                let path = dir.join(LOG_FILE);
                let mut f = if self.step == 0 {
                    std::fs::File::create(&path)?
                } else {
                    OpenOptions::new().append(true).create(true).open(&path)?
                };
                if self.step == 0 {
                    writeln!(f, "{LOG_HEADER}")?;
                }
                if self.step == 0 && self.cfg.checkpoint_every > 0 {
                    checkpoint::save(&dir.join(format!("ckpt_{:06}.ckpt", 0)), &self.params)?;
                }
                Some(f)
            }
            None => None,
        };
        let mut rows = Vec::new();
        while self.step < self.cfg.steps {
            let mut row = self.step_once(data)?;
            let done = self.step;
            let eval = done == self.cfg.steps || (self.cfg.eval_every > 0 && done.is_multiple_of(self.cfg.eval_every));
            if eval {
                row.psnr_holdout = self.holdout_psnr(data)?;
            }
            if let Some(f) = log_file.as_mut() {
                writeln!(f, "{}", row.csv())?;
            }
            if let (Some(dir), true) = (out, self.cfg.checkpoint_every > 0 && done.is_multiple_of(self.cfg.checkpoint_every)) {
                checkpoint::save(&dir.join(format!("ckpt_{done:06}.ckpt")), &self.params)?;
            }
            on_row(&row);
            rows.push(row);
        }
        let summary = Summary {
            steps: self.step,
            final_loss: rows.last().map(|r| r.loss),
            train_psnr: self.train_psnr(data)?,
            holdout_psnr: self.holdout_psnr(data)?,
        };
        if let Some(dir) = out {
            self.save(dir)?;
            let text = serde_json::to_value(&summary)?;
            std::fs::write(dir.join(SUMMARY_FILE), serde_json::to_string_pretty(&text)? + "\n")?;
        }
        Ok((rows, summary))
    }
}

/// Median of each consecutive `window`-step block of losses.
pub fn window_medians(losses: &[f64], window: usize) -> Vec<f64> {
    losses
        .chunks(window.max(1))
        .filter(|c| c.len() == window)
        .map(|c| {
            let mut v = c.to_vec();
            v.sort_by(f64::total_cmp);
            let k = v.len();
            if k % 2 == 1 {
                v[k / 2]
            } else {
                0.5 * (v[k / 2 - 1] + v[k / 2])
            }
        })
        .collect()
}
