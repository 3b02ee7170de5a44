//! Command-line front end: `synth`, `train`, `infer`, `eval` and `ablate`.
//!
//! Every command checks its arguments and inputs before writing anything.
//! Exit codes: 0 success, 1 usage error, 2 runtime failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context as _;
use clap::{Args, Parser, Subcommand};

use crate::haze::{load_dataset, read_manifest, synth_dataset, write_dataset, CleanSource, DepthChoice, SynthConfig};
use crate::imageio::{read_png, write_png};
use crate::metrics::MetricReport;
use crate::network::{checkpoint, predict, ModelConfig, Variant};
use crate::tensor::Tensor;
use crate::training::{RunConfig, Trainer, MODEL_CONFIG_FILE};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

pub const EVAL_HEADER: &str = "image,psnr,ssim,entropy";
pub const ABLATION_HEADER: &str = "name,downs,fa,cpa,psnr,ssim,paper_psnr,paper_ssim";
pub const ABLATION_FILE: &str = "ablation.csv";

#[derive(Debug, Parser)]
#[command(name = "igdehaze", version, about = "Two-branch image dehazing: synthesize, train, infer, evaluate, ablate")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize hazy/clean pairs with the atmospheric scattering model.
    Synth(SynthArgs),
    /// Train a model on a dataset directory.
    Train(TrainArgs),
    /// Dehaze one PNG, or every PNG in a directory.
    Infer(InferArgs),
    /// Score predictions against the clean images of a dataset.
    Eval(EvalArgs),
    /// Train the five ablation variants and report their scores.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Haze density range `LO:HI`.
    #[arg(long, default_value = "0.3:1.0", value_parser = parse_range)]
    pub beta: (f64, f64),
    /// Atmospheric light range `LO:HI`.
    #[arg(long, default_value = "0.7:1.0", value_parser = parse_range)]
    pub airlight: (f64, f64),
    /// `linear-ramp`, `radial`, `perlin-like` or `mixed`.
    #[arg(long, default_value = "mixed")]
    pub depth: DepthChoice,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    /// Directory of clean PNGs to use instead of procedural scenes.
    #[arg(long)]
    pub clean: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from the model and optimizer state saved in `--out`.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Model configuration JSON; defaults to `model.json` beside the checkpoint.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Dataset directory holding the clean references.
    #[arg(long)]
    pub pairs: PathBuf,
    /// Directory of predictions named like the dataset's hazy images.
    #[arg(long)]
    pub pred: PathBuf,
    /// Also write the CSV to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn runtime(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Runtime(e.into())
}

/// Parses `LO:HI`.
pub fn parse_range(s: &str) -> std::result::Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(':').ok_or_else(|| format!("expected LO:HI, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
    let (lo, hi) = (parse(lo)?, parse(hi)?);
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(format!("range {s:?} must be finite with LO <= HI"));
    }
    Ok((lo, hi))
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Errors are reported on stderr.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            match &e {
                CliError::Usage(msg) => eprintln!("error: {msg}"),
                CliError::Runtime(err) => eprintln!("error: {err:#}"),
            }
            e.exit_code()
        }
    }
}

pub fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Infer(a) => cmd_infer(&a),
        Command::Eval(a) => cmd_eval(&a).map(|csv| print!("{csv}")),
        Command::Ablate(a) => cmd_ablate(&a).map(|csv| print!("{csv}")),
    }
}

fn png_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| usage(format!("{}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    Ok(files)
}

pub fn cmd_synth(a: &SynthArgs) -> CliResult<()> {
    let cfg = SynthConfig {
        n: a.n,
        height: a.height,
        width: a.width,
        depth: a.depth,
        beta_range: a.beta,
        airlight_range: a.airlight,
        seed: a.seed,
    };
    cfg.validate().map_err(usage)?;
    let source = match &a.clean {
        None => CleanSource::Procedural,
        Some(dir) => {
            let files = png_files(dir)?;
            if files.is_empty() {
                return Err(usage(format!("{}: no PNG files", dir.display())));
            }
            let imgs = files
                .iter()
                .map(|p| read_png::<f32>(p).with_context(|| p.display().to_string()))
                .collect::<anyhow::Result<Vec<_>>>()
                .map_err(|e| usage(format!("{e:#}")))?;
            CleanSource::Images(imgs)
        }
    };
    let ds = synth_dataset(&source, &cfg).map_err(usage)?;
    write_dataset(&a.out, &ds).map_err(runtime)?;
    println!("wrote {} pairs to {}", ds.pairs.len(), a.out.display());
    Ok(())
}

fn read_run_config(path: &Path) -> CliResult<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    RunConfig::from_json(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn read_dataset(dir: &Path) -> CliResult<crate::haze::Dataset<f32>> {
    load_dataset(dir).map_err(|e| usage(format!("dataset {}: {e}", dir.display())))
}

pub fn cmd_train(a: &TrainArgs) -> CliResult<()> {
    let run = read_run_config(&a.config)?;
    let data = read_dataset(&a.data)?;
    let mut trainer = if a.resume {
        Trainer::resume(&a.out, run.train.clone(), &data).map_err(|e| usage(format!("cannot resume from {}: {e}", a.out.display())))?
    } else {
        Trainer::new(run.model.clone(), run.train.clone(), &data).map_err(usage)?
    };
    let every = run.train.eval_every.max(1);
    let (_, summary) = trainer
        .run(&data, Some(&a.out), |r| {
            if (r.step + 1) % every == 0 {
                let h = r.psnr_holdout.map(|p| format!("  holdout {p:.2} dB")).unwrap_or_default();
                println!("step {:6}  loss {:.5}  patch {}{h}", r.step, r.loss, r.patch_side);
            }
        })
        .map_err(runtime)?;
    println!("training PSNR {:.2} dB after {} steps", summary.train_psnr, summary.steps);
    if let Some(h) = summary.holdout_psnr {
        println!("holdout PSNR {h:.2} dB");
    }
    Ok(())
}

fn read_model_config(path: &Path) -> CliResult<ModelConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let cfg: ModelConfig = serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

pub fn cmd_infer(a: &InferArgs) -> CliResult<()> {
    let model_path = match &a.model {
        Some(p) => p.clone(),
        None => a.ckpt.parent().unwrap_or(Path::new(".")).join(MODEL_CONFIG_FILE),
    };
    let cfg = read_model_config(&model_path)?;
    let params = checkpoint::load(&a.ckpt, &cfg).map_err(|e| usage(format!("{}: {e}", a.ckpt.display())))?;
    let jobs: Vec<(PathBuf, PathBuf)> = if a.input.is_dir() {
        png_files(&a.input)?
            .into_iter()
            .map(|p| {
                let out = a.out.join(p.file_name().unwrap_or_default());
                (p, out)
            })
            .collect()
    } else {
        vec![(a.input.clone(), a.out.clone())]
    };
    let mut inputs = Vec::with_capacity(jobs.len());
    for (src, _) in &jobs {
        let img: Tensor<f32> = read_png(src).map_err(|e| usage(format!("{}: {e}", src.display())))?;
        inputs.push(img);
    }
    if a.input.is_dir() {
        std::fs::create_dir_all(&a.out).map_err(runtime)?;
    }
    for ((_, dst), img) in jobs.iter().zip(&inputs) {
        let pred = predict(&cfg, &params, img).map_err(runtime)?;
        write_png(dst, &pred).map_err(runtime)?;
    }
    println!("wrote {} image(s)", jobs.len());
    Ok(())
}

/// Full-precision decimal; `inf` for identical images.
fn fmt_value(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v}")
    }
}

fn metric_row(name: &str, r: &MetricReport) -> String {
    format!("{name},{},{},{}\n", fmt_value(r.psnr), fmt_value(r.ssim), fmt_value(r.entropy))
}

/// Returns the CSV: one row per pair and a final `mean` row.
pub fn cmd_eval(a: &EvalArgs) -> CliResult<String> {
    let manifest = read_manifest(&a.pairs).map_err(|e| usage(format!("dataset {}: {e}", a.pairs.display())))?;
    if manifest.pairs.is_empty() {
        return Err(usage(format!("{}: manifest lists no pairs", a.pairs.display())));
    }
    let mut csv = format!("{EVAL_HEADER}\n");
    let mut rows = Vec::with_capacity(manifest.pairs.len());
    let mut loaded = Vec::with_capacity(manifest.pairs.len());
    for e in &manifest.pairs {
        let pred_path = a.pred.join(&e.hazy);
        let pred: Tensor<f64> = read_png(&pred_path).map_err(|err| usage(format!("{}: {err}", pred_path.display())))?;
        let clean_path = a.pairs.join(&e.clean);
        let clean: Tensor<f64> = read_png(&clean_path).map_err(|err| usage(format!("{}: {err}", clean_path.display())))?;
        loaded.push((e.hazy.clone(), pred, clean));
    }
    for (name, pred, clean) in &loaded {
        let r = MetricReport::compute(pred, clean).map_err(|err| usage(format!("{name}: {err}")))?;
        csv.push_str(&metric_row(name, &r));
        rows.push(r);
    }
    let mean = MetricReport::mean(&rows).expect("at least one row");
    csv.push_str(&metric_row("mean", &mean));
    if let Some(path) = &a.out {
        std::fs::write(path, &csv).map_err(runtime)?;
    }
    Ok(csv)
}

/// Directory name of a variant's run, e.g. `base_downs_fa`.
pub fn variant_slug(v: Variant) -> String {
    v.name().to_lowercase().replace('+', "_")
}

/// Trains every variant and returns the ablation CSV (also written to
/// `out/ablation.csv`). A run that fails is reported as `failed`.
pub fn cmd_ablate(a: &AblateArgs) -> CliResult<String> {
    let run = read_run_config(&a.config)?;
    let data = read_dataset(&a.data)?;
    for v in Variant::ALL {
        Trainer::new(run.model.clone().with_variant(v), run.train.clone(), &data).map_err(usage)?;
    }
    std::fs::create_dir_all(&a.out).map_err(runtime)?;
    let mut csv = format!("{ABLATION_HEADER}\n");
    for v in Variant::ALL {
        let model = run.model.clone().with_variant(v);
        let dir = a.out.join(variant_slug(v));
        let result = (|| -> anyhow::Result<MetricReport> {
            let mut tr = Trainer::new(model.clone(), run.train.clone(), &data)?;
            tr.run(&data, Some(&dir), |_| {})?;
            let mut reports = Vec::new();
            for &i in tr.train_indices() {
                let pair = &data.pairs[i];
                let pred = predict(&model, &tr.params, &pair.hazy)?;
                reports.push(MetricReport::compute(&pred, &pair.clean)?);
            }
            Ok(MetricReport::mean(&reports).expect("training set is non-empty"))
        })();
        let (downs, fa, cpa) = v.flags();
        let (pp, ps) = v.reference();
        let scores = match result {
            Ok(r) => format!("{:.4},{:.4}", r.psnr, r.ssim),
            Err(e) => {
                eprintln!("warning: {} failed: {e:#}", v.name());
                "failed,failed".to_string()
            }
        };
        let _ = writeln!(csv, "{},{downs},{fa},{cpa},{scores},{pp:.2},{ps:.4}", v.name());
    }
    std::fs::write(a.out.join(ABLATION_FILE), &csv).map_err(runtime)?;
    Ok(csv)
}
