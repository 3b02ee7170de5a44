//! Overfits the tiny model to eight synthetic 64x64 pairs.
//!
//! ```bash
//! cargo run --release -p igdehaze --example train_tiny -- [steps]
//! ```

use std::time::Instant;

use igdehaze::haze::{synth_dataset, CleanSource, SynthConfig};
use igdehaze::training::{window_medians, TrainConfig, Trainer};
use igdehaze::ModelConfig;

fn main() -> anyhow::Result<()> {
    let steps = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(500);
    let synth = SynthConfig { n: 8, height: 64, width: 64, ..Default::default() };
    let data = synth_dataset::<f32>(&CleanSource::Procedural, &synth)?;
    let cfg = TrainConfig { steps, holdout: false, patch_schedule: Some(vec![(0, 64)]), ..Default::default() };

    let mut trainer = Trainer::new(ModelConfig::tiny(), cfg, &data)?;
    println!("initial training PSNR {:.2} dB", trainer.train_psnr(&data)?);
    let start = Instant::now();
    let (rows, summary) = trainer.run(&data, None, |r| {
        if r.step % 50 == 0 {
            println!("step {:4}  loss {:.5}  patch {}", r.step, r.loss, r.patch_side);
        }
    })?;
    let losses: Vec<f64> = rows.iter().map(|r| r.loss).collect();
    println!("50-step loss medians {:?}", window_medians(&losses, 50));
    println!("final training PSNR {:.2} dB after {} steps in {:?}", summary.train_psnr, summary.steps, start.elapsed());
    Ok(())
}
