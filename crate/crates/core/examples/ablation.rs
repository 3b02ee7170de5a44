//! Trains the five ablation variants briefly on the same data and compares them.
//!
//! ```bash
//! cargo run --release -p igdehaze --example ablation -- [steps]
//! ```

use igdehaze::haze::{synth_dataset, CleanSource, SynthConfig};
use igdehaze::network::count_params_macs;
use igdehaze::training::{TrainConfig, Trainer};
use igdehaze::{ModelConfig, Variant};

fn main() -> anyhow::Result<()> {
    let steps = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(100);
    let data = synth_dataset::<f32>(&CleanSource::Procedural, &SynthConfig { n: 8, ..Default::default() })?;
    let cfg = TrainConfig { steps, holdout: false, patch_schedule: Some(vec![(0, 64)]), ..Default::default() };
    println!("{:<15} {:>8} {:>12} {:>9} {:>10}", "variant", "params", "MACs@64", "PSNR", "reference");
    for v in Variant::ALL {
        let model = ModelConfig::tiny().with_variant(v);
        let (params, macs) = count_params_macs(&model, 64, 64);
        let mut tr = Trainer::new(model, cfg.clone(), &data)?;
        let (_, summary) = tr.run(&data, None, |_| {})?;
        let (rp, rs) = v.reference();
        println!("{:<15} {params:>8} {macs:>12} {:>6.2} dB {rp:>5.2}/{rs:.4}", v.name(), summary.train_psnr);
    }
    Ok(())
}
