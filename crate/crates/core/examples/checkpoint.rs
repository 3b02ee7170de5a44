//! Saves and reloads model parameters and checks the outputs agree bitwise.
//!
//! ```bash
//! cargo run --release -p igdehaze --example checkpoint
//! ```

use igdehaze::haze::{synth_dataset, CleanSource, SynthConfig};
use igdehaze::network::{checkpoint, init_params, predict};
use igdehaze::ModelConfig;

fn main() -> anyhow::Result<()> {
    let cfg = ModelConfig::tiny();
    let mut params = init_params::<f32>(&cfg, 11)?;
    for (_, t) in params.iter_mut() {
        for (i, v) in t.data_mut().iter_mut().enumerate() {
            *v += 0.01 * ((i % 7) as f32 - 3.0);
        }
    }
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("model.ckpt");
    checkpoint::save(&path, &params)?;
    let bytes = std::fs::metadata(&path)?.len();
    let loaded = checkpoint::load(&path, &cfg)?;

    let data = synth_dataset::<f32>(&CleanSource::Procedural, &SynthConfig { n: 1, ..Default::default() })?;
    let a = predict(&cfg, &params, &data.pairs[0].hazy)?;
    let b = predict(&cfg, &loaded, &data.pairs[0].hazy)?;
    println!("{} tensors, {} values, {bytes} bytes", loaded.len(), loaded.numel());
    println!("parameters identical: {}", loaded == params);
    println!("outputs identical:    {}", a == b);

    let other = ModelConfig::tiny().with_variant(igdehaze::Variant::Base);
    match checkpoint::load(&path, &other) {
        Ok(_) => println!("unexpected: loaded into a different configuration"),
        Err(e) => println!("loading into Base is refused: {e}"),
    }
    Ok(())
}
