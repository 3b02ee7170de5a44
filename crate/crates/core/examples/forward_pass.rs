//! Runs the tiny model on a synthetic hazy image and reports its size and cost.
//!
//! ```bash
//! cargo run --release -p igdehaze --example forward_pass
//! ```

use std::time::Instant;

use igdehaze::autograd::Graph;
use igdehaze::haze::{synth_dataset, CleanSource, SynthConfig};
use igdehaze::network::{count_params_macs, init_params, model_forward};
use igdehaze::ModelConfig;

fn main() -> anyhow::Result<()> {
    let cfg = ModelConfig::tiny();
    let synth = SynthConfig { n: 1, height: 64, width: 64, ..Default::default() };
    let data = synth_dataset::<f32>(&CleanSource::Procedural, &synth)?;
    let params = init_params::<f32>(&cfg, 0)?;

    let start = Instant::now();
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let x = g.input(data.pairs[0].hazy.clone());
    let y = model_forward(&mut g, x, &cfg, &bound)?;
    let elapsed = start.elapsed();

    let (n_params, macs) = count_params_macs(&cfg, 64, 64);
    println!("output shape      {}", g.shape(y));
    println!("graph nodes       {}", g.len());
    println!("parameters        {n_params} ({} tensors)", params.len());
    println!("MACs (analytic)   {macs}");
    println!("MACs (recorded)   {}", g.macs());
    println!("forward time      {elapsed:?}");
    let identical = g.value(y) == &data.pairs[0].hazy;
    println!("output == input   {identical} (zero-initialized head)");

    let small = ModelConfig::small();
    let (p, m) = count_params_macs(&small, 256, 256);
    println!("small config at 256x256: {p} parameters, {:.3} GMACs", m as f64 / 1e9);
    Ok(())
}
