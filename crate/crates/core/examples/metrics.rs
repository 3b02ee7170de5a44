//! Scores a noisy copy of a synthetic image at increasing noise levels.
//!
//! ```bash
//! cargo run --release -p igdehaze --example metrics
//! ```

use igdehaze::haze::procedural_clean;
use igdehaze::metrics::{format_db, MetricReport};
use igdehaze::rng::stream;
use igdehaze::Tensor;
use rand::Rng as _;

fn main() -> anyhow::Result<()> {
    let mut rng = stream(4, 0);
    let clean: Tensor<f64> = procedural_clean(2, 64, 64, &mut rng);
    println!("{:>6} {:>9} {:>7} {:>8}", "noise", "psnr", "ssim", "entropy");
    for amp in [0.0, 0.01, 0.03, 0.1, 0.3] {
        let noisy = Tensor::from_fn(clean.shape(), |i| (clean.at(i) + rng.gen_range(-amp..=amp)).clamp(0.0, 1.0));
        let r = MetricReport::compute(&noisy, &clean)?;
        println!("{amp:>6.2} {:>9} {:>7.4} {:>8.4}", format_db(r.psnr), r.ssim, r.entropy);
    }
    Ok(())
}
