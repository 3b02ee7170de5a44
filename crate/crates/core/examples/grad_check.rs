//! Finite-difference audit of the gradients of several building blocks.
//!
//! ```bash
//! cargo run --release -p igdehaze --example grad_check
//! ```

use igdehaze::autograd::{grad_check, ConvSpec, PadMode, DEFAULT_EPS};
use igdehaze::rng::stream;
use igdehaze::{Graph, Result, Shape, Tensor, Var};
use rand::Rng as _;

fn random(shape: Shape, seed: u64) -> Tensor<f64> {
    let mut rng = stream(seed, 0);
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

type Block = fn(&mut Graph<f64>, &[Var]) -> Result<Var>;

fn main() -> anyhow::Result<()> {
    let x = random(Shape::new(2, 3, 6, 6), 1);
    let w = random(Shape::new(4, 3, 3, 3), 2);
    let b = random(Shape::vector(4), 3);
    let cases: [(&str, Block, Vec<Tensor<f64>>); 4] = [
        (
            "conv2d reflect",
            |g, v| {
                let y = g.conv2d(v[0], v[1], Some(v[2]), ConvSpec { stride: 1, padding: 1, mode: PadMode::Reflect })?;
                let y = g.mul(y, y)?;
                g.mean(y)
            },
            vec![x.clone(), w, b],
        ),
        (
            "softmax",
            |g, v| {
                let y = g.softmax(v[0], 3)?;
                let y = g.mul(y, v[0])?;
                g.sum(y)
            },
            vec![x.clone()],
        ),
        (
            "sigmoid",
            |g, v| {
                let y = g.sigmoid(v[0])?;
                g.sum(y)
            },
            vec![x.clone()],
        ),
        (
            "gelu",
            |g, v| {
                let y = g.gelu(v[0])?;
                g.sum(y)
            },
            vec![x],
        ),
    ];
    for (name, f, inputs) in cases {
        let err = grad_check(f, &inputs, DEFAULT_EPS)?;
        println!("{name:<16} max relative error {err:.2e}");
    }
    Ok(())
}
