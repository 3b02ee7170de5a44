//! Central finite-difference verification of recorded gradients.

use crate::error::{invalid, shape_err, Result};
use crate::tensor::Tensor;

use super::graph::{Graph, Var};

pub const DEFAULT_EPS: f64 = 1e-5;

/// Builds a scalar-valued computation from the given leaves.
pub trait Recorded: Fn(&mut Graph<f64>, &[Var]) -> Result<Var> {}
impl<F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>> Recorded for F {}

fn eval<F: Recorded>(f: &F, inputs: &[Tensor<f64>]) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.value(out).item()
}

/// Analytic gradients of `f` at `inputs`.
pub fn analytic_grads<F: Recorded>(f: &F, inputs: &[Tensor<f64>]) -> Result<Vec<Vec<f64>>> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let s = g.shape(out);
    if !s.is_scalar() {
        return Err(shape_err("grad_check", format!("function must return a scalar, got {s}")));
    }
    g.backward(out)?;
    Ok(vars.iter().map(|&v| g.grad(v).unwrap().to_vec()).collect())
}

/// Central-difference estimate of `d f / d inputs[k][i]` for every entry.
pub fn numeric_grads<F: Recorded>(f: &F, inputs: &[Tensor<f64>], eps: f64) -> Result<Vec<Vec<f64>>> {
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut grads = Vec::with_capacity(inputs.len());
    for k in 0..inputs.len() {
        let mut gk = Vec::with_capacity(inputs[k].data().len());
        for i in 0..inputs[k].data().len() {
            let orig = inputs[k].data()[i];
            work[k].data_mut()[i] = orig + eps;
            let up = eval(f, &work)?;
            work[k].data_mut()[i] = orig - eps;
            let down = eval(f, &work)?;
            work[k].data_mut()[i] = orig;
            gk.push((up - down) / (2.0 * eps));
        }
        grads.push(gk);
    }
    Ok(grads)
}

/// Max over all input entries of `|analytic - numeric| / max(1, |analytic|)`.
pub fn grad_check<F: Recorded>(f: F, inputs: &[Tensor<f64>], eps: f64) -> Result<f64> {
    if eps <= 0.0 {
        return Err(invalid("grad_check: eps must be positive"));
    }
    let analytic = analytic_grads(&f, inputs)?;
    let numeric = numeric_grads(&f, inputs, eps)?;
    let mut worst = 0.0f64;
    for (a, n) in analytic.iter().zip(&numeric) {
        for (&x, &y) in a.iter().zip(n) {
            worst = worst.max((x - y).abs() / x.abs().max(1.0));
        }
    }
    Ok(worst)
}

/// Like [`grad_check`], but compares only the entries listed per input in
/// `picks` (`picks[k]` indexes `inputs[k]`).
pub fn grad_check_entries<F: Recorded>(f: F, inputs: &[Tensor<f64>], picks: &[Vec<usize>], eps: f64) -> Result<f64> {
    if eps <= 0.0 {
        return Err(invalid("grad_check: eps must be positive"));
    }
    if picks.len() != inputs.len() {
        return Err(invalid(format!("grad_check: {} pick lists for {} inputs", picks.len(), inputs.len())));
    }
    let analytic = analytic_grads(&f, inputs)?;
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut worst = 0.0f64;
    for (k, pick) in picks.iter().enumerate() {
        for &i in pick {
            let orig = *inputs[k]
                .data()
                .get(i)
                .ok_or_else(|| invalid(format!("grad_check: entry {i} outside input {k}")))?;
            work[k].data_mut()[i] = orig + eps;
            let up = eval(&f, &work)?;
            work[k].data_mut()[i] = orig - eps;
            let down = eval(&f, &work)?;
            work[k].data_mut()[i] = orig;
            let (a, n) = (analytic[k][i], (up - down) / (2.0 * eps));
            worst = worst.max((a - n).abs() / a.abs().max(1.0));
        }
    }
    Ok(worst)
}
