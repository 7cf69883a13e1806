//! Central finite-difference oracle for graph gradients (64-bit).
//!
//! The builder's output is projected onto fixed pseudo-random weights so any
//! output shape reduces to a scalar; the analytic gradient from
//! [`Graph::backward`] is then compared element by element with
//! `(f(x + h) - f(x - h)) / 2h`, which only ever evaluates the forward pass.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::param::ParamStore;
use crate::tensor::Tensor;

pub const STEP: f64 = 1e-5;
/// Relative errors are measured against `max(|analytic|, |numeric|, FLOOR)`.
pub const FLOOR: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub elements_checked: usize,
}

fn splitmix(state: &mut u64) -> f64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

fn projected<F>(inputs: &[Tensor<f64>], seed: u64, build: &F) -> Result<(Graph<f64>, Vec<Var>, Var)>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input_with_grad(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    let mut state = seed;
    let shape = g.value(out).shape().to_vec();
    let weights = Tensor::from_fn(&shape, |_| splitmix(&mut state));
    let loss = g.dot(out, weights)?;
    Ok((g, vars, loss))
}

pub fn check_gradients<F>(inputs: &[Tensor<f64>], seed: u64, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let (g, vars, loss) = projected(inputs, seed, &build)?;
    let grads = g.backward(loss, &mut ParamStore::new())?;
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[i]).cloned().unwrap_or_else(|| Tensor::zeros(input.shape()));
        for j in 0..input.len() {
            let eval = |delta: f64| -> Result<f64> {
                let mut shifted = inputs.to_vec();
                shifted[i].data_mut()[j] += delta;
                let (g, _, loss) = projected(&shifted, seed, &build)?;
                Ok(g.value(loss).item())
            };
            let numeric = (eval(STEP)? - eval(-STEP)?) / (2.0 * STEP);
            let a = analytic.data()[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    Ok(GradCheckReport { max_relative_error: worst, elements_checked: checked })
}
