//! Central finite-difference gradient checks.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheck {
    /// `||analytic - numeric|| / max(||analytic||, ||numeric||)` per input.
    pub rel_errors: Vec<f64>,
}

impl GradCheck {
    pub fn max_rel_error(&self) -> f64 {
        self.rel_errors.iter().cloned().fold(0.0, f64::max)
    }
}

fn relative_error(a: &[f64], n: &[f64]) -> f64 {
    let diff = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(n.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Fixed weights that turn a tensor output into a scalar without symmetry.
fn probe(shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |i| ((i as f64 + 1.0) * 0.7071).sin() + 0.1)
}

fn scalarize(g: &mut Graph<f64>, out: Var) -> Result<Var> {
    if g.value(out).len() == 1 {
        return Ok(out);
    }
    let w = probe(g.shape(out));
    let weighted = g.mul_const(out, &w)?;
    Ok(g.sum(weighted))
}

fn evaluate<F>(inputs: &[Tensor<f64>], f: &F) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::with_parallel(false);
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let s = scalarize(&mut g, out)?;
    Ok(g.item(s))
}

/// Compares reverse-mode gradients of `f` against central differences with step `eps`.
/// Non-scalar outputs are reduced with fixed pseudo-random weights.
pub fn gradcheck<F>(inputs: &[Tensor<f64>], f: F, eps: f64) -> Result<GradCheck>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::with_parallel(false);
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let s = scalarize(&mut g, out)?;
    g.backward(s)?;
    let mut rel_errors = Vec::with_capacity(inputs.len());
    for (k, &v) in vars.iter().enumerate() {
        let analytic = g.grad(v).map(|a| a.to_vec()).unwrap_or_else(|| vec![0.0; inputs[k].len()]);
        let mut numeric = vec![0.0; inputs[k].len()];
        let mut probe_inputs = inputs.to_vec();
        for j in 0..inputs[k].len() {
            let x0 = inputs[k].data()[j];
            probe_inputs[k].data_mut()[j] = x0 + eps;
            let up = evaluate(&probe_inputs, &f)?;
            probe_inputs[k].data_mut()[j] = x0 - eps;
            let down = evaluate(&probe_inputs, &f)?;
            probe_inputs[k].data_mut()[j] = x0;
            numeric[j] = (up - down) / (2.0 * eps);
        }
        rel_errors.push(relative_error(&analytic, &numeric));
    }
    Ok(GradCheck { rel_errors })
}
