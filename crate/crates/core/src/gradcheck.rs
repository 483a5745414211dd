//! Central finite-difference comparison for tape gradients.

use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// Outcome of one check; `rel_error` is `|g_tape - g_fd| / max(|g_tape|, |g_fd|, floor)`
/// over the concatenation of all input gradients.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub rel_error: f64,
    pub analytic: Vec<Vec<f64>>,
    pub numeric: Vec<Vec<f64>>,
}

/// Differentiates `build` w.r.t. every input, analytically and by central
/// differences with step `h`.
pub fn check<F>(inputs: &[Tensor<f64>], h: f64, build: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.constant(t.clone())).collect();
        let out = build(&mut g, &vars)?;
        Ok(g.value(out).item())
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let loss = build(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> =
        vars.iter().zip(inputs).map(|(&v, t)| g.grad(v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec)).collect();

    let mut numeric = Vec::with_capacity(inputs.len());
    let mut work = inputs.to_vec();
    for k in 0..inputs.len() {
        let mut col = vec![0.0; inputs[k].len()];
        for (i, slot) in col.iter_mut().enumerate() {
            let orig = work[k].data()[i];
            work[k].data_mut()[i] = orig + h;
            let up = eval(&work)?;
            work[k].data_mut()[i] = orig - h;
            let down = eval(&work)?;
            work[k].data_mut()[i] = orig;
            *slot = (up - down) / (2.0 * h);
        }
        numeric.push(col);
    }
    let norm = |v: &[Vec<f64>]| v.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = analytic.iter().flatten().zip(numeric.iter().flatten()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale = norm(&analytic).max(norm(&numeric)).max(1e-8);
    Ok(GradCheck { rel_error: diff / scale, analytic, numeric })
}
