//! Central finite-difference checking of graph gradients in 64-bit.

use super::{Graph, Var};
use crate::error::Result;

pub const FD_STEP: f64 = 1e-5;

/// `‖a − b‖ / (‖a‖ + ‖b‖)`, zero when both are zero.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt() + b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Central differences of `f` at `x`.
pub fn numeric_gradient(mut f: impl FnMut(&[f64]) -> Result<f64>, x: &[f64], h: f64) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = f(&probe)?;
        probe[i] = orig - h;
        let down = f(&probe)?;
        probe[i] = orig;
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// Checks `build` (a function of variable inputs) by contracting its output
/// with fixed weights `proj`. Returns one relative error per input.
pub fn check_op<F>(build: F, inputs: &[(Vec<usize>, Vec<f64>)], proj: &[f64]) -> Result<Vec<f64>>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Vec<f64>]| -> Result<(Graph<f64>, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars = inputs
            .iter()
            .zip(vals)
            .map(|((shape, _), v)| g.variable(shape, v.clone()))
            .collect::<Result<Vec<_>>>()?;
        let y = build(&mut g, &vars)?;
        Ok((g, vars, y))
    };
    let base: Vec<Vec<f64>> = inputs.iter().map(|(_, v)| v.clone()).collect();
    let (g, vars, y) = eval(&base)?;
    let seed = proj[..g.value(y).len()].to_vec();
    let grads = g.backward_seeded(&[(y, seed.clone())])?;

    let mut errs = Vec::with_capacity(inputs.len());
    for (k, &var) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(&g, var);
        let numeric = numeric_gradient(
            |x| {
                let mut vals = base.clone();
                vals[k] = x.to_vec();
                let (g, _, y) = eval(&vals)?;
                Ok(g.value(y).iter().zip(&seed).map(|(a, b)| a * b).sum())
            },
            &base[k],
            FD_STEP,
        )?;
        errs.push(relative_error(&analytic, &numeric));
    }
    Ok(errs)
}
