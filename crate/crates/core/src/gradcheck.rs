//! Central finite differences against the tape's analytic gradients.

use crate::error::Result;
use crate::tensor::{Tape, Tensor, Var};

pub const FD_STEP: f64 = 1e-5;

/// Magnitude below which errors are measured absolutely rather than
/// relative to the gradient.
pub const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(REL_FLOOR);
    (analytic - numeric).abs() / scale
}

/// Analytic gradient of a scalar function of several tensors.
pub fn analytic_gradients<F>(inputs: &[Tensor], f: F) -> Result<(f64, Vec<Tensor>)>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&tape, &vars)?;
    let value = loss.item().unwrap_or(f64::NAN);
    let grads = tape.backward(loss)?;
    let out = vars
        .iter()
        .map(|v| grads.wrt(*v).cloned().expect("leaf gradient"))
        .collect();
    Ok((value, out))
}

/// Central differences of `f` with respect to every entry of every input.
pub fn numeric_gradients<F>(inputs: &[Tensor], step: f64, f: F) -> Result<Vec<Tensor>>
where
    F: Fn(&[Tensor]) -> Result<f64>,
{
    let mut work = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for t in 0..inputs.len() {
        let mut g = Tensor::zeros(inputs[t].shape());
        for i in 0..inputs[t].numel() {
            let orig = work[t].data()[i];
            work[t].data_mut()[i] = orig + step;
            let plus = f(&work)?;
            work[t].data_mut()[i] = orig - step;
            let minus = f(&work)?;
            work[t].data_mut()[i] = orig;
            g.data_mut()[i] = (plus - minus) / (2.0 * step);
        }
        out.push(g);
    }
    Ok(out)
}

/// Worst relative error per input between analytic and numeric gradients
/// of a tape-built scalar function.
pub fn check<F>(inputs: &[Tensor], f: F) -> Result<Vec<f64>>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let (_, analytic) = analytic_gradients(inputs, &f)?;
    let numeric = numeric_gradients(inputs, FD_STEP, |xs| {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        let loss = f(&tape, &vars)?;
        Ok(loss.item().unwrap_or(f64::NAN))
    })?;
    Ok(analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| {
            a.data()
                .iter()
                .zip(n.data())
                .map(|(&x, &y)| relative_error(x, y))
                .fold(0.0, f64::max)
        })
        .collect())
}
