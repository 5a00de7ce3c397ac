//! Central finite-difference checks against tape gradients.

use crate::error::{AutodiffError, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Relative error used by the checks: `|a − n| / max(1, |a|, |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Compares the tape gradient of a scalar function of one tensor with
/// central differences of step `h`, returning the largest relative error.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    grad_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), h)
}

/// Multi-input variant of [`grad_check`]; the error is the maximum over every
/// coordinate of every input.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let analytic = analytic_grads(&f, inputs)?;
    let mut worst = 0.0f64;
    for (which, input) in inputs.iter().enumerate() {
        for coord in 0..input.numel() {
            let numeric = numeric_partial(&f, inputs, which, coord, h)?;
            let a = analytic[which].data()[coord];
            worst = worst.max(relative_error(a, numeric));
        }
    }
    Ok(worst)
}

/// Tape gradients of `f` with respect to every input.
pub fn analytic_grads<F>(f: &F, inputs: &[Tensor]) -> Result<Vec<Tensor>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    Ok(vars.iter().map(|&v| tape.grad_or_zeros(v)).collect())
}

/// Evaluates a scalar function without tracking gradients.
pub fn evaluate<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let value = tape.value(out);
    if value.numel() != 1 {
        return Err(AutodiffError::NonScalarLoss(value.shape().to_vec()));
    }
    Ok(value.item())
}

fn numeric_partial<F>(f: &F, inputs: &[Tensor], which: usize, coord: usize, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut shifted = inputs.to_vec();
    let base = inputs[which].data()[coord];
    shifted[which].data_mut()[coord] = base + h;
    let plus = evaluate(f, &shifted)?;
    shifted[which].data_mut()[coord] = base - h;
    let minus = evaluate(f, &shifted)?;
    Ok((plus - minus) / (2.0 * h))
}
