//! Central finite-difference gradient verification.

use super::{Tape, Tensor, Var};
use crate::error::{KaaError, Result};

/// Inputs to relu, leaky relu, abs and spline ops stay at least this far
/// from their non-smooth points during gradient checks.
pub const KINK_MARGIN: f64 = 0.05;

/// `|a - n| / (|a| + |n| + 1e-12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs() + 1e-12)
}

/// Max relative error between the tape gradient of the scalar built by `f`
/// at `x` and a central difference with step `h`.
pub fn finite_diff_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    finite_diff_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), h)
}

/// Same as [`finite_diff_check`] over several input tensors at once; the
/// statistic is the max over every coordinate of every input.
pub fn finite_diff_check_many<F>(f: F, xs: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        tape.value(out).item()
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = xs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    if tape.value(out).len() != 1 {
        return Err(KaaError::shape(
            "finite_diff_check",
            tape.value(out).shape(),
            &[1],
        ));
    }
    let grads = tape.backward(out)?;

    let mut worst: f64 = 0.0;
    let mut probe: Vec<Tensor> = xs.to_vec();
    for (k, x) in xs.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[k], x.shape());
        for i in 0..x.len() {
            let orig = x.data()[i];
            probe[k].data_mut()[i] = orig + h;
            let fp = eval(&probe)?;
            probe[k].data_mut()[i] = orig - h;
            let fm = eval(&probe)?;
            probe[k].data_mut()[i] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            worst = worst.max(relative_error(analytic.data()[i], numeric));
        }
    }
    Ok(worst)
}
