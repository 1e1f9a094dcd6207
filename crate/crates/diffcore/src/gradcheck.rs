//! Central finite-difference gradient checking.
//!
//! The checker re-runs the forward closure on perturbed copies of the inputs
//! and compares against the gradients that `Tape::backward` accumulates.

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Largest relative error over all checked coordinates.
    pub max_rel_error: f64,
    /// `(input, coordinate, analytic, numeric)` of the worst coordinate.
    pub worst: (usize, usize, f64, f64),
    pub checked: usize,
}

/// Relative error with a floor on the denominator so coordinates whose true
/// gradient is ~0 are judged on absolute error.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

/// Compares analytic and central-difference gradients of the scalar built by
/// `f` with respect to every input.
pub fn check<F>(inputs: &[Tensor], step: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;

    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: (0, 0, 0.0, 0.0),
        checked: 0,
    };
    let mut perturbed = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = tape
            .grad(*v)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; inputs[i].len()]);
        for k in 0..inputs[i].len() {
            let orig = inputs[i].data()[k];
            perturbed[i].data_mut()[k] = orig + step;
            let up = eval(&perturbed)?;
            perturbed[i].data_mut()[k] = orig - step;
            let down = eval(&perturbed)?;
            perturbed[i].data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * step);
            let err = relative_error(analytic[k], numeric);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (i, k, analytic[k], numeric);
            }
        }
    }
    Ok(report)
}
