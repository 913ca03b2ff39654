//! Central finite-difference checks of tape gradients.

use super::graph::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Relative discrepancy used by the checker: `|a - n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

fn evaluate<F>(f: &F, at: &Tensor) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let x = g.constant(at.clone());
    let out = f(&mut g, x)?;
    let v = g.scalar_value(out)?;
    if !v.is_finite() {
        return Err(Error::NonFinite("gradient_check objective"));
    }
    Ok(v)
}

/// Gradient of the scalar built by `f` at `at`, via the tape.
pub fn analytic_gradient<F>(f: &F, at: &Tensor) -> Result<(f64, Vec<f64>)>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let x = g.variable(at.clone());
    let out = f(&mut g, x)?;
    let value = g.scalar_value(out)?;
    if !value.is_finite() {
        return Err(Error::NonFinite("gradient_check objective"));
    }
    g.backward(out)?;
    let grad = g.grad(x).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; at.len()]);
    Ok((value, grad))
}

/// Maximum relative error between the tape gradient of `f` and central
/// differences with the given `step`, over every coordinate of `at`.
pub fn gradient_check<F>(f: F, at: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let coords: Vec<usize> = (0..at.len()).collect();
    gradient_check_coords(f, at, step, &coords)
}

/// Like [`gradient_check`] but probes only `coords`.
pub fn gradient_check_coords<F>(f: F, at: &Tensor, step: f64, coords: &[usize]) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::invalid(format!("finite-difference step {step} must be positive")));
    }
    let (_, analytic) = analytic_gradient(&f, at)?;
    let mut worst: f64 = 0.0;
    let mut probe = at.clone();
    for &i in coords {
        if i >= at.len() {
            return Err(Error::invalid(format!("coordinate {i} out of range {}", at.len())));
        }
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let plus = evaluate(&f, &probe)?;
        probe.data_mut()[i] = orig - step;
        let minus = evaluate(&f, &probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * step);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(worst)
}
