//! Central finite-difference oracle for tape gradients.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub per_parameter_errors: BTreeMap<String, f64>,
}

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compares the tape gradient of a scalar function of one tensor against
/// central differences with step `h`.
pub fn finite_diff_check<F>(f: F, x: &Tensor, h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    finite_diff_check_many(|tape, vars| f(tape, vars[0]), &[("x", x.clone())], h)
}

/// Multi-input variant: `f` receives one leaf per named input, in order.
pub fn finite_diff_check_many<F>(f: F, inputs: &[(&str, Tensor)], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if h <= 0.0 || !h.is_finite() {
        return Err(Error::Domain {
            op: "finite_diff_check",
            detail: format!("step {h} must be positive"),
        });
    }
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        let v = tape.value(loss).item()?;
        if !v.is_finite() {
            return Err(Error::NonFinite {
                context: "finite_diff_check objective".into(),
            });
        }
        Ok(v)
    };

    let mut values: Vec<Tensor> = inputs.iter().map(|(_, t)| t.clone()).collect();
    let analytic: Vec<Tensor> = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        if !tape.value(loss).all_finite() {
            return Err(Error::NonFinite {
                context: "finite_diff_check objective".into(),
            });
        }
        let grads = tape.backward(loss)?;
        vars.iter().map(|&v| grads.wrt(v)).collect()
    };

    let mut per_parameter_errors = BTreeMap::new();
    for (p, (name, _)) in inputs.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for k in 0..values[p].numel() {
            let orig = values[p].data()[k];
            values[p].data_mut()[k] = orig + h;
            let plus = eval(&values)?;
            values[p].data_mut()[k] = orig - h;
            let minus = eval(&values)?;
            values[p].data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            worst = worst.max(relative_error(analytic[p].data()[k], numeric));
        }
        per_parameter_errors.insert((*name).to_string(), worst);
    }
    let max_relative_error = per_parameter_errors.values().copied().fold(0.0, f64::max);
    Ok(GradCheckReport {
        max_relative_error,
        per_parameter_errors,
    })
}
