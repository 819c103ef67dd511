//! Reverse-mode differentiation over dense `f64` matrices.
//!
//! Computations are written as closures that record primitives on a fresh
//! [`Tape`]. [`evaluate`], [`gradients`] and [`grad_check`] run such a
//! closure against a map of named inputs.

mod tape;
mod tensor;

use std::collections::BTreeMap;

use thiserror::Error;

pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch ({detail})")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("{op} produced a non-finite value")]
    NonFiniteValue { op: &'static str },
    #[error("gradient requested for non-scalar output of shape {0:?}")]
    NonScalarOutput(Vec<usize>),
}

pub type Inputs = BTreeMap<String, Tensor>;

fn record<F>(f: &F, inputs: &Inputs) -> Result<(Tape, BTreeMap<String, Var>, Var), AutodiffError>
where
    F: Fn(&mut Tape, &BTreeMap<String, Var>) -> Result<Var, AutodiffError>,
{
    let mut tape = Tape::new();
    let vars = inputs.iter().map(|(k, t)| (k.clone(), tape.leaf(t.clone()))).collect();
    let out = f(&mut tape, &vars)?;
    Ok((tape, vars, out))
}

/// Forward value of `f` on `inputs`.
pub fn evaluate<F>(f: F, inputs: &Inputs) -> Result<Tensor, AutodiffError>
where
    F: Fn(&mut Tape, &BTreeMap<String, Var>) -> Result<Var, AutodiffError>,
{
    let (tape, _, out) = record(&f, inputs)?;
    Ok(tape.value(out).clone())
}

/// Gradient of the scalar output of `f` with respect to every input.
/// Inputs the output does not depend on get zero gradients.
pub fn gradients<F>(f: F, inputs: &Inputs) -> Result<Inputs, AutodiffError>
where
    F: Fn(&mut Tape, &BTreeMap<String, Var>) -> Result<Var, AutodiffError>,
{
    let (tape, vars, out) = record(&f, inputs)?;
    let mut grads = tape.backward(out)?;
    Ok(vars
        .into_iter()
        .map(|(name, v)| {
            let g = grads.take(v).unwrap_or_else(|| Tensor::zeros(tape.value(v).shape()));
            (name, g)
        })
        .collect())
}

/// Largest elementwise relative error between reverse-mode gradients and
/// central differences `(f(x+eps) − f(x−eps)) / (2 eps)`, with denominator
/// `max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(f: F, inputs: &Inputs, eps: f64) -> Result<f64, AutodiffError>
where
    F: Fn(&mut Tape, &BTreeMap<String, Var>) -> Result<Var, AutodiffError>,
{
    assert!(eps > 0.0, "grad_check needs a positive step");
    let analytic = gradients(&f, inputs)?;
    let scalar = |inputs: &Inputs| -> Result<f64, AutodiffError> {
        let t = evaluate(&f, inputs)?;
        t.item().ok_or(AutodiffError::NonScalarOutput(t.shape().to_vec()))
    };
    let mut worst: f64 = 0.0;
    let mut probe = inputs.clone();
    for (name, tensor) in inputs {
        for k in 0..tensor.len() {
            let x = tensor.data()[k];
            probe.get_mut(name).expect("same keys").data_mut()[k] = x + eps;
            let plus = scalar(&probe)?;
            probe.get_mut(name).expect("same keys").data_mut()[k] = x - eps;
            let minus = scalar(&probe)?;
            probe.get_mut(name).expect("same keys").data_mut()[k] = x;
            let numeric = (plus - minus) / (2.0 * eps);
            let exact = analytic[name].data()[k];
            let denom = exact.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((exact - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

/// Smallest distance of any ReLU pre-activation from the kink when `f` runs on `inputs`.
pub fn relu_margin<F>(f: F, inputs: &Inputs) -> Result<f64, AutodiffError>
where
    F: Fn(&mut Tape, &BTreeMap<String, Var>) -> Result<Var, AutodiffError>,
{
    let (tape, _, _) = record(&f, inputs)?;
    Ok(tape.relu_margin())
}
