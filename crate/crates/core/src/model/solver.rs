//! Batched forward Euler with a per-row step size.

use crate::error::{Error, Result};
use crate::model::backend::Backend;
use crate::numerics::Matrix;

/// Right-hand side `dh/dt = f(h, u)` of an input-driven ODE.
pub trait VectorField {
    fn eval(&self, h: &Matrix, u: &Matrix) -> Result<Matrix>;
}

/// `h + dtau * dh`, row `i` using `dtaus[i]`.
pub fn euler_update<B: Backend>(bk: &mut B, h: &B::Value, dh: &B::Value, dtaus: &[f64]) -> Result<B::Value> {
    let step = bk.scale_rows(dh, dtaus)?;
    bk.add(h, &step)
}

/// Integrates `steps = inputs.len()` Euler steps, holding `inputs[i]` over
/// step `i`. Returns the states after each step.
pub fn solve_euler<F: VectorField + ?Sized>(
    field: &F,
    h0: &Matrix,
    inputs: &[Matrix],
    dtaus: &[Vec<f64>],
) -> Result<Vec<Matrix>> {
    if inputs.len() != dtaus.len() {
        return Err(Error::shape("solve_euler", (inputs.len(), 1), (dtaus.len(), 1)));
    }
    let mut trajectory = Vec::with_capacity(inputs.len());
    let mut h = h0.clone();
    for (u, dtau) in inputs.iter().zip(dtaus) {
        let dh = field.eval(&h, u)?;
        h = h.add(&dh.scale_rows(dtau)?)?;
        trajectory.push(h.clone());
    }
    Ok(trajectory)
}
