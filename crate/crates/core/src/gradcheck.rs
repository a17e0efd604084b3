//! Central finite differences for checking tape gradients.

use ndarray::Array2;

use crate::data::WindowBatch;
use crate::error::Result;
use crate::grad::{ParamStore, Tape, Var};
use crate::model::{loss_and_grads, ModelConfig};

/// Probe step for central differences.
pub const STEP: f64 = 1e-5;

/// Relative error with a floor on the denominator so near-zero gradients
/// are compared absolutely.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn target_like(shape: (usize, usize)) -> Array2<f64> {
    Array2::from_shape_fn(shape, |(i, j)| ((3 * i + 7 * j) as f64 * 0.37).sin())
}

/// Records `build` on `inputs` as parameters, reduces its output with an MSE
/// against a fixed target and returns the worst relative error between the
/// tape gradient and central differences over every input element.
pub fn check_op<F>(inputs: &[Array2<f64>], build: F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Array2<f64>]| -> Result<(f64, Vec<Array2<f64>>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|v| tape.param(v.clone())).collect();
        let out = build(&mut tape, &vars)?;
        let target = target_like(tape.value(out).dim());
        let loss = tape.mse_loss(out, target)?;
        let value = tape.value(loss)[[0, 0]];
        let grads = tape.backward(loss)?;
        let g = vars
            .iter()
            .zip(vals)
            .map(|(v, x)| grads.get_or_zeros(*v, x.dim()))
            .collect();
        Ok((value, g))
    };
    let (_, analytic) = eval(inputs)?;
    let mut worst = 0.0f64;
    for p in 0..inputs.len() {
        for idx in 0..inputs[p].len() {
            let mut plus = inputs.to_vec();
            let mut minus = inputs.to_vec();
            plus[p].as_slice_mut().expect("standard layout")[idx] += STEP;
            minus[p].as_slice_mut().expect("standard layout")[idx] -= STEP;
            let numeric = (eval(&plus)?.0 - eval(&minus)?.0) / (2.0 * STEP);
            let a = analytic[p].as_slice().expect("standard layout")[idx];
            worst = worst.max(rel_err(a, numeric));
        }
    }
    Ok(worst)
}

/// Worst relative error of the end-to-end training loss gradient over every
/// parameter scalar of the model.
pub fn check_model(cfg: &ModelConfig, params: &ParamStore, batch: &WindowBatch) -> Result<f64> {
    let (_, analytic) = loss_and_grads(cfg, params, batch)?;
    let mut worst = 0.0f64;
    for (p, grad) in analytic.iter().enumerate() {
        for idx in 0..params.values()[p].len() {
            let probe = |d: f64| -> Result<f64> {
                let mut q = params.clone();
                q.values_mut()[p].as_slice_mut().expect("standard layout")[idx] += d;
                Ok(loss_and_grads(cfg, &q, batch)?.0)
            };
            let numeric = (probe(STEP)? - probe(-STEP)?) / (2.0 * STEP);
            let a = grad.as_slice().expect("standard layout")[idx];
            worst = worst.max(rel_err(a, numeric));
        }
    }
    Ok(worst)
}
