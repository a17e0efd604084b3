//! Reversible instance normalization.
//!
//! Statistics are taken per (instance, channel) over the lookback axis only,
//! so a forecast never sees anything from its own horizon.

use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView3, Axis};

use crate::error::{Error, Result};

/// Added to the population variance before the square root.
pub const REVIN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct RevinState {
    /// `B×N` lookback means.
    pub mean: Array2<f64>,
    /// `B×N` lookback standard deviations, ε already included.
    pub std: Array2<f64>,
    pub eps: f64,
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

/// Per-instance, per-channel mean and `sqrt(var + eps)` of a `B×L×N` batch.
pub fn instance_stats(x: ArrayView3<f64>, eps: f64) -> Result<(Array2<f64>, Array2<f64>)> {
    let len = x.len_of(Axis(1));
    if len < 2 {
        return Err(Error::DegenerateWindow(len));
    }
    let mean = x.mean_axis(Axis(1)).expect("non-empty lookback");
    let mut var = Array2::<f64>::zeros(mean.raw_dim());
    for (b, inst) in x.outer_iter().enumerate() {
        for step in inst.outer_iter() {
            for (n, &v) in step.iter().enumerate() {
                let d = v - mean[[b, n]];
                var[[b, n]] += d * d;
            }
        }
    }
    let std = var.mapv(|s| (s / len as f64 + eps).sqrt());
    Ok((mean, std))
}

/// Normalizes `x` (`B×L×N`) and returns the state needed to undo it.
pub fn revin_forward(
    x: ArrayView3<f64>,
    gamma: ArrayView1<f64>,
    beta: ArrayView1<f64>,
    eps: f64,
) -> Result<(Array3<f64>, RevinState)> {
    let channels = x.len_of(Axis(2));
    if gamma.len() != channels || beta.len() != channels {
        return Err(Error::ShapeMismatch(format!(
            "affine parameters of length {}/{} for {channels} channels",
            gamma.len(),
            beta.len()
        )));
    }
    let (mean, std) = instance_stats(x, eps)?;
    let mut out = x.to_owned();
    for (b, mut inst) in out.outer_iter_mut().enumerate() {
        for mut step in inst.outer_iter_mut() {
            for (n, v) in step.iter_mut().enumerate() {
                *v = gamma[n] * (*v - mean[[b, n]]) / std[[b, n]] + beta[n];
            }
        }
    }
    let state = RevinState {
        mean,
        std,
        eps,
        gamma: gamma.to_owned(),
        beta: beta.to_owned(),
    };
    Ok((out, state))
}

/// Maps normalized predictions (`B×S×N`) back to the input scale.
pub fn revin_inverse(y: ArrayView3<f64>, state: &RevinState) -> Result<Array3<f64>> {
    let (batch, _, channels) = y.dim();
    if state.mean.dim() != (batch, channels) || state.gamma.len() != channels {
        return Err(Error::ShapeMismatch(format!(
            "prediction {:?} does not match state for {:?}",
            y.shape(),
            state.mean.shape()
        )));
    }
    if let Some(ch) = state.gamma.iter().position(|g| g.abs() < 1e-12) {
        return Err(Error::ZeroGain(ch));
    }
    let mut out = y.to_owned();
    for (b, mut inst) in out.outer_iter_mut().enumerate() {
        for mut step in inst.outer_iter_mut() {
            for (n, v) in step.iter_mut().enumerate() {
                *v = (*v - state.beta[n]) / state.gamma[n] * state.std[[b, n]] + state.mean[[b, n]];
            }
        }
    }
    Ok(out)
}
