//! Dense mixture-of-experts head over per-channel low-frequency bands.
//!
//! A softmax gate turns each channel's approximation coefficients into a
//! distribution over experts; the head output is the gate-weighted sum of all
//! expert outputs. Parameters live in a [`ParamStore`] under these names:
//!
//! | name                  | shape   |
//! |-----------------------|---------|
//! | `moe.gate.w`          | `D×E`   |
//! | `moe.gate.b`          | `1×E`   |
//! | `moe.expert{e}.w_h`   | `D×H`   |
//! | `moe.expert{e}.b_h`   | `1×H`   |
//! | `moe.expert{e}.w`     | `H×S`   |
//! | `moe.expert{e}.b`     | `1×S`   |
//!
//! With `expert_hidden == 0` an expert is a single linear layer `D×S` and the
//! `w_h`/`b_h` entries are absent.

use std::io::Write;

use ndarray::{Array2, Array3, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::{flatten_rows, unflatten_rows, BoundParams, ParamStore, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoEConfig {
    pub num_experts: usize,
    /// Hidden width of each expert MLP; `0` makes every expert a plain linear map.
    pub expert_hidden: usize,
}

impl Default for MoEConfig {
    fn default() -> Self {
        MoEConfig {
            num_experts: 4,
            expert_hidden: 64,
        }
    }
}

impl MoEConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_experts == 0 {
            return Err(Error::InvalidConfig("num_experts must be at least 1".into()));
        }
        Ok(())
    }
}

pub const GATE_W: &str = "moe.gate.w";
pub const GATE_B: &str = "moe.gate.b";

pub fn expert_name(expert: usize, field: &str) -> String {
    format!("moe.expert{expert}.{field}")
}

/// Shapes of every MoE parameter, in initialization order. The boolean marks
/// weight matrices (as opposed to biases).
pub fn layout(cfg: &MoEConfig, input_dim: usize, output_dim: usize) -> Vec<(String, (usize, usize), bool)> {
    let e = cfg.num_experts;
    let mut out = vec![
        (GATE_W.to_string(), (input_dim, e), true),
        (GATE_B.to_string(), (1, e), false),
    ];
    for i in 0..e {
        if cfg.expert_hidden > 0 {
            let h = cfg.expert_hidden;
            out.push((expert_name(i, "w_h"), (input_dim, h), true));
            out.push((expert_name(i, "b_h"), (1, h), false));
            out.push((expert_name(i, "w"), (h, output_dim), true));
        } else {
            out.push((expert_name(i, "w"), (input_dim, output_dim), true));
        }
        out.push((expert_name(i, "b"), (1, output_dim), false));
    }
    out
}

fn num_experts(bound: &BoundParams, tape: &Tape) -> Result<usize> {
    Ok(tape.value(bound.var(GATE_W)?).ncols())
}

/// Records `Softmax(x · W_g + b_g)` on the tape; `x` is `R×D`.
pub fn gate_on_tape(tape: &mut Tape, bound: &BoundParams, x: Var) -> Result<Var> {
    let logits = tape.linear(x, bound.var(GATE_W)?, Some(bound.var(GATE_B)?))?;
    tape.softmax_lastdim(logits)
}

/// Records `W_e · ReLU(W_h · x + b_h) + b_e` (or the linear form) on the tape.
pub fn expert_on_tape(tape: &mut Tape, bound: &BoundParams, expert: usize, x: Var) -> Result<Var> {
    let hidden = match bound.var(&expert_name(expert, "w_h")) {
        Ok(w_h) => {
            let pre = tape.linear(x, w_h, Some(bound.var(&expert_name(expert, "b_h"))?))?;
            tape.relu(pre)?
        }
        Err(_) => x,
    };
    tape.linear(
        hidden,
        bound.var(&expert_name(expert, "w"))?,
        Some(bound.var(&expert_name(expert, "b"))?),
    )
}

/// Records the full mixture; returns `(output, gate)`.
pub fn moe_on_tape(tape: &mut Tape, bound: &BoundParams, x: Var) -> Result<(Var, Var)> {
    let gate = gate_on_tape(tape, bound, x)?;
    let experts = num_experts(bound, tape)?;
    let mut out: Option<Var> = None;
    // fixed summation order keeps runs reproducible
    for e in 0..experts {
        let y = expert_on_tape(tape, bound, e, x)?;
        let weighted = tape.weight_rows(y, gate, e)?;
        out = Some(match out {
            None => weighted,
            Some(acc) => tape.add(acc, weighted)?,
        });
    }
    Ok((out.expect("at least one expert"), gate))
}

fn run<F>(params: &ParamStore, x_a: ArrayView3<f64>, f: F) -> Result<Array3<f64>>
where
    F: FnOnce(&mut Tape, &BoundParams, Var) -> Result<Var>,
{
    let (batch, _, _) = x_a.dim();
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let x = tape.input(flatten_rows(x_a));
    let out = f(&mut tape, &bound, x)?;
    unflatten_rows(tape.value(out).clone(), batch)
}

/// Gate probabilities `B×N×E` for approximation bands `B×N×D`.
pub fn gate(params: &ParamStore, x_a: ArrayView3<f64>) -> Result<Array3<f64>> {
    run(params, x_a, gate_on_tape)
}

/// Output `B×N×S` of a single expert.
pub fn expert_forward(params: &ParamStore, expert: usize, x_a: ArrayView3<f64>) -> Result<Array3<f64>> {
    run(params, x_a, |t, b, x| expert_on_tape(t, b, expert, x))
}

/// Gate-weighted mixture `B×N×S`.
pub fn moe_forward(params: &ParamStore, x_a: ArrayView3<f64>) -> Result<Array3<f64>> {
    run(params, x_a, |t, b, x| moe_on_tape(t, b, x).map(|(out, _)| out))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChannelGate {
    pub channel: usize,
    pub probs: Vec<f64>,
    pub argmax: usize,
    pub entropy: f64,
}

/// Per-channel soft cluster assignment averaged over a batch.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GateReport {
    pub num_experts: usize,
    pub rows: Vec<ChannelGate>,
}

/// Natural-log entropy; `0 · ln 0` counts as zero.
pub fn entropy(probs: &[f64]) -> f64 {
    -probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
}

impl GateReport {
    /// Builds the report from gate probabilities `B×N×E`.
    pub fn from_probs(probs: ArrayView3<f64>) -> Result<Self> {
        let (batch, _, experts) = probs.dim();
        if batch == 0 {
            return Err(Error::ShapeMismatch("gate report needs at least one instance".into()));
        }
        let mean = probs.mean_axis(Axis(0)).expect("non-empty batch");
        let rows = mean
            .outer_iter()
            .enumerate()
            .map(|(channel, p)| {
                let probs: Vec<f64> = p.to_vec();
                let argmax = probs
                    .iter()
                    .enumerate()
                    .fold(
                        (0, f64::NEG_INFINITY),
                        |best, (i, &v)| if v > best.1 { (i, v) } else { best },
                    )
                    .0;
                ChannelGate {
                    channel,
                    entropy: entropy(&probs),
                    probs,
                    argmax,
                }
            })
            .collect();
        Ok(GateReport {
            num_experts: experts,
            rows,
        })
    }

    /// CSV with columns `channel,expert_0,…,expert_{E-1},argmax,entropy`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["channel".to_string()];
        header.extend((0..self.num_experts).map(|e| format!("expert_{e}")));
        header.push("argmax".into());
        header.push("entropy".into());
        w.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![row.channel.to_string()];
            rec.extend(row.probs.iter().map(|p| p.to_string()));
            rec.push(row.argmax.to_string());
            rec.push(row.entropy.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Gate assignment table for approximation bands `B×N×D`.
pub fn gate_report(params: &ParamStore, x_a: ArrayView3<f64>) -> Result<GateReport> {
    let probs = gate(params, x_a)?;
    GateReport::from_probs(probs.view())
}

/// Fresh MoE parameters; weights `U(−1/√fan_in, 1/√fan_in)`, biases zero.
pub fn init_params<R: rand::Rng>(
    cfg: &MoEConfig,
    input_dim: usize,
    output_dim: usize,
    rng: &mut R,
    store: &mut ParamStore,
) {
    for (name, shape, is_weight) in layout(cfg, input_dim, output_dim) {
        let value = if is_weight {
            crate::model::uniform_init(shape, rng)
        } else {
            Array2::zeros(shape)
        };
        store.insert(name, value);
    }
}
