//! Metrics, closed-form efficiency accounting, timing and run reports.

use std::io::Write;
use std::time::Instant;

use ndarray::{Array3, ArrayView, ArrayView3, Axis, Dimension};
use serde::{Deserialize, Serialize};

use crate::data::{WindowBatch, Windows};
use crate::error::{Error, Result};
use crate::model::{DeltaMode, Model, ModelConfig, Variant};

fn check_shapes<D: Dimension>(pred: &ArrayView<f64, D>, truth: &ArrayView<f64, D>) -> Result<()> {
    if pred.shape() != truth.shape() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            truth.shape()
        )));
    }
    if pred.is_empty() {
        return Err(Error::ShapeMismatch("empty prediction".into()));
    }
    Ok(())
}

pub fn mse<D: Dimension>(pred: ArrayView<f64, D>, truth: ArrayView<f64, D>) -> Result<f64> {
    check_shapes(&pred, &truth)?;
    let sum: f64 = pred.iter().zip(truth.iter()).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(sum / pred.len() as f64)
}

pub fn mae<D: Dimension>(pred: ArrayView<f64, D>, truth: ArrayView<f64, D>) -> Result<f64> {
    check_shapes(&pred, &truth)?;
    let sum: f64 = pred.iter().zip(truth.iter()).map(|(p, t)| (p - t).abs()).sum();
    Ok(sum / pred.len() as f64)
}

/// Repeats each channel's last lookback value over the horizon.
pub fn persistence_baseline(x: ArrayView3<f64>, horizon: usize) -> Array3<f64> {
    let (b, l, n) = x.dim();
    let last = x.index_axis(Axis(1), l - 1);
    Array3::from_shape_fn((b, horizon, n), |(i, _, c)| last[[i, c]])
}

/// Error sums accumulated window by window in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricAccumulator {
    horizon: usize,
    sq: Vec<f64>,
    abs: Vec<f64>,
    count: usize,
}

impl MetricAccumulator {
    pub fn new(horizon: usize) -> Self {
        MetricAccumulator {
            horizon,
            sq: vec![0.0; horizon],
            abs: vec![0.0; horizon],
            count: 0,
        }
    }

    pub fn push(&mut self, pred: ArrayView3<f64>, truth: ArrayView3<f64>) -> Result<()> {
        check_shapes(&pred, &truth)?;
        if pred.len_of(Axis(1)) != self.horizon {
            return Err(Error::ShapeMismatch(format!(
                "horizon {} in accumulator for {}",
                pred.len_of(Axis(1)),
                self.horizon
            )));
        }
        for (pw, tw) in pred.outer_iter().zip(truth.outer_iter()) {
            for (s, (ps, ts)) in pw.outer_iter().zip(tw.outer_iter()).enumerate() {
                for (p, t) in ps.iter().zip(ts.iter()) {
                    let e = p - t;
                    self.sq[s] += e * e;
                    self.abs[s] += e.abs();
                }
            }
        }
        self.count += pred.len_of(Axis(0)) * pred.len_of(Axis(2));
        Ok(())
    }

    pub fn finish(&self) -> Result<Metrics> {
        if self.count == 0 {
            return Err(Error::ShapeMismatch("no windows evaluated".into()));
        }
        let per_step = self.count as f64;
        let per_horizon_mse: Vec<f64> = self.sq.iter().map(|s| s / per_step).collect();
        let per_horizon_mae: Vec<f64> = self.abs.iter().map(|s| s / per_step).collect();
        let total = per_step * self.horizon as f64;
        Ok(Metrics {
            mse: self.sq.iter().sum::<f64>() / total,
            mae: self.abs.iter().sum::<f64>() / total,
            per_horizon_mse,
            per_horizon_mae,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
    pub per_horizon_mse: Vec<f64>,
    pub per_horizon_mae: Vec<f64>,
}

/// Model and persistence metrics over every window.
pub fn evaluate(model: &Model, windows: &Windows<'_>, batch_size: usize) -> Result<(Metrics, Metrics)> {
    let horizon = windows.horizon();
    let mut ours = MetricAccumulator::new(horizon);
    let mut naive = MetricAccumulator::new(horizon);
    for batch in windows.batches(batch_size, None) {
        let pred = model.forward(batch.x.view())?;
        ours.push(pred.view(), batch.y.view())?;
        naive.push(persistence_baseline(batch.x.view(), horizon).view(), batch.y.view())?;
    }
    Ok((ours.finish()?, naive.finish()?))
}

/// Closed-form parameter tally by component.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub revin: usize,
    pub lf_head: usize,
    pub hf_head: usize,
    pub moe_gate: usize,
    pub moe_experts: usize,
    pub delta: usize,
}

impl ParamCount {
    pub fn total(&self) -> usize {
        self.revin + self.lf_head + self.hf_head + self.moe_gate + self.moe_experts + self.delta
    }
}

pub fn count_params(cfg: &ModelConfig) -> Result<ParamCount> {
    cfg.validate()?;
    let (d, s, n) = (cfg.half(), cfg.head_out(), cfg.channels);
    let linear = |i: usize, o: usize| i * o + o;
    let mut count = ParamCount {
        revin: if cfg.revin_affine { 2 * n } else { 0 },
        ..Default::default()
    };
    match cfg.variant {
        Variant::HF => {}
        Variant::M => {
            let m = cfg.moe.expect("validated");
            let e = m.num_experts;
            count.moe_gate = linear(d, e);
            count.moe_experts = e * match m.expert_hidden {
                0 => linear(d, s),
                h => linear(d, h) + linear(h, s),
            };
        }
        _ => {
            count.lf_head = match cfg.lf_hidden {
                Some(h) => linear(d, h) + linear(h, s),
                None => linear(d, s),
            };
        }
    }
    if cfg.uses_delta() {
        count.hf_head = linear(d, s);
        if cfg.delta == DeltaMode::Learnable {
            count.delta = if cfg.delta_per_channel { n } else { 1 };
        }
    }
    Ok(count)
}

/// Forward-pass multiply-accumulates.
///
/// `per_sample` and `per_batch` cover the learnable layers, applied once per
/// channel. The wavelet analysis (and synthesis for variant I) is tallied
/// separately in `transform_per_sample`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MacCount {
    pub per_sample: u64,
    pub per_batch: u64,
    pub transform_per_sample: u64,
    pub batch_size: u64,
}

impl MacCount {
    pub fn total_per_sample(&self) -> u64 {
        self.per_sample + self.transform_per_sample
    }
}

pub fn count_macs(cfg: &ModelConfig, batch_size: usize) -> Result<MacCount> {
    cfg.validate()?;
    let (d, s, n) = (cfg.half() as u64, cfg.head_out() as u64, cfg.channels as u64);
    let k = cfg.filter.taps() as u64;
    let mut per_row = 0u64;
    let mut transform_per_row = 0u64;
    if cfg.variant != Variant::HF {
        transform_per_row += k * d;
        per_row += match (cfg.variant, cfg.moe) {
            (Variant::M, Some(m)) => {
                let e = m.num_experts as u64;
                let expert = match m.expert_hidden as u64 {
                    0 => d * s,
                    h => d * h + h * s,
                };
                d * e + e * expert + e * s
            }
            _ => match cfg.lf_hidden {
                Some(h) => d * h as u64 + h as u64 * s,
                None => d * s,
            },
        };
    }
    if cfg.uses_delta() {
        transform_per_row += k * d;
        per_row += d * s;
    }
    if cfg.variant == Variant::I {
        // each output sample takes K/2 taps from each band
        transform_per_row += k * 2 * s;
    }
    let per_sample = per_row * n;
    Ok(MacCount {
        per_sample,
        per_batch: per_sample * batch_size as u64,
        transform_per_sample: transform_per_row * n,
        batch_size: batch_size as u64,
    })
}

/// Mean wall-clock milliseconds of one forward pass over `batch`, over `calls` calls.
pub fn time_inference(model: &Model, batch: &WindowBatch, calls: usize) -> Result<Option<f64>> {
    if calls == 0 || batch.is_empty() {
        return Ok(None);
    }
    model.forward(batch.x.view())?;
    let start = Instant::now();
    for _ in 0..calls {
        model.forward(batch.x.view())?;
    }
    Ok(Some(start.elapsed().as_secs_f64() * 1e3 / calls as f64))
}

pub fn mean_time(samples: &[f64]) -> Option<f64> {
    if samples.is_empty() {
        None
    } else {
        Some(samples.iter().sum::<f64>() / samples.len() as f64)
    }
}

/// Short description of the machine that produced a timing.
pub fn hardware_note() -> String {
    let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_string())
        })
        .unwrap_or_else(|| "unknown cpu".into());
    format!(
        "{cpu}; {threads} threads; {}-{}; single-threaded run",
        std::env::consts::OS,
        std::env::consts::ARCH
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub dataset: String,
    pub variant: Variant,
    pub lookback: usize,
    pub horizon: usize,
    pub seed: u64,
    pub mse: f64,
    pub mae: f64,
    pub per_horizon_mse: Vec<f64>,
    pub per_horizon_mae: Vec<f64>,
    pub persistence_mse: f64,
    pub persistence_mae: f64,
    pub param_count: usize,
    pub macs_per_sample: u64,
    pub macs_per_batch: u64,
    pub transform_macs_per_sample: u64,
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Absent when no epoch ran.
    pub epoch_time_s: Option<f64>,
    pub infer_time_ms: Option<f64>,
    pub hardware: String,
}

pub const REPORT_COLUMNS: [&str; 16] = [
    "dataset",
    "variant",
    "L",
    "S",
    "seed",
    "mse",
    "mae",
    "persistence_mse",
    "persistence_mae",
    "param_count",
    "macs_per_sample",
    "macs_per_batch",
    "epochs_run",
    "best_epoch",
    "epoch_time_s",
    "infer_time_ms",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl RunReport {
    pub fn csv_record(&self) -> Vec<String> {
        vec![
            self.dataset.clone(),
            self.variant.to_string(),
            self.lookback.to_string(),
            self.horizon.to_string(),
            self.seed.to_string(),
            self.mse.to_string(),
            self.mae.to_string(),
            self.persistence_mse.to_string(),
            self.persistence_mae.to_string(),
            self.param_count.to_string(),
            self.macs_per_sample.to_string(),
            self.macs_per_batch.to_string(),
            self.epochs_run.to_string(),
            opt(self.best_epoch),
            opt(self.epoch_time_s),
            opt(self.infer_time_ms),
        ]
    }

    /// Writes a header and one row per report.
    pub fn write_csv<'a, W: Write>(reports: impl IntoIterator<Item = &'a RunReport>, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(REPORT_COLUMNS)?;
        for r in reports {
            w.write_record(r.csv_record())?;
        }
        w.flush()?;
        Ok(())
    }

    /// The report with wall-clock fields cleared, for run-to-run comparison.
    pub fn without_timing(&self) -> RunReport {
        RunReport {
            epoch_time_s: None,
            infer_time_ms: None,
            ..self.clone()
        }
    }
}
