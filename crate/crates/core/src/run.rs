//! End-to-end experiment: load, split, standardize, train, evaluate, report.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{load_csv, split, standardize, synth, CsvSchema, Series, SplitScheme, SplitSpec, SynthKind, Windows};
use crate::error::{Error, Result};
use crate::eval::{count_macs, count_params, evaluate, hardware_note, mean_time, time_inference, RunReport};
use crate::grad::AdamConfig;
use crate::model::{DeltaMode, Model, ModelConfig, Variant};
use crate::moe::MoEConfig;
use crate::train::{train, TrainConfig};
use crate::wavelet::WaveletKind;

/// Prefix marking a generated dataset, e.g. `synth:sine_mix`.
pub const SYNTH_PREFIX: &str = "synth:";

/// Every knob of one run, flat so it maps onto a key-value file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// CSV path or `synth:<kind>`.
    pub data: String,
    pub synth_length: usize,
    pub synth_channels: usize,
    pub data_seed: u64,
    /// Detected from the file name when absent.
    pub split: Option<SplitScheme>,
    /// Z-score every channel with training-split statistics.
    pub standardize: bool,
    pub variant: Variant,
    pub lookback: usize,
    pub horizon: usize,
    pub filter: WaveletKind,
    /// Pins δ instead of learning it.
    pub delta_fixed: Option<f64>,
    pub delta_per_channel: bool,
    pub num_experts: usize,
    pub expert_hidden: usize,
    pub revin_affine: bool,
    pub lf_hidden: Option<usize>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub infer_calls: usize,
    pub out_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        let moe = MoEConfig::default();
        RunConfig {
            data: format!("{SYNTH_PREFIX}sine_mix"),
            synth_length: 4000,
            synth_channels: 4,
            data_seed: 0,
            split: None,
            standardize: true,
            variant: Variant::B,
            lookback: 96,
            horizon: 24,
            filter: WaveletKind::Haar,
            delta_fixed: None,
            delta_per_channel: false,
            num_experts: moe.num_experts,
            expert_hidden: moe.expert_hidden,
            revin_affine: true,
            lf_hidden: None,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            adam_eps: adam.eps,
            batch_size: 32,
            epochs: 30,
            patience: 3,
            seed: 0,
            infer_calls: 100,
            out_dir: "runs".into(),
        }
    }
}

impl RunConfig {
    pub fn synth_kind(&self) -> Result<Option<SynthKind>> {
        self.data.strip_prefix(SYNTH_PREFIX).map(str::parse).transpose()
    }

    /// Short dataset label: the synthetic kind or the file stem.
    pub fn dataset_name(&self) -> String {
        match self.data.strip_prefix(SYNTH_PREFIX) {
            Some(kind) => kind.to_string(),
            None => Path::new(&self.data)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| self.data.clone()),
        }
    }

    pub fn model_config(&self, channels: usize) -> ModelConfig {
        ModelConfig {
            variant: self.variant,
            lookback: self.lookback,
            horizon: self.horizon,
            channels,
            filter: self.filter,
            delta: self.delta_fixed.map_or(DeltaMode::Learnable, DeltaMode::Fixed),
            delta_per_channel: self.delta_per_channel,
            moe: (self.variant == Variant::M).then_some(MoEConfig {
                num_experts: self.num_experts,
                expert_hidden: self.expert_hidden,
            }),
            revin_affine: self.revin_affine,
            lf_hidden: self.lf_hidden,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            adam: AdamConfig {
                lr: self.lr,
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.adam_eps,
            },
            batch_size: self.batch_size,
            max_epochs: self.epochs,
            patience: self.patience,
            seed: self.seed,
        }
    }

    pub fn split_scheme(&self) -> SplitScheme {
        match self.split {
            Some(s) => s,
            None if self.data.starts_with(SYNTH_PREFIX) => SplitScheme::Ratio,
            None => SplitScheme::detect(Path::new(&self.data)),
        }
    }

    pub fn load_series(&self) -> Result<Series> {
        match self.synth_kind()? {
            Some(kind) => synth(kind, self.synth_length, self.synth_channels, self.data_seed),
            None => load_csv(Path::new(&self.data), &CsvSchema::default()),
        }
    }
}

/// Series after splitting and optional standardization.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub series: Series,
    pub spec: SplitSpec,
}

pub fn prepare(cfg: &RunConfig) -> Result<PreparedData> {
    let raw = cfg.load_series()?;
    prepare_series(cfg, raw)
}

pub fn prepare_series(cfg: &RunConfig, raw: Series) -> Result<PreparedData> {
    let spec = SplitSpec::new(cfg.split_scheme(), raw.len())?;
    let series = if cfg.standardize {
        let splits = split(&raw, &spec)?;
        standardize(&raw, &splits.train).0
    } else {
        raw
    };
    Ok(PreparedData { series, spec })
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub report: RunReport,
    pub model: Model,
}

/// Trains and evaluates one configuration on prepared data.
pub fn run_prepared(cfg: &RunConfig, data: &PreparedData) -> Result<RunOutput> {
    let model_cfg = cfg.model_config(data.series.channels());
    model_cfg.validate()?;
    let splits = split(&data.series, &data.spec)?;
    let windows = |view, what: &str| {
        Windows::new(view, cfg.lookback, cfg.horizon, 1).map_err(|e| match e {
            Error::SeriesTooShort { length, needed } => {
                Error::InvalidConfig(format!("{what} split has {length} rows, needs {needed}"))
            }
            other => other,
        })
    };
    let train_w = windows(splits.train, "train")?;
    let val_w = windows(splits.val, "validation")?;
    let test_w = windows(splits.test, "test")?;

    let model = Model::init(model_cfg.clone(), cfg.seed)?;
    let outcome = train(model, &train_w, &val_w, &cfg.train_config())?;
    let (metrics, naive) = evaluate(&outcome.model, &test_w, 256)?;

    let params = count_params(&model_cfg)?.total();
    debug_assert_eq!(params, outcome.model.num_params());
    let macs = count_macs(&model_cfg, cfg.batch_size)?;
    let ran = outcome.epochs_run() > 0;
    let infer_time_ms = if ran {
        let n = cfg.batch_size.min(test_w.len());
        let probe = test_w.gather(&test_w.origins()[..n]);
        time_inference(&outcome.model, &probe, cfg.infer_calls)?
    } else {
        None
    };

    let report = RunReport {
        dataset: cfg.dataset_name(),
        variant: cfg.variant,
        lookback: cfg.lookback,
        horizon: cfg.horizon,
        seed: cfg.seed,
        mse: metrics.mse,
        mae: metrics.mae,
        per_horizon_mse: metrics.per_horizon_mse,
        per_horizon_mae: metrics.per_horizon_mae,
        persistence_mse: naive.mse,
        persistence_mae: naive.mae,
        param_count: params,
        macs_per_sample: macs.per_sample,
        macs_per_batch: macs.per_batch,
        transform_macs_per_sample: macs.transform_per_sample,
        epochs_run: outcome.epochs_run(),
        best_epoch: outcome.best_epoch,
        train_loss: outcome.train_loss,
        val_loss: outcome.val_loss,
        epoch_time_s: mean_time(&outcome.epoch_times),
        infer_time_ms,
        hardware: hardware_note(),
    };
    Ok(RunOutput {
        report,
        model: outcome.model,
    })
}

pub fn run(cfg: &RunConfig) -> Result<RunOutput> {
    run_prepared(cfg, &prepare(cfg)?)
}
