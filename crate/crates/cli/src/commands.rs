use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use log::{info, warn};
use serde::Serialize;
use wavets_core::data::{self, Windows};
use wavets_core::eval::{count_macs, count_params, evaluate, hardware_note, mean_time, time_inference};
use wavets_core::grad::{AdamState, ParamStore};
use wavets_core::run::{prepare, run_prepared, PreparedData, RunOutput};
use wavets_core::train::{train_epoch, TrainConfig};
use wavets_core::{Error, Model, ModelConfig, RunConfig, SynthKind, Variant, WaveletKind};

use crate::output::{fresh_dir, write_json, write_run};
use crate::overrides::{parse_list, resolve};
use crate::{CliError, RunArgs};

/// Resolved base config plus the seeds to run it with.
fn run_plan(args: &RunArgs) -> Result<(RunConfig, Vec<u64>), CliError> {
    let (base, mut overrides) = resolve(args.config.as_deref(), &args.overrides)?;
    let trailing = overrides.take("seeds");
    let cfg = overrides.apply(&base)?;
    let seeds = match args.seeds.as_deref().or(trailing.as_deref()) {
        Some(list) => parse_list::<u64>(list, "seed")?,
        None => vec![cfg.seed],
    };
    if seeds.is_empty() {
        return Err(CliError::Config("`--seeds` lists no seeds".into()));
    }
    Ok((cfg, seeds))
}

fn with_seed(cfg: &RunConfig, seed: u64) -> RunConfig {
    RunConfig { seed, ..cfg.clone() }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn train(args: &RunArgs) -> Result<(), CliError> {
    let (cfg, seeds) = run_plan(args)?;
    let root = PathBuf::from(&cfg.out_dir);
    let data = prepare(&cfg)?;
    let mut outputs: Vec<(u64, RunOutput, PathBuf)> = Vec::new();
    for &seed in &seeds {
        let seeded = with_seed(&cfg, seed);
        info!(
            "training {} on {} with seed {seed}",
            seeded.variant,
            seeded.dataset_name()
        );
        let out = run_prepared(&seeded, &data)?;
        let dir = write_run(&root, &seeded, &out)?;
        if let Some(gates) = gate_table(&seeded, &data, &out)? {
            fs::write(dir.join("gates.csv"), gates)?;
        }
        println!(
            "{} seed={seed} mse={} mae={} persistence_mse={} epochs={}",
            dir.display(),
            out.report.mse,
            out.report.mae,
            out.report.persistence_mse,
            out.report.epochs_run
        );
        outputs.push((seed, out, dir));
    }
    if seeds.len() > 1 {
        let dir = fresh_dir(&root, "seeds-", &cfg)?;
        write_json(&dir.join("config.json"), &cfg)?;
        let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
        w.write_record(["metric", "mean", "std", "n"])?;
        let n = outputs.len().to_string();
        for (name, pick) in [("mse", 0), ("mae", 1)] {
            let values: Vec<f64> = outputs
                .iter()
                .map(|(_, o, _)| if pick == 0 { o.report.mse } else { o.report.mae })
                .collect();
            let (mean, std) = mean_std(&values);
            w.write_record([name, &mean.to_string(), &std.to_string(), &n])?;
            println!("{name} {mean:.4} ± {std:.4} over {n} seeds");
        }
        w.flush()?;
        let runs: Vec<String> = outputs.iter().map(|(_, _, d)| d.display().to_string()).collect();
        fs::write(dir.join("runs.txt"), runs.join("\n") + "\n")?;
        println!("{}", dir.display());
    }
    Ok(())
}

/// Gate assignment CSV over (up to 512) test windows, for variant M.
fn gate_table(cfg: &RunConfig, data: &PreparedData, out: &RunOutput) -> Result<Option<Vec<u8>>, CliError> {
    if cfg.variant != Variant::M {
        return Ok(None);
    }
    let splits = wavets_core::data::split(&data.series, &data.spec)?;
    let windows = Windows::new(splits.test, cfg.lookback, cfg.horizon, 1)?;
    let n = windows.len().min(512);
    let batch = windows.gather(&windows.origins()[..n]);
    let report = out.model.gate_report(batch.x.view())?;
    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    Ok(Some(buf))
}

pub fn eval(run_dir: &Path, data: Option<String>) -> Result<(), CliError> {
    let text = fs::read_to_string(run_dir.join("config.json"))
        .map_err(|e| CliError::Config(format!("{}: {e}", run_dir.join("config.json").display())))?;
    let mut cfg: RunConfig = serde_json::from_str(&text)?;
    if let Some(d) = data {
        cfg.data = d;
        cfg.split = None;
    }
    let params = ParamStore::load(&run_dir.join("checkpoint.json"))?;
    let prepared = prepare(&cfg)?;
    let model_cfg = cfg.model_config(prepared.series.channels());
    let expected = count_params(&model_cfg)?.total();
    if expected != params.num_scalars() {
        return Err(Error::ConfigMismatch(format!(
            "checkpoint holds {} scalars, configuration expects {expected}",
            params.num_scalars()
        ))
        .into());
    }
    let model = Model::from_params(model_cfg, params)?;
    let splits = wavets_core::data::split(&prepared.series, &prepared.spec)?;
    let test = Windows::new(splits.test, cfg.lookback, cfg.horizon, 1)?;
    let (metrics, naive) = evaluate(&model, &test, 256)?;
    let mut w = csv::Writer::from_writer(io::stdout());
    w.write_record([
        "dataset",
        "variant",
        "L",
        "S",
        "seed",
        "mse",
        "mae",
        "persistence_mse",
        "persistence_mae",
    ])?;
    w.write_record([
        cfg.dataset_name(),
        cfg.variant.to_string(),
        cfg.lookback.to_string(),
        cfg.horizon.to_string(),
        cfg.seed.to_string(),
        metrics.mse.to_string(),
        metrics.mae.to_string(),
        naive.mse.to_string(),
        naive.mae.to_string(),
    ])?;
    w.flush()?;
    Ok(())
}

/// One ablation cell applied to the base config.
#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Variant(Variant),
    DeltaFixed,
    Bank(WaveletKind),
}

impl Cell {
    pub fn parse(raw: &str) -> Result<Cell, CliError> {
        let key = raw.trim();
        if key.eq_ignore_ascii_case("delta-fixed") || key.eq_ignore_ascii_case("delta_fixed") {
            return Ok(Cell::DeltaFixed);
        }
        if let Ok(kind) = key.to_ascii_lowercase().parse::<WaveletKind>() {
            return Ok(Cell::Bank(kind));
        }
        key.parse::<Variant>()
            .map(Cell::Variant)
            .map_err(|_| CliError::Config(format!("unknown grid cell `{key}`")))
    }

    pub fn apply(&self, base: &RunConfig) -> RunConfig {
        let mut cfg = base.clone();
        match self {
            Cell::Variant(v) => cfg.variant = *v,
            Cell::DeltaFixed => cfg.delta_fixed = Some(1.0),
            Cell::Bank(k) => cfg.filter = *k,
        }
        cfg
    }

    pub fn label(&self) -> String {
        match self {
            Cell::Variant(v) => v.to_string(),
            Cell::DeltaFixed => "delta-fixed".into(),
            Cell::Bank(k) => k.to_string(),
        }
    }
}

pub fn ablate(grid: &str, args: &RunArgs) -> Result<(), CliError> {
    let (cfg, seeds) = run_plan(args)?;
    let cells: Vec<Cell> = grid
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(Cell::parse)
        .collect::<Result<_, _>>()?;
    if cells.is_empty() {
        println!("empty grid, nothing to run");
        return Ok(());
    }
    let data = prepare(&cfg)?;
    let dir = fresh_dir(Path::new(&cfg.out_dir), "ablate-", &cfg)?;
    write_json(&dir.join("config.json"), &cfg)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "cell",
        "variant",
        "filter",
        "delta",
        "mse",
        "mae",
        "param_count",
        "epoch_time_s",
        "seeds",
        "status",
    ])?;
    let mut reports = Vec::new();
    for cell in &cells {
        let cell_cfg = cell.apply(&cfg);
        let delta = cell_cfg
            .delta_fixed
            .map_or("learnable".to_string(), |d| format!("fixed({d})"));
        let mut mses = Vec::new();
        let mut maes = Vec::new();
        let mut times = Vec::new();
        let mut params = String::new();
        let mut status = "ok".to_string();
        for &seed in &seeds {
            match run_prepared(&with_seed(&cell_cfg, seed), &data) {
                Ok(out) => {
                    mses.push(out.report.mse);
                    maes.push(out.report.mae);
                    times.extend(out.report.epoch_time_s);
                    params = out.report.param_count.to_string();
                    reports.push((cell.label(), out.report));
                }
                Err(e) => {
                    warn!("cell {} seed {seed} failed: {e}", cell.label());
                    status = format!("error: reason={} {e}", e.reason());
                    break;
                }
            }
        }
        let fmt_mean = |v: &[f64]| {
            if v.is_empty() {
                String::new()
            } else {
                mean_std(v).0.to_string()
            }
        };
        w.write_record([
            cell.label(),
            cell_cfg.variant.to_string(),
            cell_cfg.filter.to_string(),
            delta,
            fmt_mean(&mses),
            fmt_mean(&maes),
            params,
            mean_time(&times).map(|t| t.to_string()).unwrap_or_default(),
            seeds.len().to_string(),
            status,
        ])?;
    }
    let table = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
    fs::write(dir.join("ablation.csv"), &table)?;
    write_json(&dir.join("details.json"), &reports)?;
    io::stdout().write_all(&table)?;
    println!("{}", dir.display());
    Ok(())
}

pub fn sweep(lengths: &str, args: &RunArgs) -> Result<(), CliError> {
    let (cfg, seeds) = run_plan(args)?;
    let lengths = parse_list::<usize>(lengths, "length")?;
    let data = prepare(&cfg)?;
    let dir = fresh_dir(Path::new(&cfg.out_dir), "sweep-", &cfg)?;
    write_json(&dir.join("config.json"), &cfg)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["L", "mse", "mae"])?;
    for &l in &lengths {
        let point = RunConfig {
            lookback: l,
            ..cfg.clone()
        };
        let mut mses = Vec::new();
        let mut maes = Vec::new();
        for &seed in &seeds {
            match run_prepared(&with_seed(&point, seed), &data) {
                Ok(out) => {
                    mses.push(out.report.mse);
                    maes.push(out.report.mae);
                }
                Err(e) => {
                    eprintln!("L={l}: reason={} {e}", e.reason());
                    break;
                }
            }
        }
        if mses.len() == seeds.len() {
            w.write_record([
                l.to_string(),
                mean_std(&mses).0.to_string(),
                mean_std(&maes).0.to_string(),
            ])?;
        } else {
            w.write_record([l.to_string(), String::new(), String::new()])?;
        }
    }
    let table = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
    fs::write(dir.join("sweep.csv"), &table)?;
    io::stdout().write_all(&table)?;
    Ok(())
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct BenchArgs {
    /// Comma-separated variants.
    #[arg(long, default_value = "B,S,M")]
    pub variants: String,
    #[arg(long, default_value_t = 720)]
    pub lookback: usize,
    #[arg(long, default_value_t = 96)]
    pub horizon: usize,
    #[arg(long, default_value_t = 321)]
    pub channels: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value = "haar")]
    pub filter: String,
    /// Training windows per timed epoch.
    #[arg(long, default_value_t = 256)]
    pub windows: usize,
    #[arg(long, default_value_t = 3)]
    pub timing_epochs: usize,
    #[arg(long, default_value_t = 100)]
    pub infer_calls: usize,
    /// Report counts only.
    #[arg(long)]
    pub no_timing: bool,
    /// Also write the CSV here, with the arguments alongside as JSON.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

struct Timing {
    epoch_s: Option<f64>,
    infer_ms: Option<f64>,
}

fn time_variant(cfg: &ModelConfig, args: &BenchArgs) -> Result<Timing, CliError> {
    let len = cfg.lookback + cfg.horizon + args.windows.max(1) - 1;
    let series = data::synth(SynthKind::SineMix, len, cfg.channels, 0)?;
    let windows = Windows::over(&series, cfg.lookback, cfg.horizon)?;
    let mut model = Model::init(cfg.clone(), 0)?;
    let train_cfg = TrainConfig {
        batch_size: args.batch_size,
        ..Default::default()
    };
    let mut state = AdamState::new(train_cfg.adam, model.params());
    let mut epochs = Vec::new();
    for epoch in 0..args.timing_epochs {
        let start = Instant::now();
        train_epoch(&mut model, &mut state, &windows, &train_cfg, epoch)?;
        epochs.push(start.elapsed().as_secs_f64());
    }
    let n = args.batch_size.min(windows.len());
    let probe = windows.gather(&windows.origins()[..n]);
    Ok(Timing {
        epoch_s: mean_time(&epochs),
        infer_ms: time_inference(&model, &probe, args.infer_calls)?,
    })
}

pub fn benchmark(args: &BenchArgs) -> Result<(), CliError> {
    let variants = parse_list::<Variant>(&args.variants, "variant")?;
    let filter: WaveletKind = args.filter.parse()?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "variant",
        "L",
        "S",
        "N",
        "param_count",
        "macs_per_sample",
        "macs_per_batch",
        "macs_g",
        "transform_macs_per_sample",
        "epoch_time_s",
        "infer_time_ms",
        "windows",
        "hardware",
    ])?;
    let hardware = hardware_note();
    for variant in variants {
        let mut cfg = ModelConfig::new(variant, args.lookback, args.horizon, args.channels);
        cfg.filter = filter;
        let params = count_params(&cfg)?.total();
        let macs = count_macs(&cfg, args.batch_size)?;
        let timing = if args.no_timing {
            Timing {
                epoch_s: None,
                infer_ms: None,
            }
        } else {
            time_variant(&cfg, args)?
        };
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        w.write_record([
            variant.to_string(),
            args.lookback.to_string(),
            args.horizon.to_string(),
            args.channels.to_string(),
            params.to_string(),
            macs.per_sample.to_string(),
            macs.per_batch.to_string(),
            format!("{:.3}", macs.per_batch as f64 / 1e9),
            macs.transform_per_sample.to_string(),
            opt(timing.epoch_s),
            opt(timing.infer_ms),
            if args.no_timing {
                String::new()
            } else {
                args.windows.to_string()
            },
            hardware.clone(),
        ])?;
    }
    let table = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
    io::stdout().write_all(&table)?;
    if let Some(path) = &args.output {
        write_with_config(path, &table, args)?;
    }
    Ok(())
}

/// Writes `content` to `path` and the producing arguments to `<path>.config.json`.
pub fn write_with_config<T: Serialize>(path: &Path, content: &[u8], config: &T) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, content)?;
    let mut sidecar = path.as_os_str().to_owned();
    sidecar.push(".config.json");
    write_json(Path::new(&sidecar), config)
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SynthArgs {
    /// sine_mix, trend_sine or noise_walk.
    #[arg(long, default_value = "sine_mix")]
    pub kind: String,
    #[arg(long, default_value_t = 4000)]
    pub length: usize,
    #[arg(long, default_value_t = 4)]
    pub channels: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output: PathBuf,
}

pub fn synth(args: &SynthArgs) -> Result<(), CliError> {
    let kind: SynthKind = args.kind.parse()?;
    let series = data::synth(kind, args.length, args.channels, args.seed)?;
    let mut buf = Vec::new();
    series.write_csv(&mut buf)?;
    write_with_config(&args.output, &buf, args)?;
    println!(
        "{} rows × {} channels -> {}",
        series.len(),
        series.channels(),
        args.output.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cells_parse() {
        assert_eq!(Cell::parse("HF").unwrap(), Cell::Variant(Variant::HF));
        assert_eq!(Cell::parse("delta-fixed").unwrap(), Cell::DeltaFixed);
        assert_eq!(Cell::parse("Sym4").unwrap(), Cell::Bank(WaveletKind::Sym4));
        assert!(Cell::parse("wavelet9").is_err());
        let cfg = Cell::DeltaFixed.apply(&RunConfig::default());
        assert_eq!(cfg.delta_fixed, Some(1.0));
    }

    #[test]
    fn summary_statistics() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }
}
