//! Band dumps with columns `channel,band,index,value`.
//!
//! Band labels are `d1 … dK` for the detail bands from finest to coarsest and
//! `aK` for the final approximation.

use std::collections::HashMap;
use std::path::PathBuf;

use clap::Args;
use ndarray::{Array2, ArrayD, Axis, IxDyn};
use serde::Serialize;
use wavets_core::data::{load_csv, CsvSchema, Series};
use wavets_core::wavelet::{dwt_multi, idwt_multi, BandPair, FilterBank};
use wavets_core::WaveletKind;

use crate::commands::write_with_config;
use crate::CliError;

#[derive(Args, Debug, Clone, Serialize)]
pub struct DecomposeArgs {
    /// Series CSV, or a band dump when `--reconstruct` is set.
    pub input: PathBuf,
    #[arg(long, default_value = "haar")]
    pub filter: String,
    #[arg(long, default_value_t = 1)]
    pub levels: usize,
    /// Rebuild the series from a band dump.
    #[arg(long)]
    pub reconstruct: bool,
    /// Drop leading rows so the length divides 2^levels.
    #[arg(long)]
    pub trim: bool,
    /// Defaults to stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

pub fn run(args: &DecomposeArgs) -> Result<(), CliError> {
    let kind: WaveletKind = args.filter.parse()?;
    let bank = FilterBank::new(kind);
    let bytes = if args.reconstruct {
        let series = reconstruct(args, &bank)?;
        let mut buf = Vec::new();
        series.write_csv(&mut buf)?;
        buf
    } else {
        decompose(args, &bank)?
    };
    match &args.output {
        Some(path) => write_with_config(path, &bytes, args),
        None => {
            use std::io::Write;
            std::io::stdout().write_all(&bytes)?;
            Ok(())
        }
    }
}

fn decompose(args: &DecomposeArgs, bank: &FilterBank) -> Result<Vec<u8>, CliError> {
    let series = load_csv(&args.input, &CsvSchema::default())?;
    let mut rows = series.values.t().to_owned();
    if args.trim && args.levels < usize::BITS as usize {
        let block = 1usize << args.levels;
        let keep = rows.ncols() / block * block;
        rows = rows.slice(ndarray::s![.., rows.ncols() - keep..]).to_owned();
    }
    let pyramid = dwt_multi(&rows, bank, args.levels)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["channel", "band", "index", "value"])?;
    for (c, name) in series.channel_names.iter().enumerate() {
        let deepest = pyramid.len();
        let mut emit = |label: String, band: &ArrayD<f64>| -> Result<(), CliError> {
            for (i, v) in band.index_axis(Axis(0), c).iter().enumerate() {
                w.write_record([name.as_str(), &label, &i.to_string(), &v.to_string()])?;
            }
            Ok(())
        };
        for (level, pair) in pyramid.iter().enumerate() {
            emit(format!("d{}", level + 1), &pair.detail)?;
        }
        emit(format!("a{deepest}"), &pyramid[deepest - 1].approx)?;
    }
    w.into_inner().map_err(|e| CliError::Data(e.to_string()))
}

#[derive(Default)]
struct ChannelBands {
    details: HashMap<usize, Vec<(usize, f64)>>,
    approx: Option<(usize, Vec<(usize, f64)>)>,
}

fn dense(mut entries: Vec<(usize, f64)>, what: &str) -> Result<Vec<f64>, CliError> {
    entries.sort_by_key(|e| e.0);
    if entries.iter().enumerate().any(|(i, e)| e.0 != i) {
        return Err(CliError::Data(format!("band {what} has missing or repeated indices")));
    }
    Ok(entries.into_iter().map(|e| e.1).collect())
}

fn reconstruct(args: &DecomposeArgs, bank: &FilterBank) -> Result<Series, CliError> {
    let mut reader =
        csv::Reader::from_path(&args.input).map_err(|e| CliError::Data(format!("{}: {e}", args.input.display())))?;
    let mut order: Vec<String> = Vec::new();
    let mut channels: HashMap<String, ChannelBands> = HashMap::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let bad = |m: &str| CliError::Data(format!("row {}: {m}", row + 2));
        if record.len() != 4 {
            return Err(bad("expected channel,band,index,value"));
        }
        let name = record[0].to_string();
        let index: usize = record[2].parse().map_err(|_| bad("index is not an integer"))?;
        let value: f64 = record[3].parse().map_err(|_| bad("value is not a number"))?;
        if !channels.contains_key(&name) {
            order.push(name.clone());
        }
        let entry = channels.entry(name).or_default();
        let band = &record[1];
        let level: usize = band
            .get(1..)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("band label must be dN or aN"))?;
        match band.as_bytes().first() {
            Some(b'd') => entry.details.entry(level).or_default().push((index, value)),
            Some(b'a') => match &mut entry.approx {
                Some((l, v)) if *l == level => v.push((index, value)),
                Some(_) => return Err(bad("approximation bands of different levels")),
                None => entry.approx = Some((level, vec![(index, value)])),
            },
            _ => return Err(bad("band label must be dN or aN")),
        }
    }
    if order.is_empty() {
        return Err(CliError::Data(format!("{}: no bands", args.input.display())));
    }

    // per level: (detail rows, approx rows for the deepest)
    let mut levels = 0;
    let mut details: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut approx: Vec<Vec<f64>> = Vec::new();
    for name in &order {
        let bands = channels.remove(name).expect("recorded channel");
        let (depth, a) = bands
            .approx
            .ok_or_else(|| CliError::Data(format!("channel {name} has no approximation band")))?;
        if levels == 0 {
            levels = depth;
            details = vec![Vec::new(); depth];
        } else if depth != levels {
            return Err(CliError::Data(format!(
                "channel {name} has {depth} levels, expected {levels}"
            )));
        }
        if bands.details.len() != depth {
            return Err(CliError::Data(format!(
                "channel {name} needs detail bands d1..d{depth}"
            )));
        }
        for (level, slot) in details.iter_mut().enumerate() {
            let entries = bands
                .details
                .get(&(level + 1))
                .cloned()
                .ok_or_else(|| CliError::Data(format!("channel {name} lacks d{}", level + 1)))?;
            slot.push(dense(entries, &format!("{name}/d{}", level + 1))?);
        }
        approx.push(dense(a, &format!("{name}/a{depth}"))?);
    }

    let stack = |rows: &[Vec<f64>]| -> Result<ArrayD<f64>, CliError> {
        let width = rows[0].len();
        if rows.iter().any(|r| r.len() != width) {
            return Err(CliError::Data("channels disagree on band length".into()));
        }
        let flat: Vec<f64> = rows.concat();
        ArrayD::from_shape_vec(IxDyn(&[rows.len(), width]), flat).map_err(|e| CliError::Data(e.to_string()))
    };
    let mut pyramid = Vec::with_capacity(levels);
    for (level, rows) in details.iter().enumerate() {
        let detail = stack(rows)?;
        let approx_level = if level + 1 == levels {
            stack(&approx)?
        } else {
            // placeholder; idwt_multi rebuilds shallower approximations itself
            ArrayD::zeros(detail.raw_dim())
        };
        let width = detail.shape()[1];
        pyramid.push(BandPair {
            approx: approx_level,
            detail,
            source_length: 2 * width,
            filter: bank.kind(),
        });
    }
    let rebuilt = idwt_multi(&pyramid, bank)?;
    let rows = rebuilt
        .into_dimensionality::<ndarray::Ix2>()
        .map_err(|e| CliError::Data(e.to_string()))?;
    let values: Array2<f64> = rows.t().to_owned();
    Ok(Series::new(values, order, "1h")?)
}
