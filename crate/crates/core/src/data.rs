//! Benchmark ingestion, chronological splits, sliding windows, dataset-level
//! standardization and synthetic fixtures.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A multivariate series stored as a `T×N` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub values: Array2<f64>,
    pub channel_names: Vec<String>,
    pub timestep: String,
    /// Rows discarded at load time because they held missing values.
    pub dropped_rows: usize,
}

impl Series {
    pub fn new(values: Array2<f64>, channel_names: Vec<String>, timestep: impl Into<String>) -> Result<Self> {
        let (t, n) = values.dim();
        if t == 0 || n == 0 {
            return Err(Error::EmptyFile(format!("series of shape {t}×{n}")));
        }
        if channel_names.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "{} channel names for {n} channels",
                channel_names.len()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("series values"));
        }
        Ok(Series {
            values,
            channel_names,
            timestep: timestep.into(),
            dropped_rows: 0,
        })
    }

    /// Series with generated names `ch0, ch1, …`.
    pub fn from_values(values: Array2<f64>) -> Result<Self> {
        let names = (0..values.ncols()).map(|i| format!("ch{i}")).collect();
        Series::new(values, names, "unknown")
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn channels(&self) -> usize {
        self.values.ncols()
    }

    pub fn rows(&self, start: usize, end: usize) -> ArrayView2<'_, f64> {
        self.values.slice(s![start..end, ..])
    }

    /// Writes the series with a leading `date` column of hourly timestamps.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["date".to_string()];
        header.extend(self.channel_names.iter().cloned());
        w.write_record(&header)?;
        let start = chrono::NaiveDate::from_ymd_opt(2016, 7, 1)
            .and_then(|d| d.and_hms_opt(0, 0, 0))
            .expect("valid date");
        for (i, row) in self.values.outer_iter().enumerate() {
            let stamp = start + chrono::Duration::hours(i as i64);
            let mut rec = vec![stamp.format("%Y-%m-%d %H:%M:%S").to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// How to interpret a CSV's first column.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CsvSchema {
    /// `None` detects a timestamp column from the header name or its contents.
    pub timestamp_column: Option<bool>,
    pub timestep: Option<String>,
}

const TIMESTAMP_HEADERS: [&str; 4] = ["date", "time", "timestamp", "datetime"];

fn is_missing(field: &str) -> bool {
    matches!(
        field.trim().to_ascii_lowercase().as_str(),
        "" | "nan" | "na" | "null" | "none"
    )
}

pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Series> {
    let file = std::fs::File::open(path).map_err(|source| Error::Open {
        path: path.display().to_string(),
        source,
    })?;
    let mut series = read_csv(file, schema).map_err(|e| match e {
        Error::EmptyFile(_) => Error::EmptyFile(path.display().to_string()),
        other => other,
    })?;
    if let Some(stem) = path.file_stem() {
        log::debug!(
            "loaded {} as {}×{}",
            stem.to_string_lossy(),
            series.len(),
            series.channels()
        );
    }
    if series.timestep == "unknown" {
        series.timestep = schema.timestep.clone().unwrap_or_else(|| "unknown".into());
    }
    Ok(series)
}

/// Parses benchmark-style CSV text: a header row, an optional leading
/// timestamp column, numeric channel columns.
pub fn read_csv<R: Read>(input: R, schema: &CsvSchema) -> Result<Series> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = reader.headers()?.clone();
    if header.is_empty() {
        return Err(Error::EmptyFile("no header row".into()));
    }
    let records: Vec<csv::StringRecord> = reader.records().collect::<std::result::Result<_, _>>()?;
    if records.is_empty() {
        return Err(Error::EmptyFile("no data rows".into()));
    }
    let skip_first = match schema.timestamp_column {
        Some(v) => v,
        None => {
            let name = header.get(0).unwrap_or("").trim().to_ascii_lowercase();
            let first = records[0].get(0).unwrap_or("");
            TIMESTAMP_HEADERS.contains(&name.as_str()) || (!is_missing(first) && first.trim().parse::<f64>().is_err())
        }
    };
    let offset = usize::from(skip_first);
    let channels = header.len().saturating_sub(offset);
    if channels == 0 {
        return Err(Error::EmptyFile("no numeric columns".into()));
    }
    let names: Vec<String> = header.iter().skip(offset).map(|s| s.trim().to_string()).collect();

    let mut data = Vec::with_capacity(records.len() * channels);
    let mut dropped = 0;
    'rows: for (i, rec) in records.iter().enumerate() {
        // header is row 1
        let row_no = i + 2;
        if rec.len() != header.len() {
            return Err(Error::Parse {
                row: row_no,
                column: rec.len().min(header.len()) + 1,
                message: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        let mut row = Vec::with_capacity(channels);
        for (j, field) in rec.iter().enumerate().skip(offset) {
            if is_missing(field) {
                dropped += 1;
                continue 'rows;
            }
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                row: row_no,
                column: j + 1,
                message: format!("`{field}` is not a number"),
            })?;
            if !v.is_finite() {
                dropped += 1;
                continue 'rows;
            }
            row.push(v);
        }
        data.extend(row);
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} rows with missing values");
    }
    let t = data.len() / channels;
    if t == 0 {
        return Err(Error::EmptyFile("every row had missing values".into()));
    }
    let values = Array2::from_shape_vec((t, channels), data).expect("row-major buffer");
    let mut series = Series::new(
        values,
        names,
        schema.timestep.clone().unwrap_or_else(|| "unknown".into()),
    )?;
    series.dropped_rows = dropped;
    Ok(series)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitScheme {
    /// 70% train, 20% test, remainder validation.
    Ratio,
    /// 12/4/4 months of hourly rows.
    EttHours,
    /// 12/4/4 months of 15-minute rows.
    EttMinutes,
}

impl SplitScheme {
    /// ETT files get their month-based boundaries, everything else the ratio split.
    pub fn detect(path: &Path) -> Self {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().to_ascii_lowercase())
            .unwrap_or_default();
        if name.starts_with("etth") {
            SplitScheme::EttHours
        } else if name.starts_with("ettm") {
            SplitScheme::EttMinutes
        } else {
            SplitScheme::Ratio
        }
    }
}

impl FromStr for SplitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ratio" => Ok(SplitScheme::Ratio),
            "ett_hours" => Ok(SplitScheme::EttHours),
            "ett_minutes" => Ok(SplitScheme::EttMinutes),
            other => Err(Error::InvalidConfig(format!("unknown split scheme `{other}`"))),
        }
    }
}

impl fmt::Display for SplitScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitScheme::Ratio => "ratio",
            SplitScheme::EttHours => "ett_hours",
            SplitScheme::EttMinutes => "ett_minutes",
        })
    }
}

/// Row boundaries `[0, train_end)`, `[train_end, val_end)`, `[val_end, test_end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_end: usize,
    pub val_end: usize,
    pub test_end: usize,
}

impl SplitSpec {
    pub fn new(scheme: SplitScheme, len: usize) -> Result<Self> {
        let spec = match scheme {
            SplitScheme::Ratio => {
                let train = len * 7 / 10;
                let test = len * 2 / 10;
                SplitSpec {
                    train_end: train,
                    val_end: len - test,
                    test_end: len,
                }
            }
            SplitScheme::EttHours => {
                let month = 30 * 24;
                SplitSpec {
                    train_end: 12 * month,
                    val_end: 16 * month,
                    test_end: 20 * month,
                }
            }
            SplitScheme::EttMinutes => {
                let month = 30 * 24 * 4;
                SplitSpec {
                    train_end: 12 * month,
                    val_end: 16 * month,
                    test_end: 20 * month,
                }
            }
        };
        spec.validate(len)?;
        Ok(spec)
    }

    pub fn validate(&self, len: usize) -> Result<()> {
        if self.test_end > len {
            return Err(Error::SpecOutOfRange {
                boundary: self.test_end,
                length: len,
            });
        }
        if !(0 < self.train_end && self.train_end < self.val_end && self.val_end < self.test_end) {
            return Err(Error::InvalidConfig(format!(
                "split boundaries must increase: {self:?}"
            )));
        }
        Ok(())
    }
}

/// A contiguous row range of a parent series. Windows cut from it keep their
/// targets inside the range but may take lookback context from earlier rows.
#[derive(Clone, Copy, Debug)]
pub struct SeriesView<'a> {
    pub series: &'a Series,
    pub start: usize,
    pub end: usize,
}

impl<'a> SeriesView<'a> {
    pub fn whole(series: &'a Series) -> Self {
        SeriesView {
            series,
            start: 0,
            end: series.len(),
        }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Splits<'a> {
    pub train: SeriesView<'a>,
    pub val: SeriesView<'a>,
    pub test: SeriesView<'a>,
}

pub fn split<'a>(series: &'a Series, spec: &SplitSpec) -> Result<Splits<'a>> {
    spec.validate(series.len())?;
    let view = |start, end| SeriesView { series, start, end };
    Ok(Splits {
        train: view(0, spec.train_end),
        val: view(spec.train_end, spec.val_end),
        test: view(spec.val_end, spec.test_end),
    })
}

/// Per-channel z-score fitted on training rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Channels whose training variance was zero; their σ is set to 1.
    pub degenerate: Vec<usize>,
}

impl Standardizer {
    pub fn fit(rows: ArrayView2<f64>) -> Self {
        let mean = rows.mean_axis(Axis(0)).expect("non-empty rows");
        let std = rows.std_axis(Axis(0), 0.0);
        let mut degenerate = Vec::new();
        let std = std
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                if s > 0.0 && s.is_finite() {
                    s
                } else {
                    degenerate.push(i);
                    1.0
                }
            })
            .collect();
        if !degenerate.is_empty() {
            log::warn!("channels {degenerate:?} are constant on the training split");
        }
        Standardizer {
            mean: mean.to_vec(),
            std,
            degenerate,
        }
    }

    pub fn transform(&self, series: &Series) -> Series {
        let mut out = series.clone();
        for mut row in out.values.outer_iter_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.std[j];
            }
        }
        out
    }

    pub fn inverse(&self, series: &Series) -> Series {
        let mut out = series.clone();
        for mut row in out.values.outer_iter_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = *v * self.std[j] + self.mean[j];
            }
        }
        out
    }
}

/// Fits on `train` rows of `series` and returns the whole series transformed.
pub fn standardize(series: &Series, train: &SeriesView<'_>) -> (Series, Standardizer) {
    let scaler = Standardizer::fit(series.rows(train.start, train.end));
    (scaler.transform(series), scaler)
}

/// Paired lookback/horizon tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowBatch {
    /// `B×L×N`
    pub x: Array3<f64>,
    /// `B×S×N`
    pub y: Array3<f64>,
    /// Row index of each window's first lookback step.
    pub origins: Vec<usize>,
}

impl WindowBatch {
    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }
}

/// All `(lookback, horizon)` windows of a view.
#[derive(Clone, Debug)]
pub struct Windows<'a> {
    series: &'a Series,
    lookback: usize,
    horizon: usize,
    origins: Vec<usize>,
}

impl<'a> Windows<'a> {
    pub fn new(view: SeriesView<'a>, lookback: usize, horizon: usize, stride: usize) -> Result<Self> {
        if lookback == 0 || horizon == 0 || stride == 0 {
            return Err(Error::InvalidConfig(
                "lookback, horizon and stride must be positive".into(),
            ));
        }
        let first = view.start.max(lookback) - lookback;
        let needed = lookback + horizon;
        if view.end < first + needed {
            return Err(Error::SeriesTooShort {
                length: view.end - first,
                needed,
            });
        }
        let last = view.end - needed;
        let origins = (first..=last).step_by(stride).collect();
        Ok(Windows {
            series: view.series,
            lookback,
            horizon,
            origins,
        })
    }

    /// Windows over an entire series: exactly `T − L − S + 1` at stride 1.
    pub fn over(series: &'a Series, lookback: usize, horizon: usize) -> Result<Self> {
        Windows::new(SeriesView::whole(series), lookback, horizon, 1)
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    pub fn origins(&self) -> &[usize] {
        &self.origins
    }

    pub fn lookback(&self) -> usize {
        self.lookback
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Materializes the windows starting at the given origins.
    pub fn gather(&self, origins: &[usize]) -> WindowBatch {
        let n = self.series.channels();
        let (l, h) = (self.lookback, self.horizon);
        let mut x = Array3::zeros((origins.len(), l, n));
        let mut y = Array3::zeros((origins.len(), h, n));
        for (b, &o) in origins.iter().enumerate() {
            x.slice_mut(s![b, .., ..]).assign(&self.series.rows(o, o + l));
            y.slice_mut(s![b, .., ..]).assign(&self.series.rows(o + l, o + l + h));
        }
        WindowBatch {
            x,
            y,
            origins: origins.to_vec(),
        }
    }

    /// Batches in chronological order, or shuffled when a seed is given.
    pub fn batches(&self, batch_size: usize, shuffle: Option<u64>) -> impl Iterator<Item = WindowBatch> + '_ {
        let mut order = self.origins.clone();
        if let Some(seed) = shuffle {
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        }
        let batch_size = batch_size.max(1);
        let chunks: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
        chunks.into_iter().map(move |c| self.gather(&c))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    SineMix,
    TrendSine,
    NoiseWalk,
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sine_mix" => Ok(SynthKind::SineMix),
            "trend_sine" => Ok(SynthKind::TrendSine),
            "noise_walk" => Ok(SynthKind::NoiseWalk),
            other => Err(Error::InvalidConfig(format!("unknown synthetic kind `{other}`"))),
        }
    }
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SynthKind::SineMix => "sine_mix",
            SynthKind::TrendSine => "trend_sine",
            SynthKind::NoiseWalk => "noise_walk",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SineComponent {
    pub period: f64,
    pub amplitude: f64,
    pub phase: f64,
}

/// Generating parameters of a synthetic series, per channel.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct SynthMeta {
    pub components: Vec<Vec<SineComponent>>,
    pub slopes: Vec<f64>,
}

/// Observation noise standard deviation of the periodic generators.
pub const SYNTH_NOISE: f64 = 0.1;

// Period bands in steps; draws within them are incommensurate almost surely.
const PERIOD_BANDS: [(f64, f64); 3] = [(8.0, 16.0), (20.0, 40.0), (50.0, 100.0)];

pub fn synth(kind: SynthKind, len: usize, channels: usize, seed: u64) -> Result<Series> {
    synth_with_meta(kind, len, channels, seed).map(|(s, _)| s)
}

pub fn synth_with_meta(kind: SynthKind, len: usize, channels: usize, seed: u64) -> Result<(Series, SynthMeta)> {
    if len == 0 || channels == 0 {
        return Err(Error::InvalidConfig(
            "synthetic series needs positive length and channels".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, SYNTH_NOISE).expect("valid sigma");
    let mut values = Array2::zeros((len, channels));
    let mut meta = SynthMeta::default();
    let tau = std::f64::consts::TAU;
    match kind {
        SynthKind::SineMix => {
            for c in 0..channels {
                let comps: Vec<SineComponent> = PERIOD_BANDS
                    .iter()
                    .map(|&(lo, hi)| SineComponent {
                        period: rng.random_range(lo..hi),
                        amplitude: rng.random_range(0.5..1.5),
                        phase: rng.random_range(0.0..tau),
                    })
                    .collect();
                for t in 0..len {
                    let clean: f64 = comps
                        .iter()
                        .map(|k| k.amplitude * (tau * t as f64 / k.period + k.phase).sin())
                        .sum();
                    values[[t, c]] = clean + noise.sample(&mut rng);
                }
                meta.components.push(comps);
            }
        }
        SynthKind::TrendSine => {
            for c in 0..channels {
                let comp = SineComponent {
                    period: rng.random_range(20.0..40.0),
                    amplitude: rng.random_range(0.5..1.5),
                    phase: rng.random_range(0.0..tau),
                };
                let slope = rng.random_range(0.005..0.02);
                for t in 0..len {
                    let tf = t as f64;
                    values[[t, c]] = slope * tf
                        + comp.amplitude * (tau * tf / comp.period + comp.phase).sin()
                        + noise.sample(&mut rng);
                }
                meta.components.push(vec![comp]);
                meta.slopes.push(slope);
            }
        }
        SynthKind::NoiseWalk => {
            let step = Normal::new(0.0, 1.0).expect("valid sigma");
            for c in 0..channels {
                let mut level = 0.0;
                for t in 0..len {
                    level += step.sample(&mut rng);
                    values[[t, c]] = level;
                }
            }
        }
    }
    let mut series = Series::from_values(values)?;
    series.timestep = "1h".into();
    Ok((series, meta))
}

/// Per-channel column as an owned vector.
pub fn column(series: &Series, channel: usize) -> Array1<f64> {
    series.values.column(channel).to_owned()
}
