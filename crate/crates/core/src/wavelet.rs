//! Orthogonal discrete wavelet transform over the last axis.
//!
//! Every bank is applied in correlation form with periodic extension:
//!
//! ```text
//! A[n] = Σ_k g[k] · x[(2n + k) mod L]
//! D[n] = Σ_k h[k] · x[(2n + k) mod L]
//! ```
//!
//! so both bands always have length `L / 2`. The high-pass filter is the
//! quadrature mirror of the low-pass one, `h[k] = (-1)^k · g[K-1-k]`, which
//! makes the transform orthonormal and `idwt` its exact adjoint.

use std::fmt;
use std::str::FromStr;

use ndarray::{ArrayBase, ArrayD, Data, Dimension, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Sym4 scaling filter, 8 taps, solved to double precision from the
/// orthonormality and vanishing-moment conditions.
const SYM4: [f64; 8] = [
    0.032_223_100_604_051_468,
    -0.012_603_967_262_031_304,
    -0.099_219_543_576_633_54,
    0.297_857_795_605_306_05,
    0.803_738_751_805_132_1,
    0.497_618_667_632_775,
    -0.029_635_527_646_002_492,
    -0.075_765_714_789_502_21,
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WaveletKind {
    Haar,
    D4,
    Sym4,
    Coif1,
}

impl WaveletKind {
    pub const ALL: [WaveletKind; 4] = [
        WaveletKind::Haar,
        WaveletKind::D4,
        WaveletKind::Sym4,
        WaveletKind::Coif1,
    ];

    pub fn name(self) -> &'static str {
        match self {
            WaveletKind::Haar => "haar",
            WaveletKind::D4 => "d4",
            WaveletKind::Sym4 => "sym4",
            WaveletKind::Coif1 => "coif1",
        }
    }

    /// Number of filter taps.
    pub fn taps(self) -> usize {
        match self {
            WaveletKind::Haar => 2,
            WaveletKind::D4 => 4,
            WaveletKind::Sym4 => 8,
            WaveletKind::Coif1 => 6,
        }
    }
}

impl fmt::Display for WaveletKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WaveletKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "haar" | "db1" => Ok(WaveletKind::Haar),
            "d4" | "db2" => Ok(WaveletKind::D4),
            "sym4" => Ok(WaveletKind::Sym4),
            "coif1" => Ok(WaveletKind::Coif1),
            other => Err(Error::InvalidConfig(format!("unknown wavelet `{other}`"))),
        }
    }
}

/// A fixed orthonormal two-channel filter bank.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterBank {
    kind: WaveletKind,
    low_pass: Vec<f64>,
    high_pass: Vec<f64>,
}

impl FilterBank {
    pub fn new(kind: WaveletKind) -> Self {
        let low_pass = match kind {
            WaveletKind::Haar => vec![std::f64::consts::FRAC_1_SQRT_2; 2],
            WaveletKind::D4 => {
                let s3 = 3f64.sqrt();
                let norm = 4.0 * SQRT2;
                vec![
                    (1.0 + s3) / norm,
                    (3.0 + s3) / norm,
                    (3.0 - s3) / norm,
                    (1.0 - s3) / norm,
                ]
            }
            WaveletKind::Sym4 => SYM4.to_vec(),
            WaveletKind::Coif1 => {
                let s7 = 7f64.sqrt();
                let norm = 16.0 * SQRT2;
                vec![
                    (1.0 - s7) / norm,
                    (5.0 + s7) / norm,
                    (14.0 + 2.0 * s7) / norm,
                    (14.0 - 2.0 * s7) / norm,
                    (1.0 - s7) / norm,
                    (-3.0 + s7) / norm,
                ]
            }
        };
        let k = low_pass.len();
        let high_pass = (0..k)
            .map(|i| {
                let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                sign * low_pass[k - 1 - i]
            })
            .collect();
        FilterBank {
            kind,
            low_pass,
            high_pass,
        }
    }

    pub fn kind(&self) -> WaveletKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.low_pass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.low_pass.is_empty()
    }

    pub fn low_pass(&self) -> &[f64] {
        &self.low_pass
    }

    pub fn high_pass(&self) -> &[f64] {
        &self.high_pass
    }

    pub fn filter(&self, band: Band) -> &[f64] {
        match band {
            Band::Approx => &self.low_pass,
            Band::Detail => &self.high_pass,
        }
    }

    /// Checks that a signal of length `len` can be transformed one level.
    pub fn check_length(&self, len: usize) -> Result<()> {
        if !len.is_multiple_of(2) {
            return Err(Error::OddLength(len));
        }
        if self.len() > len {
            return Err(Error::FilterTooLong {
                filter: self.len(),
                signal: len,
            });
        }
        Ok(())
    }
}

impl From<WaveletKind> for FilterBank {
    fn from(kind: WaveletKind) -> Self {
        FilterBank::new(kind)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Band {
    Approx,
    Detail,
}

/// Approximation and detail coefficients of one decomposition level.
#[derive(Clone, Debug, PartialEq)]
pub struct BandPair {
    pub approx: ArrayD<f64>,
    pub detail: ArrayD<f64>,
    pub source_length: usize,
    pub filter: WaveletKind,
}

/// Writes one band of a single row: `out[n] = Σ_k f[k] · x[(2n + k) mod L]`.
///
/// `x.len()` must be even and at least `filter.len()`; `out` has length `L / 2`.
pub fn analyze_band(x: &[f64], filter: &[f64], out: &mut [f64]) {
    let len = x.len();
    debug_assert_eq!(out.len() * 2, len);
    let k = filter.len();
    // Only the last few outputs wrap around.
    let direct = if len >= k { (len - k) / 2 + 1 } else { 0 };
    for (n, o) in out.iter_mut().enumerate().take(direct.min(len / 2)) {
        let seg = &x[2 * n..2 * n + k];
        *o = seg.iter().zip(filter).map(|(a, b)| a * b).sum();
    }
    for (n, o) in out.iter_mut().enumerate().skip(direct) {
        let mut acc = 0.0;
        for (j, f) in filter.iter().enumerate() {
            acc += f * x[(2 * n + j) % len];
        }
        *o = acc;
    }
}

/// Adjoint of [`analyze_band`]: `out[(2n + k) mod L] += f[k] · band[n]`.
pub fn synthesize_band(band: &[f64], filter: &[f64], out: &mut [f64]) {
    let len = out.len();
    debug_assert_eq!(band.len() * 2, len);
    for (n, &c) in band.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        for (j, f) in filter.iter().enumerate() {
            out[(2 * n + j) % len] += f * c;
        }
    }
}

/// Single-level transform of each last-axis row of `x`.
pub fn dwt<S, D>(x: &ArrayBase<S, D>, bank: &FilterBank) -> Result<BandPair>
where
    S: Data<Elem = f64>,
    D: Dimension,
{
    let shape = x.shape().to_vec();
    let len = *shape
        .last()
        .ok_or_else(|| Error::ShapeMismatch("cannot transform a 0-d array".into()))?;
    bank.check_length(len)?;
    let half = len / 2;
    let mut out_shape = shape.clone();
    *out_shape.last_mut().unwrap() = half;
    let rows = shape[..shape.len() - 1].iter().product::<usize>();

    let input = x.as_standard_layout();
    let input = input.as_slice().expect("standard layout is contiguous");
    let mut approx = vec![0.0; rows * half];
    let mut detail = vec![0.0; rows * half];
    for ((row, a), d) in input
        .chunks_exact(len)
        .zip(approx.chunks_exact_mut(half))
        .zip(detail.chunks_exact_mut(half))
    {
        analyze_band(row, bank.low_pass(), a);
        analyze_band(row, bank.high_pass(), d);
    }
    Ok(BandPair {
        approx: ArrayD::from_shape_vec(IxDyn(&out_shape), approx).unwrap(),
        detail: ArrayD::from_shape_vec(IxDyn(&out_shape), detail).unwrap(),
        source_length: len,
        filter: bank.kind(),
    })
}

/// Inverse of [`dwt`].
pub fn idwt(bands: &BandPair, bank: &FilterBank) -> Result<ArrayD<f64>> {
    if bands.approx.shape() != bands.detail.shape() {
        return Err(Error::ShapeMismatch(format!(
            "approx {:?} vs detail {:?}",
            bands.approx.shape(),
            bands.detail.shape()
        )));
    }
    if bands.filter != bank.kind() {
        return Err(Error::ShapeMismatch(format!(
            "bands were produced by {} but reconstructed with {}",
            bands.filter,
            bank.kind()
        )));
    }
    let shape = bands.approx.shape().to_vec();
    let half = *shape
        .last()
        .ok_or_else(|| Error::ShapeMismatch("cannot reconstruct a 0-d array".into()))?;
    let len = 2 * half;
    if bands.source_length != len {
        return Err(Error::ShapeMismatch(format!(
            "band length {half} does not match source length {}",
            bands.source_length
        )));
    }
    bank.check_length(len)?;
    let mut out_shape = shape.clone();
    *out_shape.last_mut().unwrap() = len;
    let rows = shape[..shape.len() - 1].iter().product::<usize>();

    let a = bands.approx.as_standard_layout();
    let d = bands.detail.as_standard_layout();
    let mut out = vec![0.0; rows * len];
    for ((row, a), d) in out
        .chunks_exact_mut(len)
        .zip(a.as_slice().unwrap().chunks_exact(half))
        .zip(d.as_slice().unwrap().chunks_exact(half))
    {
        synthesize_band(a, bank.low_pass(), row);
        synthesize_band(d, bank.high_pass(), row);
    }
    Ok(ArrayD::from_shape_vec(IxDyn(&out_shape), out).unwrap())
}

/// Multi-level decomposition; level `i + 1` splits the approximation of level `i`.
pub fn dwt_multi<S, D>(x: &ArrayBase<S, D>, bank: &FilterBank, levels: usize) -> Result<Vec<BandPair>>
where
    S: Data<Elem = f64>,
    D: Dimension,
{
    let len = x.shape().last().copied().unwrap_or(0);
    if levels == 0 {
        return Err(Error::InvalidConfig("levels must be positive".into()));
    }
    if levels >= usize::BITS as usize || len % (1usize << levels) != 0 {
        return Err(Error::DepthTooLarge { length: len, levels });
    }
    // the deepest split must still fit the filter
    if levels > 1 && (len >> (levels - 1)) < bank.len() {
        return Err(Error::DepthTooLarge { length: len, levels });
    }
    let mut out: Vec<BandPair> = Vec::with_capacity(levels);
    let first = dwt(x, bank)?;
    out.push(first);
    for _ in 1..levels {
        let next = dwt(&out.last().unwrap().approx, bank)?;
        out.push(next);
    }
    Ok(out)
}

/// Inverse of [`dwt_multi`].
pub fn idwt_multi(levels: &[BandPair], bank: &FilterBank) -> Result<ArrayD<f64>> {
    let (deepest, rest) = levels
        .split_last()
        .ok_or_else(|| Error::InvalidConfig("no decomposition levels".into()))?;
    let mut current = idwt(deepest, bank)?;
    for level in rest.iter().rev() {
        let pair = BandPair {
            approx: current,
            detail: level.detail.clone(),
            source_length: level.source_length,
            filter: level.filter,
        };
        current = idwt(&pair, bank)?;
    }
    Ok(current)
}
