//! The forecaster family assembled from instance normalization, a one-level
//! wavelet split, per-band heads and (for the multi-channel variant) a
//! mixture-of-experts head.
//!
//! Channels share every weight: a `B×L×N` batch is handled as `B·N`
//! independent rows of length `L`, row `b·N + n` holding channel `n`.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, Array3, ArrayView3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::WindowBatch;
use crate::error::{Error, Result};
use crate::grad::{flatten_rows, BoundParams, ParamStore, Tape, Var};
use crate::moe::{self, MoEConfig};
use crate::revin::{instance_stats, REVIN_EPS};
use crate::wavelet::{Band, FilterBank, WaveletKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Linear heads on both bands fused with a learnable weight on the detail head.
    B,
    /// Approximation head only.
    S,
    /// Mixture-of-experts on the approximation band plus a linear detail head.
    M,
    /// Heads predict wavelet coefficients; the inverse transform assembles the horizon.
    I,
    /// Ablation keeping only the approximation head.
    LF,
    /// Ablation keeping only the detail head.
    HF,
}

impl Variant {
    pub const ALL: [Variant; 6] = [Variant::B, Variant::S, Variant::M, Variant::I, Variant::LF, Variant::HF];

    pub fn name(self) -> &'static str {
        match self {
            Variant::B => "B",
            Variant::S => "S",
            Variant::M => "M",
            Variant::I => "I",
            Variant::LF => "LF",
            Variant::HF => "HF",
        }
    }

    fn has_lf_head(self) -> bool {
        !matches!(self, Variant::HF | Variant::M)
    }

    fn has_hf_head(self) -> bool {
        matches!(self, Variant::B | Variant::M | Variant::I | Variant::HF)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_uppercase();
        let key = key.strip_prefix("WAVETS-").unwrap_or(&key);
        match key {
            "B" => Ok(Variant::B),
            "S" => Ok(Variant::S),
            "M" => Ok(Variant::M),
            "I" => Ok(Variant::I),
            "LF" => Ok(Variant::LF),
            "HF" => Ok(Variant::HF),
            _ => Err(Error::InvalidConfig(format!("unknown variant `{s}`"))),
        }
    }
}

/// How the detail-head weight δ is handled.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaMode {
    /// Trained, initialized to 1.
    Learnable,
    /// Pinned to the given value.
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub lookback: usize,
    pub horizon: usize,
    pub channels: usize,
    pub filter: WaveletKind,
    pub delta: DeltaMode,
    /// One δ per channel instead of a single scalar.
    pub delta_per_channel: bool,
    pub moe: Option<MoEConfig>,
    pub revin_affine: bool,
    /// Replaces the approximation head's single linear map with a ReLU MLP.
    pub lf_hidden: Option<usize>,
}

impl ModelConfig {
    pub fn new(variant: Variant, lookback: usize, horizon: usize, channels: usize) -> Self {
        ModelConfig {
            variant,
            lookback,
            horizon,
            channels,
            filter: WaveletKind::Haar,
            delta: DeltaMode::Learnable,
            delta_per_channel: false,
            moe: (variant == Variant::M).then(MoEConfig::default),
            revin_affine: true,
            lf_hidden: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let taps = self.filter.taps();
        if !self.lookback.is_multiple_of(2) || self.lookback < 2 {
            return bad(format!("lookback {} must be even and at least 2", self.lookback));
        }
        if self.lookback < taps {
            return bad(format!(
                "lookback {} is shorter than the {} filter",
                self.lookback, self.filter
            ));
        }
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if self.channels == 0 {
            return bad("channels must be at least 1".into());
        }
        if self.variant == Variant::I && (!self.horizon.is_multiple_of(2) || self.horizon < taps) {
            return bad(format!(
                "variant I needs an even horizon of at least {taps}, got {}",
                self.horizon
            ));
        }
        match (self.variant, &self.moe) {
            (Variant::M, None) => return bad("variant M requires a mixture-of-experts config".into()),
            (Variant::M, Some(m)) => m.validate()?,
            (v, Some(_)) => return bad(format!("variant {v} does not take a mixture-of-experts config")),
            _ => {}
        }
        if self.lf_hidden == Some(0) {
            return bad("lf_hidden must be positive when set".into());
        }
        if let DeltaMode::Fixed(v) = self.delta {
            if !v.is_finite() {
                return bad("fixed delta must be finite".into());
            }
        }
        Ok(())
    }

    pub fn half(&self) -> usize {
        self.lookback / 2
    }

    /// Width of each head's output: `S/2` coefficients for variant I, `S` otherwise.
    pub fn head_out(&self) -> usize {
        if self.variant == Variant::I {
            self.horizon / 2
        } else {
            self.horizon
        }
    }

    /// Whether the detail head is weighted by δ.
    pub fn uses_delta(&self) -> bool {
        self.variant.has_hf_head()
    }

    fn delta_width(&self) -> usize {
        if self.delta_per_channel {
            self.channels
        } else {
            1
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// `U(−1/√fan_in, 1/√fan_in)`
    Uniform,
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: (usize, usize),
    pub init: Init,
}

fn spec(name: impl Into<String>, shape: (usize, usize), init: Init) -> ParamSpec {
    ParamSpec {
        name: name.into(),
        shape,
        init,
    }
}

/// Every learnable tensor a configuration owns, in initialization order.
pub fn param_layout(cfg: &ModelConfig) -> Result<Vec<ParamSpec>> {
    cfg.validate()?;
    let (d, out, n) = (cfg.half(), cfg.head_out(), cfg.channels);
    let mut specs = Vec::new();
    if cfg.revin_affine {
        specs.push(spec("revin.gamma", (1, n), Init::Ones));
        specs.push(spec("revin.beta", (1, n), Init::Zeros));
    }
    if cfg.variant.has_lf_head() {
        match cfg.lf_hidden {
            Some(h) => {
                specs.push(spec("lf.w_h", (d, h), Init::Uniform));
                specs.push(spec("lf.b_h", (1, h), Init::Zeros));
                specs.push(spec("lf.w", (h, out), Init::Uniform));
            }
            None => specs.push(spec("lf.w", (d, out), Init::Uniform)),
        }
        specs.push(spec("lf.b", (1, out), Init::Zeros));
    }
    if let Some(m) = &cfg.moe {
        for (name, shape, is_weight) in moe::layout(m, d, out) {
            specs.push(spec(name, shape, if is_weight { Init::Uniform } else { Init::Zeros }));
        }
    }
    if cfg.variant.has_hf_head() {
        specs.push(spec("hf.w", (d, out), Init::Uniform));
        specs.push(spec("hf.b", (1, out), Init::Zeros));
    }
    if cfg.uses_delta() && cfg.delta == DeltaMode::Learnable {
        specs.push(spec("delta", (1, cfg.delta_width()), Init::Ones));
    }
    Ok(specs)
}

pub fn uniform_init<R: Rng>(shape: (usize, usize), rng: &mut R) -> Array2<f64> {
    let bound = 1.0 / (shape.0.max(1) as f64).sqrt();
    Array2::from_shape_fn(shape, |_| rng.random_range(-bound..bound))
}

/// Seeded initial parameters.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ParamStore> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for p in param_layout(cfg)? {
        let value = match p.init {
            Init::Uniform => uniform_init(p.shape, &mut rng),
            Init::Zeros => Array2::zeros(p.shape),
            Init::Ones => Array2::ones(p.shape),
        };
        store.insert(p.name, value);
    }
    Ok(store)
}

/// Checks that `params` holds exactly the tensors `cfg` expects.
pub fn check_params(cfg: &ModelConfig, params: &ParamStore) -> Result<()> {
    let layout = param_layout(cfg)?;
    if layout.len() != params.len() {
        return Err(Error::ConfigMismatch(format!(
            "expected {} parameter tensors, found {}",
            layout.len(),
            params.len()
        )));
    }
    for p in &layout {
        let value = params.require(&p.name)?;
        if value.dim() != p.shape {
            return Err(Error::ConfigMismatch(format!(
                "`{}` has shape {:?}, expected {:?}",
                p.name,
                value.dim(),
                p.shape
            )));
        }
    }
    Ok(())
}

/// Per-row lookback statistics used to undo the normalization.
struct RowStats {
    mean: Array1<f64>,
    std: Array1<f64>,
}

/// Normalized lookback rows `(B·N)×L` plus their statistics.
fn normalized_rows(cfg: &ModelConfig, x: ArrayView3<f64>) -> Result<(Array2<f64>, RowStats)> {
    let (_, l, n) = x.dim();
    if l != cfg.lookback || n != cfg.channels {
        return Err(Error::ShapeMismatch(format!(
            "input {:?} does not match lookback {} × channels {}",
            x.shape(),
            cfg.lookback,
            cfg.channels
        )));
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("model input"));
    }
    let (mean, std) = instance_stats(x, REVIN_EPS)?;
    let mut rows = flatten_rows(x.permuted_axes([0, 2, 1]));
    let mean = mean.into_shape_with_order(rows.nrows()).expect("B·N means");
    let std = std.into_shape_with_order(rows.nrows()).expect("B·N stds");
    for ((mut row, &m), &s) in rows.outer_iter_mut().zip(&mean).zip(&std) {
        row.mapv_inplace(|v| (v - m) / s);
    }
    Ok((rows, RowStats { mean, std }))
}

struct Recorded {
    output: Var,
    gate: Option<Var>,
    approx: Option<Var>,
    stats: RowStats,
}

fn lf_head(tape: &mut Tape, bound: &BoundParams, cfg: &ModelConfig, x: Var) -> Result<Var> {
    let hidden = match cfg.lf_hidden {
        Some(_) => {
            let pre = tape.linear(x, bound.var("lf.w_h")?, Some(bound.var("lf.b_h")?))?;
            tape.relu(pre)?
        }
        None => x,
    };
    tape.linear(hidden, bound.var("lf.w")?, Some(bound.var("lf.b")?))
}

fn record(tape: &mut Tape, bound: &BoundParams, cfg: &ModelConfig, x: ArrayView3<f64>) -> Result<Recorded> {
    let (rows, stats) = normalized_rows(cfg, x)?;
    let mut z = tape.input(rows);
    let affine = if cfg.revin_affine {
        Some((bound.var("revin.gamma")?, bound.var("revin.beta")?))
    } else {
        None
    };
    if let Some((g, b)) = affine {
        z = tape.channel_affine(z, g, b)?;
    }

    let bank = FilterBank::new(cfg.filter);
    let variant = cfg.variant;
    let needs_approx = variant != Variant::HF;
    let approx = if needs_approx {
        Some(tape.wavelet_band(z, &bank, Band::Approx)?)
    } else {
        None
    };
    let detail = if variant.has_hf_head() {
        Some(tape.wavelet_band(z, &bank, Band::Detail)?)
    } else {
        None
    };

    let mut gate = None;
    let y_a = match variant {
        Variant::HF => None,
        Variant::M => {
            let (out, g) = moe::moe_on_tape(tape, bound, approx.expect("approx band"))?;
            gate = Some(g);
            Some(out)
        }
        _ => Some(lf_head(tape, bound, cfg, approx.expect("approx band"))?),
    };
    let y_d = match detail {
        Some(d) => {
            let head = tape.linear(d, bound.var("hf.w")?, Some(bound.var("hf.b")?))?;
            let delta = match cfg.delta {
                DeltaMode::Learnable => bound.var("delta")?,
                DeltaMode::Fixed(v) => tape.input(Array2::from_elem((1, cfg.delta_width()), v)),
            };
            Some(tape.scale(head, delta)?)
        }
        None => None,
    };

    let mut y = match (variant, y_a, y_d) {
        (Variant::I, Some(a), Some(d)) => tape.inverse_wavelet(a, d, &bank)?,
        (_, Some(a), Some(d)) => tape.add(a, d)?,
        (_, Some(a), None) => a,
        (_, None, Some(d)) => d,
        (_, None, None) => unreachable!("every variant has a head"),
    };

    if let Some((g, b)) = affine {
        y = tape.channel_affine_inverse(y, g, b)?;
    }
    let output = tape.row_affine(y, stats.std.clone(), &stats.mean)?;
    Ok(Recorded {
        output,
        gate,
        approx,
        stats,
    })
}

/// `(B·N)×S` rows back to `B×S×N`.
fn rows_to_horizon(rows: &Array2<f64>, batch: usize, channels: usize) -> Array3<f64> {
    let s = rows.ncols();
    let cube = rows
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((batch, channels, s))
        .expect("B·N rows");
    cube.permuted_axes([0, 2, 1]).as_standard_layout().into_owned()
}

fn horizon_to_rows(y: ArrayView3<f64>) -> Array2<f64> {
    flatten_rows(y.permuted_axes([0, 2, 1]))
}

/// Forecast `B×S×N` for a lookback batch `B×L×N`.
pub fn forward(cfg: &ModelConfig, params: &ParamStore, x: ArrayView3<f64>) -> Result<Array3<f64>> {
    check_params(cfg, params)?;
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let rec = record(&mut tape, &bound, cfg, x)?;
    Ok(rows_to_horizon(tape.value(rec.output), x.len_of(Axis(0)), cfg.channels))
}

/// Mean squared error of the forecast and its gradient for every parameter,
/// aligned with `params` order.
pub fn loss_and_grads(cfg: &ModelConfig, params: &ParamStore, batch: &WindowBatch) -> Result<(f64, Vec<Array2<f64>>)> {
    check_params(cfg, params)?;
    if batch.y.dim() != (batch.x.len_of(Axis(0)), cfg.horizon, cfg.channels) {
        return Err(Error::ShapeMismatch(format!(
            "target {:?} does not match horizon {} × channels {}",
            batch.y.shape(),
            cfg.horizon,
            cfg.channels
        )));
    }
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let rec = record(&mut tape, &bound, cfg, batch.x.view())?;
    let loss = tape.mse_loss(rec.output, horizon_to_rows(batch.y.view()))?;
    let value = tape.value(loss)[[0, 0]];
    let grads = tape.backward(loss)?;
    Ok((value, params.collect_grads(&bound, &grads)))
}

/// A configuration with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
}

impl Model {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = init_params(&config, seed)?;
        Ok(Model { config, params })
    }

    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        check_params(&config, &params)?;
        Ok(Model { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn forward(&self, x: ArrayView3<f64>) -> Result<Array3<f64>> {
        forward(&self.config, &self.params, x)
    }

    pub fn loss_and_grads(&self, batch: &WindowBatch) -> Result<(f64, Vec<Array2<f64>>)> {
        loss_and_grads(&self.config, &self.params, batch)
    }

    /// Post-normalization approximation band `B×N×(L/2)`, the gate's input.
    pub fn approx_band(&self, x: ArrayView3<f64>) -> Result<Array3<f64>> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let rec = record(&mut tape, &bound, &self.config, x)?;
        let _ = &rec.stats;
        let approx = rec.approx.ok_or_else(|| {
            Error::InvalidConfig(format!("variant {} has no approximation band", self.config.variant))
        })?;
        let rows = tape.value(approx).clone();
        crate::grad::unflatten_rows(rows, x.len_of(Axis(0)))
    }

    /// Gate probabilities `B×N×E`; variant M only.
    pub fn gate_probs(&self, x: ArrayView3<f64>) -> Result<Array3<f64>> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let rec = record(&mut tape, &bound, &self.config, x)?;
        let gate = rec
            .gate
            .ok_or_else(|| Error::InvalidConfig(format!("variant {} has no gate", self.config.variant)))?;
        crate::grad::unflatten_rows(tape.value(gate).clone(), x.len_of(Axis(0)))
    }

    pub fn gate_report(&self, x: ArrayView3<f64>) -> Result<moe::GateReport> {
        let probs = self.gate_probs(x)?;
        moe::GateReport::from_probs(probs.view())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array};

    fn random_x(b: usize, l: usize, n: usize, seed: u64) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array::from_shape_fn((b, l, n), |_| rng.random_range(-3.0..3.0))
    }

    #[test]
    fn zero_network_returns_lookback_mean() {
        let cfg = ModelConfig::new(Variant::S, 8, 3, 2);
        let mut params = init_params(&cfg, 0).unwrap();
        for name in ["lf.w", "lf.b"] {
            params.get_mut(name).unwrap().fill(0.0);
        }
        let x = random_x(2, 8, 2, 1);
        let y = forward(&cfg, &params, x.view()).unwrap();
        assert_eq!(y.dim(), (2, 3, 2));
        let mean = x.mean_axis(Axis(1)).unwrap();
        for b in 0..2 {
            for s in 0..3 {
                for n in 0..2 {
                    assert_abs_diff_eq!(y[[b, s, n]], mean[[b, n]], epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_delta_reduces_b_to_s() {
        let b_cfg = ModelConfig::new(Variant::B, 16, 4, 3);
        let s_cfg = ModelConfig::new(Variant::S, 16, 4, 3);
        let mut b_params = init_params(&b_cfg, 5).unwrap();
        b_params.get_mut("delta").unwrap().fill(0.0);
        let mut s_params = ParamStore::new();
        for name in s_cfg_names(&s_cfg) {
            s_params.insert(name.clone(), b_params.get(&name).unwrap().clone());
        }
        let x = random_x(4, 16, 3, 6);
        let yb = forward(&b_cfg, &b_params, x.view()).unwrap();
        let ys = forward(&s_cfg, &s_params, x.view()).unwrap();
        for (a, b) in yb.iter().zip(ys.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    fn s_cfg_names(cfg: &ModelConfig) -> Vec<String> {
        param_layout(cfg).unwrap().into_iter().map(|p| p.name).collect()
    }

    #[test]
    fn hand_traced_b_pipeline() {
        // L = 8, S = 2, N = 1, Haar, unit affine, δ = 0.5.
        // x = [1, 3, 2, 4, 6, 8, 7, 9]; μ = 5, var = 7.5
        let cfg = ModelConfig::new(Variant::B, 8, 2, 1);
        let mut params = init_params(&cfg, 0).unwrap();
        // LF head: first output sums the approximation band, second picks A[3]
        params.insert("lf.w", array![[1.0, 0.0], [1.0, 0.0], [1.0, 0.0], [1.0, 1.0]]);
        params.insert("lf.b", array![[0.0, 0.5]]);
        // HF head: first output reads D[0], second is zero
        params.insert("hf.w", array![[1.0, 0.0], [0.0, 0.0], [0.0, 0.0], [0.0, 0.0]]);
        params.insert("hf.b", array![[0.0, 0.0]]);
        params.insert("delta", array![[0.5]]);
        let x = Array3::from_shape_vec((1, 8, 1), vec![1.0, 3.0, 2.0, 4.0, 6.0, 8.0, 7.0, 9.0]).unwrap();
        let y = forward(&cfg, &params, x.view()).unwrap();

        let sigma = (7.5f64 + REVIN_EPS).sqrt();
        let a = std::f64::consts::FRAC_1_SQRT_2;
        let z: Vec<f64> = [1.0, 3.0, 2.0, 4.0, 6.0, 8.0, 7.0, 9.0]
            .iter()
            .map(|v| (v - 5.0) / sigma)
            .collect();
        let approx: Vec<f64> = (0..4).map(|n| a * (z[2 * n] + z[2 * n + 1])).collect();
        let detail0 = a * (z[0] - z[1]);
        let y0 = approx.iter().sum::<f64>() + 0.5 * detail0;
        let y1 = approx[3] + 0.5;
        // the approximation band of a zero-mean row sums to zero
        assert_abs_diff_eq!(approx.iter().sum::<f64>(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(y[[0, 0, 0]], y0 * sigma + 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(y[[0, 1, 0]], y1 * sigma + 5.0, epsilon = 1e-12);
        // frozen values of the trace above
        assert_abs_diff_eq!(y[[0, 0, 0]], 4.292_893_218_813_452, epsilon = 1e-9);
        assert_abs_diff_eq!(y[[0, 1, 0]], 10.611_947_993_752_825, epsilon = 1e-9);
    }

    #[test]
    fn every_variant_emits_horizon_shape() {
        for variant in Variant::ALL {
            let mut cfg = ModelConfig::new(variant, 16, 4, 3);
            if variant == Variant::M {
                cfg.moe = Some(MoEConfig {
                    num_experts: 2,
                    expert_hidden: 3,
                });
            }
            let params = init_params(&cfg, 1).unwrap();
            let y = forward(&cfg, &params, random_x(5, 16, 3, 2).view()).unwrap();
            assert_eq!(y.dim(), (5, 4, 3), "variant {variant}");
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = ModelConfig::new(Variant::B, 7, 4, 1);
        assert!(cfg.validate().is_err());
        cfg.lookback = 8;
        cfg.validate().unwrap();
        cfg.moe = Some(MoEConfig::default());
        assert!(cfg.validate().is_err());
        let mut m = ModelConfig::new(Variant::M, 8, 4, 1);
        m.validate().unwrap();
        m.moe = None;
        assert!(m.validate().is_err());
        let i = ModelConfig::new(Variant::I, 8, 3, 1);
        assert!(i.validate().is_err());
        let mut short = ModelConfig::new(Variant::S, 4, 2, 1);
        short.filter = WaveletKind::Sym4;
        assert!(short.validate().is_err());
    }

    #[test]
    fn mismatched_params_are_rejected() {
        let cfg = ModelConfig::new(Variant::B, 8, 4, 2);
        let other = ModelConfig::new(Variant::S, 8, 4, 2);
        let params = init_params(&other, 0).unwrap();
        assert!(matches!(
            forward(&cfg, &params, random_x(1, 8, 2, 0).view()),
            Err(Error::ConfigMismatch(_))
        ));
        let wrong_l = init_params(&ModelConfig::new(Variant::B, 16, 4, 2), 0).unwrap();
        assert!(matches!(
            Model::from_params(cfg.clone(), wrong_l),
            Err(Error::ConfigMismatch(_))
        ));
        let params = init_params(&cfg, 0).unwrap();
        assert!(matches!(
            forward(&cfg, &params, random_x(1, 10, 2, 0).view()),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn all_zero_problem_has_zero_loss_and_gradients() {
        let cfg = ModelConfig::new(Variant::B, 8, 4, 2);
        let mut params = init_params(&cfg, 0).unwrap();
        for v in params.values_mut() {
            v.fill(0.0);
        }
        params.get_mut("revin.gamma").unwrap().fill(1.0);
        let batch = WindowBatch {
            x: Array3::zeros((3, 8, 2)),
            y: Array3::zeros((3, 4, 2)),
            origins: vec![0, 1, 2],
        };
        let (loss, grads) = loss_and_grads(&cfg, &params, &batch).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.iter().all(|g| g.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn horizon_never_leaks_into_forecast() {
        let cfg = ModelConfig::new(Variant::B, 16, 4, 2);
        let model = Model::init(cfg, 3).unwrap();
        let x = random_x(2, 16, 2, 4);
        let base = model.forward(x.view()).unwrap();
        let mut batch = WindowBatch {
            x: x.clone(),
            y: random_x(2, 4, 2, 5),
            origins: vec![0, 1],
        };
        batch.y[[1, 2, 1]] += 100.0;
        assert_eq!(model.forward(batch.x.view()).unwrap(), base);
    }
}
