use ndarray::{Array, Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use wavets_core::data::{synth_with_meta, SynthKind, WindowBatch};
use wavets_core::eval::count_params;
use wavets_core::grad::{adam_step, AdamConfig, AdamState};
use wavets_core::model::{forward, init_params, loss_and_grads, param_layout, DeltaMode, Model, ModelConfig, Variant};
use wavets_core::moe::{self, MoEConfig};
use wavets_core::wavelet::WaveletKind;
use wavets_core::ParamStore;

fn random_cube(rng: &mut ChaCha8Rng, shape: (usize, usize, usize)) -> Array3<f64> {
    Array::from_shape_fn(shape, |_| rng.random_range(-2.0..2.0))
}

fn random_config(rng: &mut ChaCha8Rng) -> ModelConfig {
    let variant = Variant::ALL[rng.random_range(0..Variant::ALL.len())];
    let filter = WaveletKind::ALL[rng.random_range(0..4)];
    let lookback = 2 * rng.random_range(filter.taps()..=200);
    let mut horizon = rng.random_range(1..=96);
    if variant == Variant::I {
        horizon = 2 * rng.random_range(filter.taps().div_ceil(2)..=48);
    }
    let mut cfg = ModelConfig::new(variant, lookback, horizon, rng.random_range(1..=50));
    cfg.filter = filter;
    cfg.revin_affine = rng.random_bool(0.7);
    cfg.delta_per_channel = rng.random_bool(0.3);
    if rng.random_bool(0.3) {
        cfg.delta = DeltaMode::Fixed(1.0);
    }
    if variant == Variant::M {
        cfg.moe = Some(MoEConfig {
            num_experts: rng.random_range(1..=6),
            expert_hidden: rng.random_range(0..=32),
        });
    }
    if !matches!(variant, Variant::M | Variant::HF) && rng.random_bool(0.3) {
        cfg.lf_hidden = Some(rng.random_range(1..=16));
    }
    cfg
}

#[test]
fn closed_form_count_matches_live_params() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..50 {
        let cfg = random_config(&mut rng);
        let live = init_params(&cfg, 0).unwrap().num_scalars();
        assert_eq!(count_params(&cfg).unwrap().total(), live, "{cfg:?}");
        let layout: usize = param_layout(&cfg).unwrap().iter().map(|p| p.shape.0 * p.shape.1).sum();
        assert_eq!(layout, live);
    }
}

#[test]
fn single_linear_expert_with_saturated_gate_matches_lf_path() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let b_cfg = ModelConfig::new(Variant::B, 32, 8, 3);
    let b_params = init_params(&b_cfg, 4).unwrap();
    let mut m_cfg = b_cfg.clone();
    m_cfg.variant = Variant::M;
    m_cfg.moe = Some(MoEConfig {
        num_experts: 1,
        expert_hidden: 0,
    });
    let mut m_params = ParamStore::new();
    for spec in param_layout(&m_cfg).unwrap() {
        let value = match spec.name.as_str() {
            moe::GATE_W => Array2::zeros(spec.shape),
            moe::GATE_B => Array2::ones(spec.shape),
            "moe.expert0.w" => b_params.get("lf.w").unwrap().clone(),
            "moe.expert0.b" => b_params.get("lf.b").unwrap().clone(),
            other => b_params.get(other).unwrap().clone(),
        };
        m_params.insert(spec.name, value);
    }
    let x = random_cube(&mut rng, (4, 32, 3));
    let yb = forward(&b_cfg, &b_params, x.view()).unwrap();
    let ym = forward(&m_cfg, &m_params, x.view()).unwrap();
    let err = yb.iter().zip(ym.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-6, "max difference {err}");
}

#[test]
fn overfits_one_batch() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = ModelConfig::new(Variant::B, 16, 4, 1);
    let mut model = Model::init(cfg, 1).unwrap();
    let batch = WindowBatch {
        x: random_cube(&mut rng, (8, 16, 1)),
        y: random_cube(&mut rng, (8, 4, 1)),
        origins: (0..8).collect(),
    };
    let mut state = AdamState::new(
        AdamConfig {
            lr: 1e-2,
            ..Default::default()
        },
        model.params(),
    );
    let mut loss = f64::INFINITY;
    for _ in 0..500 {
        let (l, grads) = model.loss_and_grads(&batch).unwrap();
        loss = l;
        adam_step(model.params_mut(), &grads, &mut state).unwrap();
    }
    assert!(loss < 1e-3, "loss after 500 steps: {loss}");
}

#[test]
fn checkpoint_round_trip_preserves_forecasts() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut cfg = ModelConfig::new(Variant::M, 16, 4, 2);
    cfg.moe = Some(MoEConfig {
        num_experts: 3,
        expert_hidden: 5,
    });
    let model = Model::init(cfg.clone(), 99).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.json");
    model.params().save(&path).unwrap();
    let loaded = Model::from_params(cfg, ParamStore::load(&path).unwrap()).unwrap();
    let x = random_cube(&mut rng, (3, 16, 2));
    let a = model.forward(x.view()).unwrap();
    let b = loaded.forward(x.view()).unwrap();
    assert!(a.iter().zip(b.iter()).all(|(p, q)| p.to_bits() == q.to_bits()));
}

#[test]
fn same_seed_same_gradients() {
    let cfg = ModelConfig::new(Variant::I, 16, 4, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let batch = WindowBatch {
        x: random_cube(&mut rng, (4, 16, 2)),
        y: random_cube(&mut rng, (4, 4, 2)),
        origins: (0..4).collect(),
    };
    let run = || loss_and_grads(&cfg, &init_params(&cfg, 3).unwrap(), &batch).unwrap();
    let (la, ga) = run();
    let (lb, gb) = run();
    assert_eq!(la.to_bits(), lb.to_bits());
    assert_eq!(ga, gb);
}

fn periodogram(x: &[f64]) -> Vec<f64> {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v - mean, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    buf[..x.len() / 2].iter().map(|c| c.norm_sqr()).collect()
}

#[test]
fn sine_mix_spectrum_peaks_at_configured_periods() {
    let t = 4096;
    let (series, meta) = synth_with_meta(SynthKind::SineMix, t, 3, 17).unwrap();
    for (c, comps) in meta.components.iter().enumerate() {
        let column: Vec<f64> = series.values.index_axis(Axis(1), c).to_vec();
        let power = periodogram(&column);
        let mut sorted = power.clone();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[sorted.len() / 2];
        for comp in comps {
            let bin = t as f64 / comp.period;
            let lo = (bin.floor() as usize).saturating_sub(1);
            let hi = (bin.ceil() as usize + 1).min(power.len() - 1);
            let (peak_bin, peak) = (lo..=hi)
                .map(|k| (k, power[k]))
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap();
            assert!(peak > 1000.0 * median, "channel {c}, period {}: weak peak", comp.period);
            assert!(
                (peak_bin as f64 - bin).abs() <= 1.5,
                "channel {c}: peak at {peak_bin}, expected near {bin}"
            );
        }
        // leakage can split a peak over two bins, so look among the six strongest
        let mut ranked: Vec<usize> = (1..power.len()).collect();
        ranked.sort_by(|a, b| power[*b].total_cmp(&power[*a]));
        for comp in comps {
            let bin = t as f64 / comp.period;
            assert!(ranked[..6].iter().any(|&k| (k as f64 - bin).abs() <= 1.5));
        }
    }
}

#[test]
fn trend_sine_difference_mean_tracks_slope() {
    let t = 20_000;
    let (series, meta) = synth_with_meta(SynthKind::TrendSine, t, 4, 3).unwrap();
    for (c, &slope) in meta.slopes.iter().enumerate() {
        let col = series.values.index_axis(Axis(1), c);
        // mean of first differences telescopes to (x[T-1] - x[0]) / (T - 1)
        let drift = (col[t - 1] - col[0]) / (t - 1) as f64;
        assert!(
            (drift - slope).abs() < 2.5e-4,
            "channel {c}: drift {drift} vs slope {slope}"
        );
    }
}
