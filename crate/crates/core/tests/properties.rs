use ndarray::{Array1, Array2, Array3, ArrayD, Axis};
use proptest::prelude::*;
use wavets_core::data::{standardize, Series, SeriesView, Windows};
use wavets_core::eval::{mae, mse};
use wavets_core::grad::softmax_rows;
use wavets_core::moe::{self, MoEConfig};
use wavets_core::revin::{revin_forward, revin_inverse, REVIN_EPS};
use wavets_core::wavelet::{dwt, dwt_multi, idwt, idwt_multi, FilterBank, WaveletKind};
use wavets_core::ParamStore;

fn bank() -> impl Strategy<Value = WaveletKind> {
    prop::sample::select(WaveletKind::ALL.to_vec())
}

/// An even-length signal long enough for every bank.
fn signal() -> impl Strategy<Value = Vec<f64>> {
    (4usize..=64).prop_flat_map(|half| prop::collection::vec(-100.0f64..100.0, 2 * half))
}

fn max_abs_diff<'a>(a: impl IntoIterator<Item = &'a f64>, b: impl IntoIterator<Item = &'a f64>) -> f64 {
    a.into_iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn dwt_is_linear(kind in bank(), x in signal(), a in -3.0f64..3.0, b in -3.0f64..3.0, shift in 0usize..1000) {
        let fb = FilterBank::new(kind);
        let n = x.len();
        let y: Vec<f64> = (0..n).map(|i| x[(i + shift) % n] * 0.5 - 1.0).collect();
        let combo: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let bx = dwt(&Array1::from(x), &fb).unwrap();
        let by = dwt(&Array1::from(y), &fb).unwrap();
        let bc = dwt(&Array1::from(combo), &fb).unwrap();
        let expect_a: ArrayD<f64> = &bx.approx * a + &by.approx * b;
        let expect_d: ArrayD<f64> = &bx.detail * a + &by.detail * b;
        prop_assert!(max_abs_diff(&bc.approx, &expect_a) < 1e-10);
        prop_assert!(max_abs_diff(&bc.detail, &expect_d) < 1e-10);
    }

    #[test]
    fn dwt_round_trip_and_energy(kind in bank(), x in signal()) {
        let fb = FilterBank::new(kind);
        let xa = Array1::from(x);
        let bands = dwt(&xa, &fb).unwrap();
        prop_assert_eq!(bands.approx.len(), xa.len() / 2);
        let back = idwt(&bands, &fb).unwrap();
        prop_assert!(max_abs_diff(&back, &xa) < 1e-10);
        let e_in: f64 = xa.iter().map(|v| v * v).sum();
        let e_out: f64 = bands.approx.iter().chain(bands.detail.iter()).map(|v| v * v).sum();
        prop_assert!((e_in - e_out).abs() <= 1e-8 * e_in.max(1e-300));
    }

    #[test]
    fn constants_have_no_detail(kind in bank(), half in 4usize..200, c in -1e3f64..1e3) {
        let x = Array1::from_elem(2 * half, c);
        let bands = dwt(&x, &FilterBank::new(kind)).unwrap();
        prop_assert!(bands.detail.iter().all(|d| d.abs() < 1e-12 * c.abs().max(1.0)));
    }

    #[test]
    fn multi_level_round_trip(kind in bank(), levels in 1usize..=3, blocks in 1usize..=4, seed in any::<u64>()) {
        let fb = FilterBank::new(kind);
        let len = (fb.len() << levels) * blocks;
        let x = Array1::from_shape_fn(len, |i| ((i as u64).wrapping_mul(seed | 1) % 97) as f64 - 48.0);
        let pyramid = dwt_multi(&x, &fb, levels).unwrap();
        prop_assert_eq!(pyramid.len(), levels);
        let back = idwt_multi(&pyramid, &fb).unwrap();
        prop_assert!(max_abs_diff(&back, &x) < 1e-9);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_ignore_shifts(logits in prop::collection::vec(-50.0f64..50.0, 12), c in -100.0f64..100.0) {
        let x = Array2::from_shape_vec((3, 4), logits).unwrap();
        let p = softmax_rows(x.view());
        for row in p.outer_iter() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        let shifted = softmax_rows((&x + c).view());
        prop_assert!(max_abs_diff(&p, &shifted) < 1e-12);
    }

    #[test]
    fn revin_round_trips(values in prop::collection::vec(-1e3f64..1e3, 2 * 8 * 3), gamma in 0.1f64..3.0, beta in -2.0f64..2.0) {
        let x = Array3::from_shape_vec((2, 8, 3), values).unwrap();
        let g = Array1::from_elem(3, gamma);
        let b = Array1::from_elem(3, beta);
        let (y, state) = revin_forward(x.view(), g.view(), b.view(), REVIN_EPS).unwrap();
        let back = revin_inverse(y.view(), &state).unwrap();
        let scale = x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        prop_assert!(max_abs_diff(&back, &x) < 1e-12 * scale);
    }

    #[test]
    fn revin_ignores_horizon(values in prop::collection::vec(-10.0f64..10.0, 20), poke in 0usize..4, by in -100.0f64..100.0) {
        // stats of the lookback are unchanged by anything after it
        let series = Array3::from_shape_vec((1, 20, 1), values).unwrap();
        let mut poked = series.clone();
        poked[[0, 16 + poke, 0]] += by;
        let g = Array1::ones(1);
        let b = Array1::zeros(1);
        let look = |s: &Array3<f64>| revin_forward(s.slice(ndarray::s![.., ..16, ..]), g.view(), b.view(), REVIN_EPS).unwrap().0;
        prop_assert_eq!(look(&series), look(&poked));
    }

    #[test]
    fn window_count_is_exact(t in 2usize..300, l in 1usize..40, s in 1usize..40) {
        let series = Series::from_values(Array2::zeros((t, 2))).unwrap();
        match Windows::over(&series, l, s) {
            Ok(w) => prop_assert_eq!(w.len(), t - l - s + 1),
            Err(_) => prop_assert!(t < l + s),
        }
    }

    #[test]
    fn standardize_round_trips(values in prop::collection::vec(-1e4f64..1e4, 40 * 3), cut in 2usize..40) {
        let series = Series::from_values(Array2::from_shape_vec((40, 3), values).unwrap()).unwrap();
        let train = SeriesView { series: &series, start: 0, end: cut };
        let (z, scaler) = standardize(&series, &train);
        let back = scaler.inverse(&z);
        for (c, (a, b)) in back.values.axis_iter(Axis(1)).zip(series.values.axis_iter(Axis(1))).enumerate() {
            let scale = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            prop_assert!(max_abs_diff(a, b) < 1e-10 * scale, "channel {}", c);
        }
    }

    #[test]
    fn metrics_ignore_window_order(values in prop::collection::vec(-5.0f64..5.0, 2 * 6 * 2 * 3), perm_seed in any::<u64>()) {
        let (pred, truth) = values.split_at(36);
        let pred = Array3::from_shape_vec((6, 2, 3), pred.to_vec()).unwrap();
        let truth = Array3::from_shape_vec((6, 2, 3), truth.to_vec()).unwrap();
        let mut order: Vec<usize> = (0..6).collect();
        let mut state = perm_seed;
        for i in (1..6).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (state >> 33) as usize % (i + 1));
        }
        let p2 = pred.select(Axis(0), &order);
        let t2 = truth.select(Axis(0), &order);
        prop_assert!((mse(pred.view(), truth.view()).unwrap() - mse(p2.view(), t2.view()).unwrap()).abs() < 1e-12);
        prop_assert!((mae(pred.view(), truth.view()).unwrap() - mae(p2.view(), t2.view()).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn moe_output_in_expert_hull(seed in any::<u64>(), experts in 1usize..5, hidden in 0usize..4, shift in -20.0f64..20.0) {
        use rand::{Rng, SeedableRng};
        let cfg = MoEConfig { num_experts: experts, expert_hidden: hidden };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        moe::init_params(&cfg, 6, 3, &mut rng, &mut store);
        let x = Array3::from_shape_fn((2, 4, 6), |_| rng.random_range(-2.0..2.0));
        let out = moe::moe_forward(&store, x.view()).unwrap();
        let outs: Vec<Array3<f64>> = (0..experts).map(|e| moe::expert_forward(&store, e, x.view()).unwrap()).collect();
        for (idx, &v) in out.indexed_iter() {
            let lo = outs.iter().map(|o| o[idx]).fold(f64::INFINITY, f64::min);
            let hi = outs.iter().map(|o| o[idx]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
        }
        let gate = moe::gate(&store, x.view()).unwrap();
        for row in gate.lanes(Axis(2)) {
            prop_assert!((row.sum() - 1.0).abs() < 1e-12);
            let h = moe::entropy(row.as_slice().unwrap());
            prop_assert!(h >= -1e-12 && h <= (experts as f64).ln() + 1e-12);
        }
        // shifting every gate logit by a constant changes nothing
        *store.get_mut(moe::GATE_B).unwrap() += shift;
        let shifted = moe::moe_forward(&store, x.view()).unwrap();
        prop_assert!(max_abs_diff(&out, &shifted) < 1e-9);
    }
}
