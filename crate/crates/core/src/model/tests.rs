use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;
use crate::numeric::Tape;

fn small_cfg() -> ModelConfig {
    ModelConfig {
        lookback: 32,
        horizon: 8,
        channels: 2,
        d_model: 8,
        heads: 2,
        layers: 2,
        alpha: 0.5,
        ..ModelConfig::default()
    }
}

fn periodic_input(l: usize, c: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..l * c)
        .map(|i| {
            let (t, ch) = ((i / c) as f64, (i % c) as f64);
            (2.0 * std::f64::consts::PI * t / (8.0 + ch)).sin() + 0.2 * rng.random_range(-1.0..1.0)
        })
        .collect();
    Tensor::matrix(l, c, data).unwrap()
}

fn run(model: &DualformerModel, x: &Tensor, opts: ForwardOptions<'_>) -> (Tensor, ForwardTrace) {
    predict(model, x, &opts).unwrap()
}

#[test]
fn parameter_count_matches_closed_form() {
    let cfg = ModelConfig {
        lookback: 96,
        horizon: 96,
        channels: 7,
        d_model: 16,
        heads: 4,
        layers: 2,
        ..ModelConfig::default()
    };
    // 2·7 + (7·16 + 16) + 2·(8·16² + 4·16 + 16·64 + 64 + 64·16 + 16) + (96·16·96·7 + 96·7)
    assert_eq!(cfg.param_count(), 1_041_486);
    assert_eq!(init_model(&cfg).unwrap().param_count(), 1_041_486);
}

#[test]
fn init_is_deterministic() {
    let a = init_model(&small_cfg()).unwrap();
    let b = init_model(&small_cfg()).unwrap();
    assert_eq!(a.checksum(), b.checksum());
    assert_eq!(a, b);
    let c = init_model(&ModelConfig {
        seed: 1,
        ..small_cfg()
    })
    .unwrap();
    assert_ne!(a.checksum(), c.checksum());
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = [
        ModelConfig {
            d_model: 10,
            heads: 4,
            ..small_cfg()
        },
        ModelConfig {
            alpha: 0.0,
            ..small_cfg()
        },
        ModelConfig {
            alpha: 1.5,
            ..small_cfg()
        },
        ModelConfig {
            layers: 0,
            ..small_cfg()
        },
        ModelConfig {
            lookback: 4,
            layers: 4,
            ..small_cfg()
        },
    ];
    for cfg in bad {
        assert!(matches!(init_model(&cfg), Err(Error::Config(_))), "{cfg:?}");
    }
}

#[test]
fn parameter_names_are_unique_and_grouped() {
    let m = init_model(&small_cfg()).unwrap();
    let names: Vec<String> = m.params().into_iter().map(|(n, _)| n).collect();
    let mut sorted = names.clone();
    sorted.sort();
    sorted.dedup();
    assert_eq!(sorted.len(), names.len());
    assert_eq!(DualformerModel::group_of("layers.1.time.w_q"), "time.w_q");
    assert_eq!(DualformerModel::group_of("head.w"), "head.w");
}

#[test]
fn output_shape_on_benchmark_geometry() {
    let cfg = ModelConfig {
        layers: 2,
        ..ModelConfig::default()
    };
    let m = init_model(&cfg).unwrap();
    let (y, trace) = run(&m, &periodic_input(96, 7, 0), ForwardOptions::default());
    assert_eq!(y.shape(), &[96, 7]);
    assert!((trace.w_f + trace.w_t - 1.0).abs() < 1e-15);
    assert!((0.0..=1.0).contains(&trace.w_f));
}

#[test]
fn wrong_input_shape_is_a_contract_error() {
    let m = init_model(&small_cfg()).unwrap();
    let x = Tensor::zeros(&[31, 2]);
    assert!(matches!(
        predict(&m, &x, &ForwardOptions::default()),
        Err(Error::Contract(_))
    ));
}

#[test]
fn forward_is_bit_deterministic() {
    let m = init_model(&small_cfg()).unwrap();
    let x = periodic_input(32, 2, 1);
    assert_eq!(
        run(&m, &x, ForwardOptions::default()),
        run(&m, &x, ForwardOptions::default())
    );
}

fn revin_roundtrip(x: &Tensor) -> (Tensor, Tensor) {
    let stats = RevinStats::of(x);
    let c = x.cols();
    let mut t = Tape::new();
    let xv = t.constant(x.clone());
    let g = t.constant(Tensor::full(&[c], 1.0));
    let b = t.constant(Tensor::full(&[c], 0.0));
    let z = revin_normalize(&mut t, xv, &stats, g, b).unwrap();
    let back = revin_denormalize(&mut t, z, &stats, g, b).unwrap();
    (t.value(z).clone(), t.value(back).clone())
}

#[test]
fn revin_round_trip_and_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    // Channel 0: mean 5, std 2 exactly; channel 1: constant.
    let base: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
    let m = base.iter().sum::<f64>() / 64.0;
    let s = (base.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / 64.0).sqrt();
    let mut data = Vec::new();
    for v in &base {
        data.push(5.0 + 2.0 * (v - m) / s);
        data.push(3.25);
    }
    let x = Tensor::matrix(64, 2, data).unwrap();
    let (z, back) = revin_roundtrip(&x);
    assert!(back.max_abs_diff(&x) < 1e-9);
    let col = z.column(0);
    let mean = col.iter().sum::<f64>() / 64.0;
    let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 64.0;
    assert!(mean.abs() < 1e-9 && (var.sqrt() - 1.0).abs() < 1e-9);
    assert!(z.column(1).iter().all(|&v| v == 0.0));
    assert!(RevinStats::of(&x).std[1] >= REVIN_EPS);
}

#[test]
fn ablation_names_parse() {
    for a in Ablation::ALL {
        assert_eq!(a.as_str().parse::<Ablation>().unwrap(), a);
    }
    assert!(matches!("both".parse::<Ablation>(), Err(Error::Config(_))));
}

#[test]
fn time_only_never_calls_the_frequency_branch() {
    let m = init_model(&small_cfg()).unwrap();
    let x = periodic_input(32, 2, 4);
    let (_, t) = run(&m, &x, ForwardOptions { ablation: Ablation::TimeOnly, ..Default::default() });
    assert_eq!((t.time_calls, t.freq_calls), (2, 0));
    assert_eq!((t.w_t, t.w_f), (1.0, 0.0));
    let (_, t) = run(&m, &x, ForwardOptions { ablation: Ablation::FreqOnly, ..Default::default() });
    assert_eq!((t.time_calls, t.freq_calls), (0, 2));
    assert_eq!((t.w_t, t.w_f), (0.0, 1.0));
}

#[test]
fn weight_overrides_reproduce_the_ablations() {
    let m = init_model(&small_cfg()).unwrap();
    let x = periodic_input(32, 2, 5);
    let over = |w| ForwardOptions { w_f_override: Some(w), ..Default::default() };
    let by_mode = |a| ForwardOptions { ablation: a, ..Default::default() };
    assert_eq!(run(&m, &x, over(0.0)).0, run(&m, &x, by_mode(Ablation::TimeOnly)).0);
    assert_eq!(run(&m, &x, over(1.0)).0, run(&m, &x, by_mode(Ablation::FreqOnly)).0);
    assert_eq!(run(&m, &x, over(0.5)).0, run(&m, &x, by_mode(Ablation::UniformWeighting)).0);
}

#[test]
fn uniform_weighting_only_substitutes_the_weights() {
    let m = init_model(&small_cfg()).unwrap();
    let x = periodic_input(32, 2, 6);
    let (_, full) = run(&m, &x, ForwardOptions::default());
    let (_, uni) = run(&m, &x, ForwardOptions { ablation: Ablation::UniformWeighting, ..Default::default() });
    assert!(full.w_f > 0.5, "strongly periodic input, w_f = {}", full.w_f);
    assert_eq!(uni.w_f, 0.5);
    // The first layer sees identical inputs, so it selects identical lags.
    assert_eq!(full.lags[0], uni.lags[0]);
}

#[test]
fn no_revin_matches_full_on_standardized_input() {
    let m = init_model(&small_cfg()).unwrap();
    let x = RevinStats::of(&periodic_input(32, 2, 7)).standardize(&periodic_input(32, 2, 7));
    let (a, _) = run(&m, &x, ForwardOptions::default());
    let (b, _) = run(&m, &x, ForwardOptions { ablation: Ablation::NoRevin, ..Default::default() });
    assert!(a.max_abs_diff(&b) < 1e-9, "{}", a.max_abs_diff(&b));
}

#[test]
fn scale_equivariance() {
    let m = init_model(&small_cfg()).unwrap();
    let x = periodic_input(32, 2, 8);
    let (y, _) = run(&m, &x, ForwardOptions::default());
    for (c, d) in [(2.5, -3.0), (0.01, 100.0), (1e3, 0.5)] {
        let xs = x.map(|v| c * v + d);
        let (ys, _) = run(&m, &xs, ForwardOptions::default());
        let expect = y.map(|v| c * v + d);
        let scale = c.max(1.0);
        assert!(ys.max_abs_diff(&expect) < 1e-6 * scale, "c={c}: {}", ys.max_abs_diff(&expect));
    }
}

#[test]
fn checkpoint_round_trip_and_shape_validation() {
    let m = init_model(&small_cfg()).unwrap();
    let ck = Checkpoint::from_model(&m, serde_json::json!({"note": "t"}));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.to_model().unwrap(), m);

    let mut bad = ck.clone();
    bad.params[2].shape = vec![8, 2];
    assert!(matches!(bad.to_model(), Err(Error::Checkpoint(_))));
    let mut short = ck;
    short.params.pop();
    assert!(matches!(short.to_model(), Err(Error::Checkpoint(_))));
}
