use std::f64::consts::PI;

use super::*;
use crate::data::{collect_windows, sine_mixture, MixtureSpec, NormStats, Segment, Window, WindowSpec};
use crate::model::{init_model, Ablation, ForwardOptions, ModelConfig};
use crate::numeric::{BackwardFault, Tensor};

fn tiny_cfg() -> ModelConfig {
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

fn mixture_windows(len: usize, c: usize, l: usize, t: usize, seed: u64) -> Vec<Window> {
    let ds = sine_mixture(&MixtureSpec::two_tone(len, c, seed)).unwrap();
    let seg = Segment {
        start: 0,
        values: Some(ds.values),
        channels: c,
    };
    collect_windows(&seg, WindowSpec::new(l, t))
}

#[test]
fn tiny_model_gradients_match_finite_differences() {
    let model = init_model(&tiny_cfg()).unwrap();
    let ws = mixture_windows(60, 2, 32, 8, 3);
    let groups = model_gradcheck(&model, &ws[..2], &ForwardOptions::default(), 1e-2, None).unwrap();
    for g in &groups {
        eprintln!("{:<12} {:.3e} ({} coords)", g.group, g.max_rel_err, g.coords);
    }
    let total: usize = groups.iter().map(|g| g.coords).sum();
    assert_eq!(total, model.param_count());
    for g in &groups {
        assert!(g.max_rel_err <= 1e-3, "{g:?}");
    }
}

#[test]
fn corrupted_backward_rule_is_detected() {
    let model = init_model(&tiny_cfg()).unwrap();
    let ws = mixture_windows(60, 2, 32, 8, 3);
    let fault = BackwardFault {
        op: "softmax",
        factor: 1.5,
    };
    let groups = model_gradcheck(&model, &ws[..1], &ForwardOptions::default(), 1e-2, Some(fault)).unwrap();
    assert!(groups.iter().any(|g| g.max_rel_err > 1e-3));
}

#[test]
fn naive_baseline_repeats_the_last_row() {
    let x = Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    let y = naive_baseline(&x, 4).unwrap();
    for r in 0..4 {
        assert_eq!(y.row(r), &[5.0, 6.0]);
    }
}

fn sinusoid_windows(period: usize, l: usize, t: usize, amp: f64) -> Vec<Window> {
    let len = l + t + 4 * period;
    let data: Vec<f64> = (0..len)
        .map(|i| amp * (2.0 * PI * i as f64 / period as f64).sin())
        .collect();
    let seg = Segment {
        start: 0,
        values: Some(Tensor::matrix(len, 1, data).unwrap()),
        channels: 1,
    };
    collect_windows(&seg, WindowSpec::new(l, t))
}

#[test]
fn naive_baseline_on_a_sinusoid_matches_closed_form() {
    // Averaged over all phases, E[(A sin(φ+ωh) − A sin φ)²] = A²(1 − cos ωh).
    for (period, t) in [(12usize, 12usize), (16, 8), (24, 5)] {
        let amp = 1.7;
        let ws = sinusoid_windows(period, 24, t, amp);
        // Use whole periods of start offsets so phases are uniform.
        let ws = &ws[..period];
        let report = evaluate_naive(ws, &NormStats::identity(1)).unwrap();
        let w = 2.0 * PI / period as f64;
        let want = amp * amp * (1.0 - (1..=t).map(|h| (w * h as f64).cos()).sum::<f64>() / t as f64);
        assert!((report.mse - want).abs() < 1e-9, "period {period}: {} vs {want}", report.mse);
    }
}

#[test]
fn half_period_horizon_approaches_twice_the_variance() {
    // With T = P/2 the horizon mean of A²(1 − cos ωh) is A²(1 + 1/T), which
    // tends to 2·var = A² as the period grows.
    for period in [8usize, 16, 64] {
        let t = period / 2;
        let ws = sinusoid_windows(period, 16, t, 1.0);
        let r = evaluate_naive(&ws[..period], &NormStats::identity(1)).unwrap();
        assert!((r.mse - (1.0 + 1.0 / t as f64)).abs() < 1e-9, "P={period}: {}", r.mse);
    }
}

#[test]
fn perfect_predictions_score_zero() {
    let ws = mixture_windows(50, 2, 16, 4, 1);
    let preds: Vec<Tensor> = ws.iter().map(|w| w.y.clone()).collect();
    let stats = NormStats {
        mean: vec![1.0, -2.0],
        std: vec![3.0, 0.5],
    };
    let r = score(&ws, &preds, &stats).unwrap();
    assert_eq!((r.mse, r.mae, r.renorm_mae, r.renorm_rmse), (0.0, 0.0, 0.0, 0.0));
    assert_eq!(r.renorm_wape, Some(0.0));
}

#[test]
fn report_round_trips_through_jsonl() {
    let ws = mixture_windows(50, 2, 16, 4, 2);
    let r = evaluate_naive(&ws, &NormStats::identity(2)).unwrap();
    let text = to_jsonl(std::slice::from_ref(&r)).unwrap();
    let back: Vec<MetricsReport> = read_jsonl(text.as_bytes()).unwrap();
    assert_eq!(back, vec![r]);
}

#[test]
fn evaluation_does_not_touch_the_model() {
    let model = init_model(&tiny_cfg()).unwrap();
    let before = model.checksum();
    let ws = mixture_windows(60, 2, 32, 8, 4);
    evaluate(&model, &ws, &NormStats::identity(2), &ForwardOptions::default()).unwrap();
    assert_eq!(model.checksum(), before);
    assert!(evaluate(&model, &[], &NormStats::identity(2), &ForwardOptions::default()).is_err());
}

#[test]
fn training_is_deterministic_and_restores_the_best_epoch() {
    let cfg = ModelConfig {
        lookback: 16,
        horizon: 4,
        channels: 1,
        d_model: 8,
        heads: 2,
        layers: 1,
        ..ModelConfig::default()
    };
    let ws = mixture_windows(120, 1, 16, 4, 5);
    let (tr, va) = ws.split_at(80);
    let tc = TrainConfig {
        batch_size: 16,
        max_epochs: 4,
        lr: 3e-3,
        ..TrainConfig::default()
    };
    let run = || {
        let mut m = init_model(&cfg).unwrap();
        let out = train(&mut m, tr, va, &tc, &ForwardOptions::default()).unwrap();
        (m, out)
    };
    let (m1, o1) = run();
    let (m2, o2) = run();
    assert_eq!(o1, o2);
    assert_eq!(m1.checksum(), m2.checksum());
    let best = o1
        .history
        .iter()
        .min_by(|a, b| a.val_mse.unwrap().total_cmp(&b.val_mse.unwrap()))
        .unwrap();
    assert_eq!(best.epoch, o1.best_epoch);
    let restored = mean_mse(&m1, va, &ForwardOptions::default()).unwrap();
    assert_eq!(restored, best.val_mse.unwrap());
    assert!(o1.history.last().unwrap().train_loss < o1.history[0].train_loss);
}

#[test]
fn ablation_trains_without_touching_skipped_parameters() {
    let cfg = ModelConfig {
        lookback: 16,
        horizon: 4,
        channels: 1,
        d_model: 4,
        heads: 1,
        layers: 1,
        ..ModelConfig::default()
    };
    let ws = mixture_windows(60, 1, 16, 4, 6);
    let mut m = init_model(&cfg).unwrap();
    let before = m.layers[0].freq.w_q.clone();
    let opts = ForwardOptions {
        ablation: Ablation::TimeOnly,
        ..Default::default()
    };
    let tc = TrainConfig {
        batch_size: 8,
        max_epochs: 1,
        ..TrainConfig::default()
    };
    train(&mut m, &ws, &[], &tc, &opts).unwrap();
    assert_eq!(m.layers[0].freq.w_q, before);
}
