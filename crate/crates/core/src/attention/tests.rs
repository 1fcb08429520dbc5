use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::numeric::{finite_diff_check, fft::one_sided_len};
use crate::spectral::{make_plan, rfft, sample};

fn rand_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

// Brute-force circular cross-correlation in the convention produced by
// irfft(Q ⊙ conj K): R[τ] = Σ_t q[(t+τ) mod L]·k[t].
fn brute_xcorr(q: &[f64], k: &[f64]) -> Vec<f64> {
    let l = q.len();
    (0..l)
        .map(|tau| (0..l).map(|t| q[(t + tau) % l] * k[t]).sum())
        .collect()
}

// Softmax attention written directly from the definition.
fn reference_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Tensor {
    let (l, dk, dv) = (q.rows(), q.cols(), v.cols());
    let mut out = Tensor::zeros(&[l, dv]);
    for i in 0..l {
        let s: Vec<f64> = (0..l)
            .map(|j| (0..dk).map(|c| q.get(i, c) * k.get(j, c)).sum::<f64>() / (dk as f64).sqrt())
            .collect();
        let mx = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = s.iter().map(|x| (x - mx).exp()).collect();
        let z: f64 = e.iter().sum();
        for c in 0..dv {
            out.set(i, c, (0..l).map(|j| e[j] / z * v.get(j, c)).sum());
        }
    }
    out
}

fn reference_mha(x: &Tensor, p: &BranchProjections) -> Tensor {
    let mm = |a: &Tensor, b: &Tensor| {
        let mut t = Tape::new();
        let (a, b) = (t.constant(a.clone()), t.constant(b.clone()));
        let o = t.matmul(a, b).unwrap();
        t.value(o).clone()
    };
    let (q, k, v) = (mm(x, &p.w_q), mm(x, &p.w_k), mm(x, &p.w_v));
    let (l, dk) = (x.rows(), p.d_k());
    let cols = |t: &Tensor, h: usize| {
        let mut data = Vec::with_capacity(l * dk);
        for r in 0..l {
            data.extend_from_slice(&t.row(r)[h * dk..(h + 1) * dk]);
        }
        Tensor::matrix(l, dk, data).unwrap()
    };
    let mut cat = Tensor::zeros(&[l, p.d_model()]);
    for h in 0..p.heads {
        let o = reference_attention(&cols(&q, h), &cols(&k, h), &cols(&v, h));
        for r in 0..l {
            for c in 0..dk {
                cat.set(r, h * dk + c, o.get(r, c));
            }
        }
    }
    mm(&cat, &p.w_out)
}

fn run_time(x: &Tensor, band: &Band, p: &BranchProjections) -> Tensor {
    let mut t = Tape::new();
    let xv = t.constant(x.clone());
    let w = p.bind_const(&mut t);
    let o = time_branch(&mut t, xv, band, &w).unwrap();
    t.value(o).clone()
}

fn run_freq(x: &Tensor, band: &Band, p: &BranchProjections, policy: LagPolicy) -> (Tensor, Vec<LagSelection>) {
    let mut t = Tape::new();
    let xv = t.constant(x.clone());
    let w = p.bind_const(&mut t);
    let (o, s) = freq_branch(&mut t, xv, band, &w, LagChoice::Select(policy)).unwrap();
    (t.value(o).clone(), s)
}

#[test]
fn attention_single_step_returns_v() {
    let q = Tensor::matrix(1, 2, vec![0.3, -1.0]).unwrap();
    let k = Tensor::matrix(1, 2, vec![2.0, 0.5]).unwrap();
    let v = Tensor::matrix(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
    assert_eq!(scaled_dot_attention(&q, &k, &v).unwrap(), v);
}

#[test]
fn orthogonal_query_averages_values() {
    let q = Tensor::matrix(3, 2, vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
    let k = Tensor::matrix(3, 2, vec![0.0, 1.0, 0.0, -2.0, 0.0, 5.0]).unwrap();
    let v = Tensor::matrix(3, 1, vec![1.0, 2.0, 6.0]).unwrap();
    let o = scaled_dot_attention(&q, &k, &v).unwrap();
    for r in 0..3 {
        assert!((o.get(r, 0) - 3.0).abs() < 1e-12);
    }
}

#[test]
fn two_step_hand_case() {
    let q = Tensor::matrix(2, 1, vec![1.0, 2.0]).unwrap();
    let k = Tensor::matrix(2, 1, vec![0.5, -1.0]).unwrap();
    let v = Tensor::matrix(2, 1, vec![3.0, -1.0]).unwrap();
    let o = scaled_dot_attention(&q, &k, &v).unwrap();
    for (i, qi) in [1.0f64, 2.0].iter().enumerate() {
        let (e0, e1) = ((qi * 0.5).exp(), (qi * -1.0).exp());
        let expect = (3.0 * e0 - e1) / (e0 + e1);
        assert!((o.get(i, 0) - expect).abs() < 1e-12);
    }
}

#[test]
fn attention_rejects_mismatched_shapes() {
    let a = Tensor::zeros(&[3, 2]);
    let b = Tensor::zeros(&[4, 2]);
    assert!(matches!(
        scaled_dot_attention(&a, &b, &b),
        Err(Error::Shape { .. })
    ));
}

#[test]
fn full_band_time_branch_is_plain_attention() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (l, d, h) in [(16, 8, 2), (21, 6, 3), (96, 16, 4)] {
        let x = rand_tensor(&mut rng, l, d);
        let p = BranchProjections::init(d, h, &mut rng).unwrap();
        let band = Band::full(one_sided_len(l));
        let got = run_time(&x, &band, &p);
        let want = reference_mha(&x, &p);
        assert!(got.max_abs_diff(&want) < 1e-10, "L={l}: {}", got.max_abs_diff(&want));
    }
}

#[test]
fn branch_shapes_for_every_band() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (l, d) = (40, 8);
    let x = rand_tensor(&mut rng, l, d);
    let p = BranchProjections::init(d, 4, &mut rng).unwrap();
    let plan = make_plan(3, 0.5, l).unwrap();
    for band in &plan.bands {
        assert_eq!(run_time(&x, band, &p).shape(), &[l, d]);
        assert_eq!(run_freq(&x, band, &p, LagPolicy::default()).0.shape(), &[l, d]);
    }
}

#[test]
fn width_must_split_into_heads() {
    assert!(matches!(
        BranchProjections::identity(6, 4),
        Err(Error::Config(_))
    ));
}

#[test]
fn autocorr_examples() {
    let cases: [(&[f64], [f64; 4]); 3] = [
        (&[1.0, 0.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0]),
        (&[1.0, 0.0, 1.0, 0.0], [2.0, 0.0, 2.0, 0.0]),
        (&[1.0, 1.0, 1.0, 1.0], [4.0, 4.0, 4.0, 4.0]),
    ];
    for (x, want) in cases {
        let s = rfft(&Tensor::matrix(4, 1, x.to_vec()).unwrap()).unwrap();
        let sl = sample(&s, &Band::full(3)).unwrap();
        let r = autocorr_scores(&sl, &sl).unwrap();
        for (a, b) in r.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn autocorr_band_mismatch() {
    let s = rfft(&Tensor::matrix(8, 1, vec![1.0; 8]).unwrap()).unwrap();
    let a = sample(&s, &Band { layer: 1, p: 0, q: 3 }).unwrap();
    let b = sample(&s, &Band { layer: 1, p: 1, q: 4 }).unwrap();
    assert!(autocorr_scores(&a, &b).is_err());
}

#[test]
fn wiener_khinchin_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for l in 2..=64 {
        let q: Vec<f64> = (0..l).map(|_| rng.random_range(-1.0..1.0)).collect();
        let k: Vec<f64> = (0..l).map(|_| rng.random_range(-1.0..1.0)).collect();
        let want = brute_xcorr(&q, &k);
        let sq = sample(&rfft(&Tensor::matrix(l, 1, q.clone()).unwrap()).unwrap(), &Band::full(one_sided_len(l))).unwrap();
        let sk = sample(&rfft(&Tensor::matrix(l, 1, k.clone()).unwrap()).unwrap(), &Band::full(one_sided_len(l))).unwrap();
        let got = autocorr_scores(&sq, &sk).unwrap();

        let mut t = Tape::new();
        let qv = t.constant(Tensor::matrix(l, 1, q).unwrap());
        let kv = t.constant(Tensor::matrix(l, 1, k).unwrap());
        let on_tape = autocorr_on(&mut t, qv, kv, &Band::full(one_sided_len(l))).unwrap();
        for (tau, w) in want.iter().enumerate() {
            assert!((got.data()[tau] - w).abs() < 1e-8, "L={l} τ={tau}");
            assert!((t.value(on_tape).data()[tau] - w).abs() < 1e-8);
        }
    }
}

#[test]
fn select_lags_examples() {
    let s = select_lags(&[2.0, 0.0, 2.0, 0.0], 2).unwrap();
    assert_eq!(s.lags, vec![0, 2]);
    assert_eq!(s.probs, vec![0.5, 0.5]);

    let r = [0.1, 3.0, -1.0, 0.7];
    let all = select_lags(&r, 4).unwrap();
    let sm = softmax_slice(&r);
    for (lag, p) in all.lags.iter().zip(&all.probs) {
        assert!((p - sm[*lag]).abs() < 1e-15);
    }
    assert_eq!(all.lags[0], 1);
    assert!(all.probs[0] > all.probs[1]);

    assert!(matches!(select_lags(&r, 0), Err(Error::Config(_))));
    assert!(matches!(select_lags(&r, 5), Err(Error::Config(_))));
}

#[test]
fn ties_go_to_the_smaller_lag() {
    assert_eq!(top_lags(&[1.0, 5.0, 5.0, 5.0], 2).unwrap(), vec![1, 2]);
}

#[test]
fn lag_policy_counts() {
    assert_eq!(LagPolicy::Factor(3.0).count(96).unwrap(), 13);
    assert_eq!(LagPolicy::Factor(1.0).count(2).unwrap(), 1);
    assert_eq!(LagPolicy::Factor(100.0).count(8).unwrap(), 8);
    assert_eq!(LagPolicy::Direct(5).count(96).unwrap(), 5);
    assert!(LagPolicy::Direct(0).count(96).is_err());
    assert!(LagPolicy::Direct(97).count(96).is_err());
    assert!(LagPolicy::Factor(0.0).count(96).is_err());
}

#[test]
fn aggregation_examples() {
    let v = Tensor::matrix(4, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let half = LagSelection {
        lags: vec![0, 2],
        probs: vec![0.5, 0.5],
    };
    assert_eq!(time_delay_aggregate(&v, &half).unwrap().data(), &[2.0, 3.0, 2.0, 3.0]);
    let id = LagSelection {
        lags: vec![0],
        probs: vec![1.0],
    };
    assert_eq!(time_delay_aggregate(&v, &id).unwrap(), v);
    let one = LagSelection {
        lags: vec![1],
        probs: vec![1.0],
    };
    assert_eq!(time_delay_aggregate(&v, &one).unwrap().data(), &[2.0, 3.0, 4.0, 1.0]);
}

#[test]
fn roll_is_a_bijection() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let v = rand_tensor(&mut rng, 12, 3);
    for tau in 1..12 {
        let fwd = LagSelection { lags: vec![tau], probs: vec![1.0] };
        let back = LagSelection { lags: vec![12 - tau], probs: vec![1.0] };
        let r = time_delay_aggregate(&time_delay_aggregate(&v, &fwd).unwrap(), &back).unwrap();
        assert!(r.max_abs_diff(&v) < 1e-12);
    }
}

#[test]
fn periodic_input_selects_its_period() {
    let (l, tau) = (48, 8);
    let x: Vec<f64> = (0..l)
        .map(|t| (2.0 * std::f64::consts::PI * t as f64 / tau as f64).sin())
        .collect();
    let x = Tensor::matrix(l, 1, x).unwrap();
    let p = BranchProjections::identity(1, 1).unwrap();
    let (_, sels) = run_freq(&x, &Band::full(one_sided_len(l)), &p, LagPolicy::Direct(4));
    let s = &sels[0];
    let top = s.probs.iter().copied().fold(0.0, f64::max);
    let at_period = s
        .lags
        .iter()
        .zip(&s.probs)
        .find(|(&lag, _)| lag > 0 && lag % tau == 0)
        .expect("a multiple of the period is selected");
    assert!((at_period.1 - top).abs() < 1e-9);
    assert!((s.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn branches_are_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = rand_tensor(&mut rng, 24, 8);
    let p = BranchProjections::init(8, 2, &mut rng).unwrap();
    let band = make_plan(2, 0.6, 24).unwrap().bands[0];
    assert_eq!(run_time(&x, &band, &p), run_time(&x, &band, &p));
    assert_eq!(
        run_freq(&x, &band, &p, LagPolicy::default()),
        run_freq(&x, &band, &p, LagPolicy::default())
    );
}

fn weighted_sum(t: &mut Tape<'_>, v: Var, seed: u64) -> crate::Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = t.shape(v);
    let w = rand_tensor(&mut rng, s[0], s[1]);
    let w = t.constant(w);
    let p = t.mul(v, w)?;
    t.sum(p)
}

#[test]
fn time_branch_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = rand_tensor(&mut rng, 16, 4);
    let p = BranchProjections::init(4, 2, &mut rng).unwrap();
    for band in make_plan(2, 0.6, 16).unwrap().bands {
        let err = finite_diff_check(
            |t, xv| {
                let w = p.bind_const(t);
                let o = time_branch(t, xv, &band, &w)?;
                weighted_sum(t, o, 9)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-4, "band {band:?}: {err}");
    }
}

#[test]
fn freq_branch_gradient_with_frozen_lags() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = rand_tensor(&mut rng, 16, 4);
    let p = BranchProjections::init(4, 2, &mut rng).unwrap();
    for band in make_plan(2, 0.6, 16).unwrap().bands {
        let (_, sels) = run_freq(&x, &band, &p, LagPolicy::Direct(3));
        let frozen: Vec<Vec<usize>> = sels.into_iter().map(|s| s.lags).collect();
        let err = finite_diff_check(
            |t, xv| {
                let w = p.bind_const(t);
                let (o, _) = freq_branch(t, xv, &band, &w, LagChoice::Frozen(&frozen))?;
                weighted_sum(t, o, 10)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-4, "band {band:?}: {err}");
    }
}

proptest! {
    #[test]
    fn permuting_tied_lags_leaves_output_unchanged(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = rand_tensor(&mut rng, 10, 2);
        let a = LagSelection { lags: vec![1, 4, 7], probs: vec![0.2, 0.4, 0.4] };
        let b = LagSelection { lags: vec![1, 7, 4], probs: vec![0.2, 0.4, 0.4] };
        let (oa, ob) = (time_delay_aggregate(&v, &a).unwrap(), time_delay_aggregate(&v, &b).unwrap());
        prop_assert!(oa.max_abs_diff(&ob) < 1e-15);
    }
}
