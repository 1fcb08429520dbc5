use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::numeric::Tensor;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn random_series(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

// Direct O(L²) DFT, used as an independent oracle.
fn dft(x: &[f64]) -> Vec<Complex64> {
    let l = x.len();
    (0..l / 2 + 1)
        .map(|j| {
            x.iter().enumerate().fold(Complex64::new(0.0, 0.0), |acc, (t, &v)| {
                let th = -2.0 * std::f64::consts::PI * (j * t) as f64 / l as f64;
                acc + Complex64::new(v * th.cos(), v * th.sin())
            })
        })
        .collect()
}

#[test]
fn small_examples() {
    let s = rfft_series(&[1.0, 1.0, 1.0, 1.0]).unwrap();
    let expect = [4.0, 0.0, 0.0];
    for (j, e) in expect.iter().enumerate() {
        assert!((s.bin(j, 0) - Complex64::new(*e, 0.0)).norm() < 1e-12);
    }
    let s = rfft_series(&[1.0, 0.0, 1.0, 0.0]).unwrap();
    for (j, e) in [2.0, 0.0, 2.0].iter().enumerate() {
        assert!((s.bin(j, 0) - Complex64::new(*e, 0.0)).norm() < 1e-12);
    }
    let bins = vec![
        Complex64::new(0.0, 0.0),
        Complex64::new(2.0, 0.0),
        Complex64::new(0.0, 0.0),
    ];
    let x = irfft(&Spectrum::from_bins(bins, 4, 1).unwrap(), 4).unwrap();
    for (a, b) in x.data().iter().zip([1.0, 0.0, -1.0, 0.0]) {
        assert!(close(*a, b, 1e-12));
    }
}

#[test]
fn short_series_rejected() {
    assert!(rfft_series(&[1.0]).is_err());
}

#[test]
fn matches_direct_dft_per_channel() {
    let (l, c) = (37, 3);
    let data = random_series(l * c, 11);
    let s = rfft(&Tensor::matrix(l, c, data.clone()).unwrap()).unwrap();
    for ch in 0..c {
        let col: Vec<f64> = (0..l).map(|t| data[t * c + ch]).collect();
        for (j, z) in dft(&col).iter().enumerate() {
            assert!((s.bin(j, ch) - z).norm() < 1e-10);
        }
    }
}

#[test]
fn parseval_over_lengths() {
    for l in 8..=512 {
        let x = random_series(l, l as u64);
        let s = rfft_series(&x).unwrap();
        let time: f64 = x.iter().map(|v| v * v).sum::<f64>() * l as f64;
        assert!(
            (s.energy(0) - time).abs() <= 1e-9 * time.max(1.0),
            "L={l}: {} vs {time}",
            s.energy(0)
        );
    }
}

#[test]
fn irfft_rejects_complex_dc_and_wrong_length() {
    let mut bins = vec![Complex64::new(0.0, 0.0); 3];
    bins[0].im = 1e-3;
    let s = Spectrum::from_bins(bins.clone(), 4, 1).unwrap();
    assert!(irfft(&s, 4).is_err());
    bins[0].im = 0.0;
    bins[2].im = 1e-3;
    let s = Spectrum::from_bins(bins.clone(), 4, 1).unwrap();
    assert!(irfft(&s, 4).is_err());
    // Odd length has no Nyquist bin, so the last bin may be complex.
    let s = Spectrum::from_bins(bins, 5, 1).unwrap();
    assert!(irfft(&s, 5).is_ok());
    assert!(irfft(&s, 4).is_err());
}

#[test]
fn sample_then_pad_equals_mask() {
    let l = 50;
    let x = Tensor::matrix(l, 2, random_series(l * 2, 3)).unwrap();
    let s = rfft(&x).unwrap();
    let m = s.len();
    for (p, q) in [(0, 1), (0, m), (5, 12), (m - 1, m), (20, 26)] {
        let band = Band { layer: 1, p, q };
        let sl = sample(&s, &band).unwrap();
        assert_eq!(sl.width, q - p);
        let padded = zero_pad(&sl, p, m).unwrap();
        for j in 0..m {
            for c in 0..2 {
                let expect = if (p..q).contains(&j) {
                    s.bin(j, c)
                } else {
                    Complex64::new(0.0, 0.0)
                };
                assert_eq!(padded.bin(j, c), expect);
            }
        }
    }
}

#[test]
fn sample_and_pad_bounds() {
    let s = rfft_series(&random_series(16, 0)).unwrap();
    assert!(sample(&s, &Band { layer: 1, p: 3, q: 3 }).is_err());
    assert!(sample(&s, &Band { layer: 1, p: 0, q: 10 }).is_err());
    let sl = sample(&s, &Band { layer: 1, p: 0, q: 4 }).unwrap();
    assert!(zero_pad(&sl, 6, 9).is_err());
    assert!(zero_pad(&sl, 0, 8).is_err());
}

#[test]
fn white_noise_has_low_frequency_weight() {
    let mut w: Vec<f64> = (0..100)
        .map(|seed| harmonic_energy_ratio(&random_series(96, 1000 + seed), 3).unwrap().w_f)
        .collect();
    w.sort_by(f64::total_cmp);
    let median = (w[49] + w[50]) / 2.0;
    assert!(median < 0.3, "median w_f {median}");
}

#[test]
fn arbitrary_scaling_changes_ratio_by_rounding_only() {
    let x = random_series(96, 21);
    let base = harmonic_energy_ratio(&x, 3).unwrap();
    for c in [1e-6, 0.37, 3.0, 1234.5] {
        let y: Vec<f64> = x.iter().map(|v| v * c).collect();
        let r = harmonic_energy_ratio(&y, 3).unwrap();
        assert_eq!(r.basis_freq, base.basis_freq);
        assert!(close(r.w_f, base.w_f, 1e-12));
    }
}

#[test]
fn theorem_holds_on_random_decompositions() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut checked = 0;
    let mut seed = 0;
    while checked < 200 {
        seed += 1;
        let period = [4usize, 6, 8, 12, 16, 24][rng.random_range(0..6)];
        let repeats = rng.random_range(2..=12);
        let n_coeffs = rng.random_range(1..=period / 2);
        let coeffs: Vec<f64> = (0..n_coeffs).map(|_| rng.random_range(-1.0..1.0)).collect();
        let sigma = rng.random_range(0.01..0.4);
        let spec =
            SyntheticPeriodicSignal::with_length(period * repeats, period, coeffs, sigma, seed)
                .unwrap();
        let r = verify_theorem(&spec).unwrap();
        if r.lambda <= 4.0 {
            continue;
        }
        assert!(r.holds, "{spec:?}: {r:?}");
        checked += 1;
    }
}

#[test]
fn plan_grid_tiles_and_overlaps() {
    for l in 8..=256 {
        let m = l / 2 + 1;
        for n in 1..=6usize {
            if m < n {
                assert!(make_plan(n, 0.5, l).is_err());
                continue;
            }
            for a in 1..=20 {
                let alpha = a as f64 / 20.0;
                let plan = make_plan(n, alpha, l).unwrap();
                assert_eq!(plan.bands.len(), n);
                assert_eq!(plan.band(n).p, 0, "L={l} N={n} α={alpha}");
                for b in &plan.bands {
                    assert!(b.p < b.q && b.q <= m);
                }
                match plan.regime {
                    Regime::Case1 => {
                        assert_eq!(plan.band(1).q, m);
                        for i in 1..n {
                            assert_eq!(plan.overlap(i), 0);
                        }
                    }
                    Regime::Case2 => {
                        let nominal = plan.nominal_overlap();
                        for i in 1..n {
                            let o = plan.overlap(i) as f64;
                            assert!((o - nominal).abs() <= 1.0, "L={l} N={n} α={alpha}: {o} vs {nominal}");
                        }
                    }
                }
            }
        }
    }
}

proptest! {
    #[test]
    fn round_trip(len in 2usize..300, seed in any::<u64>()) {
        let x = random_series(len, seed);
        let back = irfft(&rfft_series(&x).unwrap(), len).unwrap();
        for (a, b) in back.data().iter().zip(&x) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
