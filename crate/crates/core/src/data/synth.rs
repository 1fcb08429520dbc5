use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::numeric::Tensor;
use crate::spectral::SyntheticPeriodicSignal;

use super::Dataset;

/// Smallest residual standard deviation, so `λ` stays finite.
pub const MIN_SIGMA: f64 = 1e-12;

/// A generated series with its ground-truth decomposition.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSeries {
    pub series: Vec<f64>,
    /// Exactly `τ`-periodic part.
    pub periodic: Vec<f64>,
    pub residual: Vec<f64>,
    pub energy_periodic: f64,
    pub energy_residual: f64,
    /// `E_p / E_r` from the realized samples.
    pub lambda: f64,
}

/// `f = f_p + f_r` with `f_p[t] = Σ_j c_j·sin(2π j t/τ + φ_j)` and iid
/// Gaussian `f_r`. Phases are drawn from the seed.
pub fn synth_generate(spec: &SyntheticPeriodicSignal) -> Result<SyntheticSeries> {
    let tau = spec.period;
    if tau < 2 || spec.repeats == 0 {
        return Err(contract(format!(
            "need period ≥ 2 and at least one repeat, got τ={tau}, m={}",
            spec.repeats
        )));
    }
    if spec.harmonic_coeffs.is_empty() || spec.harmonic_coeffs.len() > tau / 2 {
        return Err(contract(format!(
            "need between 1 and τ/2 = {} harmonic coefficients, got {}",
            tau / 2,
            spec.harmonic_coeffs.len()
        )));
    }
    if !spec.residual_sigma.is_finite() || spec.residual_sigma < 0.0 {
        return Err(contract(format!(
            "residual sigma must be finite and non-negative, got {}",
            spec.residual_sigma
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let phases: Vec<f64> = spec
        .harmonic_coeffs
        .iter()
        .map(|_| rng.random::<f64>() * TAU)
        .collect();

    // One period is computed and then tiled, so periodicity is exact.
    let period: Vec<f64> = (0..tau)
        .map(|t| {
            spec.harmonic_coeffs
                .iter()
                .zip(&phases)
                .enumerate()
                .map(|(j, (c, ph))| c * (TAU * (j + 1) as f64 * t as f64 / tau as f64 + ph).sin())
                .sum()
        })
        .collect();
    let len = spec.len();
    let periodic: Vec<f64> = period.iter().copied().cycle().take(len).collect();

    let sigma = spec.residual_sigma.max(MIN_SIGMA);
    let normal = Normal::new(0.0, sigma).map_err(|e| contract(e.to_string()))?;
    let residual: Vec<f64> = (0..len).map(|_| normal.sample(&mut rng)).collect();

    let series = periodic.iter().zip(&residual).map(|(p, r)| p + r).collect();
    let energy_periodic: f64 = periodic.iter().map(|v| v * v).sum();
    let energy_residual: f64 = residual.iter().map(|v| v * v).sum();
    Ok(SyntheticSeries {
        series,
        periodic,
        residual,
        energy_periodic,
        energy_residual,
        lambda: energy_periodic / energy_residual,
    })
}

/// Multichannel sum of sinusoids plus Gaussian noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub len: usize,
    pub channels: usize,
    /// Periods in samples; need not be integers.
    pub periods: Vec<f64>,
    pub amplitudes: Vec<f64>,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl MixtureSpec {
    /// Two sinusoids (periods 24 and 12) with light noise.
    pub fn two_tone(len: usize, channels: usize, seed: u64) -> Self {
        Self {
            len,
            channels,
            periods: vec![24.0, 12.0],
            amplitudes: vec![1.0, 0.5],
            noise_sigma: 0.05,
            seed,
        }
    }
}

/// Each channel uses the same periods with its own random phases.
pub fn sine_mixture(spec: &MixtureSpec) -> Result<Dataset> {
    if spec.len == 0 || spec.channels == 0 {
        return Err(contract("mixture needs a positive length and channel count"));
    }
    if spec.periods.len() != spec.amplitudes.len() || spec.periods.iter().any(|&p| p <= 0.0) {
        return Err(contract("periods and amplitudes must pair up, with positive periods"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let phases: Vec<f64> = (0..spec.channels * spec.periods.len())
        .map(|_| rng.random::<f64>() * TAU)
        .collect();
    let normal =
        Normal::new(0.0, spec.noise_sigma.max(0.0)).map_err(|e| contract(e.to_string()))?;
    let k = spec.periods.len();
    let mut data = Vec::with_capacity(spec.len * spec.channels);
    for t in 0..spec.len {
        for c in 0..spec.channels {
            let clean: f64 = (0..k)
                .map(|i| {
                    spec.amplitudes[i] * (TAU * t as f64 / spec.periods[i] + phases[c * k + i]).sin()
                })
                .sum();
            data.push(clean + normal.sample(&mut rng));
        }
    }
    Dataset::new(
        "sine_mixture",
        Tensor::matrix(spec.len, spec.channels, data)?,
        (0..spec.channels).map(|c| format!("s{c}")).collect(),
    )
}
