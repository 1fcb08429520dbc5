//! Executable check of the harmonic-energy lower bound.
//!
//! For `f = f_p + f_r` with `f_p` exactly `τ`-periodic on `L = mτ` samples
//! and `λ = E_p/E_r > 4`, the share of spectral energy on the harmonics of
//! the basis bin `k = L/τ` is at least `(λ − 2√λ)/(λ − 2√λ + 1)`.

use serde::{Deserialize, Serialize};

use crate::data::synth_generate;
use crate::error::{contract, Result};

use super::spectrum::rfft_series;

/// Parameters of a synthetic periodic-plus-noise signal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticPeriodicSignal {
    /// Period `τ` in samples.
    pub period: usize,
    /// Number of whole periods `m`; the series length is `m·τ`.
    pub repeats: usize,
    /// Amplitudes `c_j` of the harmonics `j/τ`, `j = 1, 2, …`.
    pub harmonic_coeffs: Vec<f64>,
    /// Standard deviation of the iid Gaussian residual.
    pub residual_sigma: f64,
    pub seed: u64,
}

impl SyntheticPeriodicSignal {
    /// Build from a total length, failing unless `len` is a multiple of
    /// `period`.
    pub fn with_length(
        len: usize,
        period: usize,
        harmonic_coeffs: Vec<f64>,
        residual_sigma: f64,
        seed: u64,
    ) -> Result<Self> {
        if period == 0 || !len.is_multiple_of(period) {
            return Err(contract(format!(
                "series length {len} is not a multiple of the period {period}"
            )));
        }
        Ok(Self {
            period,
            repeats: len / period,
            harmonic_coeffs,
            residual_sigma,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.period * self.repeats
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Basis bin `k = L/τ = m`.
    pub fn basis_bin(&self) -> usize {
        self.repeats
    }
}

/// Value of the lower bound at a given `λ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowerBound {
    pub value: f64,
    /// False for `λ ≤ 4`, where the bound is reported as 0.
    pub binding: bool,
}

/// `(λ − 2√λ)/(λ − 2√λ + 1)` for `λ > 4`; a non-binding 0 for `0 < λ ≤ 4`.
pub fn theorem_lower_bound(lambda: f64) -> Result<LowerBound> {
    if lambda.is_nan() || lambda <= 0.0 {
        return Err(contract(format!("lambda must be positive, got {lambda}")));
    }
    if lambda <= 4.0 {
        return Ok(LowerBound {
            value: 0.0,
            binding: false,
        });
    }
    if lambda.is_infinite() {
        return Ok(LowerBound {
            value: 1.0,
            binding: true,
        });
    }
    let a = lambda - 2.0 * lambda.sqrt();
    Ok(LowerBound {
        value: a / (a + 1.0),
        binding: true,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoremReport {
    pub lambda: f64,
    pub ratio: f64,
    pub bound: f64,
    pub binding: bool,
    pub holds: bool,
}

/// Slack allowed for rounding when comparing the measured ratio with the
/// bound.
pub const THEOREM_SLACK: f64 = 1e-9;

/// Generate `spec`, measure the energy share on all harmonics of `L/τ` below
/// or at Nyquist, and compare with the bound at the realized `λ`.
pub fn verify_theorem(spec: &SyntheticPeriodicSignal) -> Result<TheoremReport> {
    let sig = synth_generate(spec)?;
    if sig.energy_residual <= 0.0 {
        return Err(contract("residual energy must be positive"));
    }
    let s = rfft_series(&sig.series)?;
    let k = spec.basis_bin();
    let m = s.len();
    let e_h: f64 = (1..).map(|i| i * k).take_while(|&j| j < m).map(|j| s.bin_energy(j, 0)).sum();
    let e_f = s.energy(0);
    let ratio = if e_f > 0.0 { e_h / e_f } else { 0.0 };
    let bound = theorem_lower_bound(sig.lambda)?;
    let holds = !bound.binding || ratio >= bound.value - THEOREM_SLACK;
    Ok(TheoremReport {
        lambda: sig.lambda,
        ratio,
        bound: bound.value,
        binding: bound.binding,
        holds,
    })
}
