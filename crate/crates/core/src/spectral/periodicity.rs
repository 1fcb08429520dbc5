//! Basis-frequency detection and the harmonic energy ratio used to weight
//! the two branches.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};

use super::spectrum::{rfft_series, Spectrum};

/// Branch weights derived from the harmonic energy ratio of a series.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodicityWeight {
    /// Frequency-branch weight `E_h / E_f`.
    pub w_f: f64,
    /// Time-branch weight `1 − w_f`.
    pub w_t: f64,
    pub basis_freq: usize,
    pub n_harmonics: usize,
}

impl PeriodicityWeight {
    pub fn from_ratio(ratio: f64, basis_freq: usize, n_harmonics: usize) -> Self {
        let w_f = ratio.clamp(0.0, 1.0);
        Self {
            w_f,
            w_t: 1.0 - w_f,
            basis_freq,
            n_harmonics,
        }
    }
}

// Relative ties: magnitudes this close to the maximum count as equal.
const TIE_RTOL: f64 = 1e-9;

/// Dominant non-DC bin of one channel.
///
/// DC is zeroed, magnitudes are normalized to sum to one and the argmax over
/// bins `≥ 1` is returned, lowest index first among (near-)ties. A channel
/// whose non-DC magnitudes are all below `1e-12` (relative to the total
/// magnitude, floored at 1) has no dominant frequency.
pub fn peak_detect_channel(s: &Spectrum, channel: usize) -> Result<usize> {
    if s.len() < 2 {
        return Err(contract("peak detection needs at least 2 bins"));
    }
    let mut mags = s.magnitudes(channel);
    let scale = mags.iter().sum::<f64>().max(1.0);
    mags[0] = 0.0;
    let total: f64 = mags.iter().sum();
    if mags.iter().all(|&v| v < 1e-12 * scale) {
        return Err(Error::NoDominantFrequency { channel });
    }
    for v in &mut mags {
        *v /= total;
    }
    let max = mags[1..].iter().copied().fold(0.0, f64::max);
    let k = (1..mags.len())
        .find(|&j| mags[j] >= max * (1.0 - TIE_RTOL))
        .expect("max is attained");
    Ok(k)
}

/// [`peak_detect_channel`] over every channel.
pub fn peak_detect(s: &Spectrum) -> Result<Vec<usize>> {
    (0..s.channels()).map(|c| peak_detect_channel(s, c)).collect()
}

/// Harmonic energy ratio of one channel of an existing spectrum.
pub fn harmonic_weight(s: &Spectrum, channel: usize, n_harmonics: usize) -> Result<PeriodicityWeight> {
    if n_harmonics == 0 {
        return Err(contract("harmonic count must be at least 1"));
    }
    let e_f = s.energy(channel);
    if e_f == 0.0 {
        return Err(Error::DegenerateSignal);
    }
    let k = peak_detect_channel(s, channel)?;
    let m = s.len();
    let e_h: f64 = (1..=n_harmonics)
        .map(|i| i * k)
        .take_while(|&j| j < m)
        .map(|j| s.bin_energy(j, channel))
        .sum();
    Ok(PeriodicityWeight::from_ratio(e_h / e_f, k, n_harmonics))
}

/// `w_f = E_h/E_f` with `E_h` summed over the first `n_harmonics` multiples
/// of the detected basis bin (those at or beyond `M` are dropped) and `E_f`
/// over all `M` bins, both with one-sided energy weights.
pub fn harmonic_energy_ratio(x: &[f64], n_harmonics: usize) -> Result<PeriodicityWeight> {
    let s = rfft_series(x)?;
    harmonic_weight(&s, 0, n_harmonics)
}
