//! One-sided spectra, hierarchical frequency sampling, periodicity weighting
//! and the harmonic-energy lower bound.

mod periodicity;
mod plan;
mod spectrum;
mod theorem;

pub use periodicity::{
    harmonic_energy_ratio, harmonic_weight, peak_detect, peak_detect_channel, PeriodicityWeight,
};
pub use plan::{make_plan, Band, Regime, SamplingPlan};
pub use rustfft::num_complex::Complex64;
pub use spectrum::{irfft, rfft, rfft_series, sample, zero_pad, SlicedSpectrum, Spectrum};
pub use theorem::{
    theorem_lower_bound, verify_theorem, LowerBound, SyntheticPeriodicSignal, TheoremReport,
    THEOREM_SLACK,
};

#[cfg(test)]
mod tests;
