use rustfft::num_complex::Complex64;

use crate::error::{contract, Error, Result};
use crate::numeric::fft::{irfft_columns, one_sided_len, one_sided_weight, rfft_columns};
use crate::numeric::Tensor;

use super::plan::Band;

/// One-sided spectrum of a real `L×C` series.
///
/// `bins` is `M×C` row-major with `M = ⌊L/2⌋ + 1`. The forward transform is
/// unnormalized; [`irfft`] carries the `1/L`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    bins: Vec<Complex64>,
    series_len: usize,
    channels: usize,
}

/// A contiguous band of bins cut out of a [`Spectrum`].
#[derive(Clone, Debug, PartialEq)]
pub struct SlicedSpectrum {
    pub bins: Vec<Complex64>,
    /// First bin index in the parent spectrum.
    pub start: usize,
    pub width: usize,
    pub channels: usize,
    pub series_len: usize,
}

impl Spectrum {
    pub fn from_bins(bins: Vec<Complex64>, series_len: usize, channels: usize) -> Result<Self> {
        let m = one_sided_len(series_len);
        if channels == 0 || bins.len() != m * channels {
            return Err(contract(format!(
                "spectrum of length {series_len} needs {m}x{channels} bins, got {}",
                bins.len()
            )));
        }
        Ok(Self {
            bins,
            series_len,
            channels,
        })
    }

    pub fn series_len(&self) -> usize {
        self.series_len
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Number of bins `M`.
    pub fn len(&self) -> usize {
        self.bins.len() / self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn bin(&self, j: usize, channel: usize) -> Complex64 {
        self.bins[j * self.channels + channel]
    }

    pub fn bins(&self) -> &[Complex64] {
        &self.bins
    }

    /// Magnitudes of one channel.
    pub fn magnitudes(&self, channel: usize) -> Vec<f64> {
        (0..self.len()).map(|j| self.bin(j, channel).norm()).collect()
    }

    /// Two-sided-equivalent energy of one bin: `w_j·|F[j]|²` with weight 1
    /// at DC and (even `L`) Nyquist, 2 elsewhere.
    pub fn bin_energy(&self, j: usize, channel: usize) -> f64 {
        one_sided_weight(j, self.series_len) * self.bin(j, channel).norm_sqr()
    }

    /// Σ_j w_j·|F[j]|² over all bins of one channel. Equals `L·Σ_t x_t²`.
    pub fn energy(&self, channel: usize) -> f64 {
        (0..self.len()).map(|j| self.bin_energy(j, channel)).sum()
    }
}

/// Forward real FFT along the time axis of an `L×C` tensor.
pub fn rfft(x: &Tensor) -> Result<Spectrum> {
    let (l, c) = match x.shape() {
        [l] => (*l, 1),
        [l, c] => (*l, *c),
        s => {
            return Err(Error::Shape {
                op: "rfft",
                lhs: s.to_vec(),
                rhs: vec![],
            })
        }
    };
    if l < 2 {
        return Err(contract(format!("rfft needs L >= 2, got {l}")));
    }
    let (re, im) = rfft_columns(x.data(), l, c);
    let bins = re.into_iter().zip(im).map(|(r, i)| Complex64::new(r, i)).collect();
    Spectrum::from_bins(bins, l, c)
}

/// Forward real FFT of a single-channel series.
pub fn rfft_series(x: &[f64]) -> Result<Spectrum> {
    rfft(&Tensor::new(vec![x.len().max(1)], x.to_vec())?)
}

/// Inverse real FFT back to an `L×C` tensor.
///
/// Bin 0 (and the Nyquist bin for even `L`) must be real within
/// `1e-12·max(1, max|bin|)`.
pub fn irfft(s: &Spectrum, len: usize) -> Result<Tensor> {
    if s.series_len != len {
        return Err(contract(format!(
            "irfft: spectrum built for length {}, asked for {len}",
            s.series_len
        )));
    }
    let scale = s.bins.iter().map(|z| z.norm()).fold(1.0, f64::max);
    let tol = 1e-12 * scale;
    let m = s.len();
    for c in 0..s.channels {
        if s.bin(0, c).im.abs() > tol {
            return Err(contract(format!("irfft: DC bin of channel {c} is not real")));
        }
        if len.is_multiple_of(2) && s.bin(m - 1, c).im.abs() > tol {
            return Err(contract(format!("irfft: Nyquist bin of channel {c} is not real")));
        }
    }
    let re: Vec<f64> = s.bins.iter().map(|z| z.re).collect();
    let im: Vec<f64> = s.bins.iter().map(|z| z.im).collect();
    Tensor::matrix(len, s.channels, irfft_columns(&re, &im, len, s.channels))
}

/// Copy the bins of `band` verbatim.
pub fn sample(s: &Spectrum, band: &Band) -> Result<SlicedSpectrum> {
    let m = s.len();
    if band.p >= band.q || band.q > m {
        return Err(contract(format!(
            "band [{}, {}) outside [0, {m})",
            band.p, band.q
        )));
    }
    let c = s.channels;
    Ok(SlicedSpectrum {
        bins: s.bins[band.p * c..band.q * c].to_vec(),
        start: band.p,
        width: band.q - band.p,
        channels: c,
        series_len: s.series_len,
    })
}

/// Place a sliced band at offset `p` inside `m` zero bins.
pub fn zero_pad(sliced: &SlicedSpectrum, p: usize, m: usize) -> Result<Spectrum> {
    if p + sliced.width > m {
        return Err(contract(format!(
            "zero_pad: {} bins at offset {p} overflow {m}",
            sliced.width
        )));
    }
    if m != one_sided_len(sliced.series_len) {
        return Err(contract(format!(
            "zero_pad: {m} bins do not match series length {}",
            sliced.series_len
        )));
    }
    let c = sliced.channels;
    let mut bins = vec![Complex64::new(0.0, 0.0); m * c];
    bins[p * c..(p + sliced.width) * c].copy_from_slice(&sliced.bins);
    Spectrum::from_bins(bins, sliced.series_len, c)
}
