//! Real-input FFT kernels along the leading (time) axis of row-major `L×d`
//! buffers.
//!
//! Convention: the forward transform is unnormalized,
//! `X[j] = Σ_t x[t]·e^{-2πi·jt/L}`, and the inverse carries the `1/L`
//! factor. Only the `M = ⌊L/2⌋ + 1` non-redundant bins are stored; the
//! imaginary parts of bin 0 (and of the Nyquist bin when `L` is even) are
//! exactly zero on output and ignored on input.

use std::cell::RefCell;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(len)
        } else {
            p.plan_fft_forward(len)
        }
    })
}

/// Number of one-sided bins for a length-`len` real series.
pub fn one_sided_len(len: usize) -> usize {
    len / 2 + 1
}

/// Weight of bin `j` when folding one-sided energy back to two-sided:
/// 1 for DC and (even `len`) Nyquist, 2 otherwise.
pub fn one_sided_weight(j: usize, len: usize) -> f64 {
    if j == 0 || (len.is_multiple_of(2) && j == len / 2) {
        1.0
    } else {
        2.0
    }
}

/// Forward real FFT of every column of an `l×d` buffer. Returns `(re, im)`,
/// each `M×d`.
pub fn rfft_columns(x: &[f64], l: usize, d: usize) -> (Vec<f64>, Vec<f64>) {
    let m = one_sided_len(l);
    let fft = plan(l, false);
    let mut buf = vec![Complex64::new(0.0, 0.0); l];
    let mut re = vec![0.0; m * d];
    let mut im = vec![0.0; m * d];
    for c in 0..d {
        for (t, z) in buf.iter_mut().enumerate() {
            *z = Complex64::new(x[t * d + c], 0.0);
        }
        fft.process(&mut buf);
        for j in 0..m {
            re[j * d + c] = buf[j].re;
            im[j * d + c] = buf[j].im;
        }
        im[c] = 0.0;
        if l.is_multiple_of(2) {
            im[(m - 1) * d + c] = 0.0;
        }
    }
    (re, im)
}

/// Inverse real FFT of `M×d` one-sided bins to an `l×d` buffer, assuming the
/// Hermitian extension. Imaginary parts at DC/Nyquist are ignored.
pub fn irfft_columns(re: &[f64], im: &[f64], l: usize, d: usize) -> Vec<f64> {
    let m = one_sided_len(l);
    let fft = plan(l, true);
    let mut buf = vec![Complex64::new(0.0, 0.0); l];
    let mut out = vec![0.0; l * d];
    let scale = 1.0 / l as f64;
    for c in 0..d {
        buf[0] = Complex64::new(re[c], 0.0);
        for j in 1..m {
            let z = Complex64::new(re[j * d + c], im[j * d + c]);
            if 2 * j == l {
                buf[j] = Complex64::new(z.re, 0.0);
            } else {
                buf[j] = z;
                buf[l - j] = z.conj();
            }
        }
        fft.process(&mut buf);
        for t in 0..l {
            out[t * d + c] = buf[t].re * scale;
        }
    }
    out
}

/// Adjoint of [`rfft_columns`]: maps cotangents on `(re, im)` back to the
/// `l×d` input.
pub fn rfft_adjoint(g_re: Option<&[f64]>, g_im: Option<&[f64]>, l: usize, d: usize) -> Vec<f64> {
    let m = one_sided_len(l);
    let fft = plan(l, true);
    let mut buf = vec![Complex64::new(0.0, 0.0); l];
    let mut out = vec![0.0; l * d];
    for c in 0..d {
        buf.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
        for (j, z) in buf.iter_mut().enumerate().take(m) {
            let r = g_re.map_or(0.0, |g| g[j * d + c]);
            let i = g_im.map_or(0.0, |g| g[j * d + c]);
            *z = Complex64::new(r, i);
        }
        // Output imaginary parts at DC/Nyquist are constants, not functions of x.
        buf[0].im = 0.0;
        if l.is_multiple_of(2) {
            buf[m - 1].im = 0.0;
        }
        fft.process(&mut buf);
        for t in 0..l {
            out[t * d + c] = buf[t].re;
        }
    }
    out
}

/// Adjoint of [`irfft_columns`]: maps an `l×d` cotangent to cotangents on
/// the one-sided `(re, im)` bins.
pub fn irfft_adjoint(g: &[f64], l: usize, d: usize) -> (Vec<f64>, Vec<f64>) {
    let m = one_sided_len(l);
    let (mut re, mut im) = rfft_columns(g, l, d);
    let inv = 1.0 / l as f64;
    for j in 0..m {
        let w = one_sided_weight(j, l) * inv;
        for c in 0..d {
            re[j * d + c] *= w;
            im[j * d + c] *= w;
        }
    }
    (re, im)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn naive_dft(x: &[f64]) -> Vec<(f64, f64)> {
        let l = x.len();
        (0..one_sided_len(l))
            .map(|j| {
                x.iter().enumerate().fold((0.0, 0.0), |(r, i), (t, &v)| {
                    let th = -2.0 * PI * (j * t) as f64 / l as f64;
                    (r + v * th.cos(), i + v * th.sin())
                })
            })
            .collect()
    }

    #[test]
    fn matches_direct_dft_for_odd_and_even_lengths() {
        for l in [2usize, 3, 7, 12, 96, 97] {
            let x: Vec<f64> = (0..l).map(|t| ((t * 7 + 3) % 11) as f64 - 5.0).collect();
            let (re, im) = rfft_columns(&x, l, 1);
            for (j, (r, i)) in naive_dft(&x).into_iter().enumerate() {
                assert!((re[j] - r).abs() < 1e-9, "l={l} j={j}");
                assert!((im[j] - i).abs() < 1e-9, "l={l} j={j}");
            }
        }
    }

    #[test]
    fn round_trip_multi_column() {
        let (l, d) = (10, 3);
        let x: Vec<f64> = (0..l * d).map(|i| (i as f64 * 0.37).sin()).collect();
        let (re, im) = rfft_columns(&x, l, d);
        let y = irfft_columns(&re, &im, l, d);
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn adjoints_satisfy_inner_product_identity() {
        // <rfft(x), g> == <x, rfft_adjoint(g)> and likewise for irfft.
        for l in [8usize, 9] {
            let m = one_sided_len(l);
            let x: Vec<f64> = (0..l).map(|t| (t as f64 * 1.3).cos() + 0.1 * t as f64).collect();
            let gr: Vec<f64> = (0..m).map(|j| (j as f64 * 0.7).sin()).collect();
            let gi: Vec<f64> = (0..m).map(|j| (j as f64 * 0.4).cos()).collect();
            let (re, im) = rfft_columns(&x, l, 1);
            let lhs: f64 = re.iter().zip(&gr).map(|(a, b)| a * b).sum::<f64>()
                + im.iter().zip(&gi).map(|(a, b)| a * b).sum::<f64>();
            let adj = rfft_adjoint(Some(&gr), Some(&gi), l, 1);
            let rhs: f64 = x.iter().zip(&adj).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10, "rfft adjoint l={l}");

            let mut sr = gr.clone();
            let mut si = gi.clone();
            si[0] = 0.0;
            if l % 2 == 0 {
                si[m - 1] = 0.0;
            }
            sr[0] += 0.5;
            let y = irfft_columns(&sr, &si, l, 1);
            let lhs: f64 = y.iter().zip(&x).map(|(a, b)| a * b).sum();
            let (ar, ai) = irfft_adjoint(&x, l, 1);
            let rhs: f64 = sr.iter().zip(&ar).map(|(a, b)| a * b).sum::<f64>()
                + si.iter().zip(&ai).map(|(a, b)| a * b).sum::<f64>();
            assert!((lhs - rhs).abs() < 1e-10, "irfft adjoint l={l}");
        }
    }
}
