//! The two branch mechanisms: band-limited self-attention in the time
//! domain and autocorrelation attention with time-delay aggregation.
//!
//! Inputs are `L×D` with rows as time steps. Projections act on the right,
//! `Q = x·W_Q`. Heads own contiguous column blocks of width `d_k = D/h`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, contract, Error, Result};
use crate::numeric::fft::one_sided_len;
use crate::numeric::{softmax_slice, Tape, Tensor, Var};
use crate::spectral::{irfft, zero_pad, Band, Complex64, SlicedSpectrum, Spectrum};

/// Query, key, value and output projections of one branch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchProjections {
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    pub w_out: Tensor,
    pub heads: usize,
}

impl BranchProjections {
    pub fn new(w_q: Tensor, w_k: Tensor, w_v: Tensor, w_out: Tensor, heads: usize) -> Result<Self> {
        let d = w_q.rows();
        for w in [&w_q, &w_k, &w_v, &w_out] {
            if w.shape() != [d, d] {
                return Err(contract(format!(
                    "projection of shape {:?} is not {d}x{d}",
                    w.shape()
                )));
            }
        }
        if heads == 0 || !d.is_multiple_of(heads) {
            return Err(config(format!("model width {d} is not divisible by {heads} heads")));
        }
        Ok(Self {
            w_q,
            w_k,
            w_v,
            w_out,
            heads,
        })
    }

    /// All four matrices drawn from `U(−1/√D, 1/√D)`.
    pub fn init(d: usize, heads: usize, rng: &mut impl Rng) -> Result<Self> {
        let bound = 1.0 / (d as f64).sqrt();
        let mut draw = || {
            Tensor::matrix(d, d, (0..d * d).map(|_| rng.random_range(-bound..bound)).collect())
        };
        Self::new(draw()?, draw()?, draw()?, draw()?, heads)
    }

    /// All four as identities, for tests and the reference reductions.
    pub fn identity(d: usize, heads: usize) -> Result<Self> {
        let i = Tensor::identity(d);
        Self::new(i.clone(), i.clone(), i.clone(), i, heads)
    }

    pub fn d_model(&self) -> usize {
        self.w_q.rows()
    }

    pub fn d_k(&self) -> usize {
        self.d_model() / self.heads
    }

    /// Register the weights on `tape` as trainable parameters.
    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>) -> BranchVars {
        BranchVars {
            w_q: tape.param(&self.w_q),
            w_k: tape.param(&self.w_k),
            w_v: tape.param(&self.w_v),
            w_out: tape.param(&self.w_out),
            heads: self.heads,
        }
    }

    /// Register the weights as constants.
    pub fn bind_const(&self, tape: &mut Tape<'_>) -> BranchVars {
        BranchVars {
            w_q: tape.constant(self.w_q.clone()),
            w_k: tape.constant(self.w_k.clone()),
            w_v: tape.constant(self.w_v.clone()),
            w_out: tape.constant(self.w_out.clone()),
            heads: self.heads,
        }
    }
}

/// Tape handles for a bound [`BranchProjections`].
#[derive(Clone, Copy, Debug)]
pub struct BranchVars {
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
    pub w_out: Var,
    pub heads: usize,
}

/// How many lags the frequency branch keeps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", content = "k", rename_all = "lowercase")]
pub enum LagPolicy {
    /// `min(L, max(1, ⌊k·ln L⌋))`.
    Factor(f64),
    /// Exactly `k`.
    Direct(usize),
}

impl Default for LagPolicy {
    fn default() -> Self {
        LagPolicy::Factor(3.0)
    }
}

impl LagPolicy {
    pub fn count(&self, len: usize) -> Result<usize> {
        match *self {
            LagPolicy::Factor(k) => {
                if !(k.is_finite() && k > 0.0) {
                    return Err(config(format!("lag factor must be positive, got {k}")));
                }
                let c = (k * (len as f64).ln()).floor();
                Ok((c.max(1.0) as usize).min(len))
            }
            LagPolicy::Direct(k) => {
                if k == 0 || k > len {
                    return Err(config(format!("lag count {k} outside [1, {len}]")));
                }
                Ok(k)
            }
        }
    }
}

/// Lags chosen by one head together with their softmax weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LagSelection {
    pub lags: Vec<usize>,
    pub probs: Vec<f64>,
}

/// Indices of the `count` largest scores, ties toward smaller lags.
pub fn top_lags(scores: &[f64], count: usize) -> Result<Vec<usize>> {
    if count == 0 || count > scores.len() {
        return Err(config(format!(
            "lag count {count} outside [1, {}]",
            scores.len()
        )));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx.truncate(count);
    Ok(idx)
}

/// Top-`count` lags of `scores` and the softmax of their raw scores.
pub fn select_lags(scores: &[f64], count: usize) -> Result<LagSelection> {
    let lags = top_lags(scores, count)?;
    let raw: Vec<f64> = lags.iter().map(|&t| scores[t]).collect();
    Ok(LagSelection {
        probs: softmax_slice(&raw),
        lags,
    })
}

/// `Σ_i probs_i · Roll(v, τ_i)` with `Roll(v, τ)[t] = v[(t + τ) mod L]`.
pub fn time_delay_aggregate(v: &Tensor, sel: &LagSelection) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vv = tape.constant(v.clone());
    let p = tape.constant(Tensor::new(vec![sel.probs.len()], sel.probs.clone())?);
    let out = tape.time_delay_aggregate(vv, p, &sel.lags)?;
    Ok(tape.value(out).clone())
}

/// `Softmax(Q·Kᵀ/√d_k)·V` without masking.
pub fn scaled_dot_attention_on(tape: &mut Tape<'_>, q: Var, k: Var, v: Var) -> Result<Var> {
    let (qs, ks, vs) = (tape.shape(q), tape.shape(k), tape.shape(v));
    if qs.len() != 2 || qs != ks || ks[0] != vs[0] {
        return Err(Error::Shape {
            op: "scaled_dot_attention",
            lhs: qs.to_vec(),
            rhs: ks.to_vec(),
        });
    }
    let dk = qs[1] as f64;
    let kt = tape.transpose(k)?;
    let s = tape.matmul(q, kt)?;
    let s = tape.scale(s, 1.0 / dk.sqrt())?;
    let a = tape.softmax(s, 1)?;
    tape.matmul(a, v)
}

pub fn scaled_dot_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let (q, k, v) = (
        tape.constant(q.clone()),
        tape.constant(k.clone()),
        tape.constant(v.clone()),
    );
    let out = scaled_dot_attention_on(&mut tape, q, k, v)?;
    Ok(tape.value(out).clone())
}

fn check_band(band: &Band, m: usize) -> Result<()> {
    if band.p >= band.q || band.q > m {
        return Err(contract(format!(
            "band [{}, {}) outside [0, {m})",
            band.p, band.q
        )));
    }
    Ok(())
}

/// `rfft → keep [p, q) → zero-pad → irfft` applied column-wise.
pub fn band_filter(tape: &mut Tape<'_>, x: Var, band: &Band) -> Result<Var> {
    let l = tape.shape(x)[0];
    let m = one_sided_len(l);
    check_band(band, m)?;
    let (re, im) = tape.rfft(x)?;
    let (re, im) = sample_pad(tape, re, im, band, m)?;
    tape.irfft(re, im, l)
}

fn sample_pad(tape: &mut Tape<'_>, re: Var, im: Var, band: &Band, m: usize) -> Result<(Var, Var)> {
    let w = band.width();
    let re = tape.slice_rows(re, band.p, w)?;
    let im = tape.slice_rows(im, band.p, w)?;
    Ok((tape.pad_rows(re, band.p, m)?, tape.pad_rows(im, band.p, m)?))
}

fn project(tape: &mut Tape<'_>, x: Var, w: &BranchVars) -> Result<(Var, Var, Var)> {
    if tape.shape(x).len() != 2 || tape.shape(x)[1] != tape.shape(w.w_q)[0] {
        return Err(Error::Shape {
            op: "branch_input",
            lhs: tape.shape(x).to_vec(),
            rhs: tape.shape(w.w_q).to_vec(),
        });
    }
    Ok((
        tape.matmul(x, w.w_q)?,
        tape.matmul(x, w.w_k)?,
        tape.matmul(x, w.w_v)?,
    ))
}

fn merge_heads(tape: &mut Tape<'_>, heads: &[Var], w: &BranchVars) -> Result<Var> {
    let cat = tape.concat_cols(heads)?;
    tape.matmul(cat, w.w_out)
}

/// Time-domain branch: band-limited Q, K, V followed by multi-head
/// scaled dot-product attention.
pub fn time_branch(tape: &mut Tape<'_>, x: Var, band: &Band, w: &BranchVars) -> Result<Var> {
    let (q, k, v) = project(tape, x, w)?;
    let q = band_filter(tape, q, band)?;
    let k = band_filter(tape, k, band)?;
    let v = band_filter(tape, v, band)?;
    let dk = tape.shape(q)[1] / w.heads;
    let mut outs = Vec::with_capacity(w.heads);
    for h in 0..w.heads {
        let qh = tape.slice_cols(q, h * dk, dk)?;
        let kh = tape.slice_cols(k, h * dk, dk)?;
        let vh = tape.slice_cols(v, h * dk, dk)?;
        outs.push(scaled_dot_attention_on(tape, qh, kh, vh)?);
    }
    merge_heads(tape, &outs, w)
}

/// Band-limited circular cross-correlation of the columns of `q` and `k`,
/// `R = irfft(pad(Q̃ ⊙ conj(K̃)))`, returned as an `L×d` tape value.
pub fn autocorr_on(tape: &mut Tape<'_>, q: Var, k: Var, band: &Band) -> Result<Var> {
    let l = tape.shape(q)[0];
    let m = one_sided_len(l);
    check_band(band, m)?;
    let (qr, qi) = tape.rfft(q)?;
    let (kr, ki) = tape.rfft(k)?;
    let w = band.width();
    let qr = tape.slice_rows(qr, band.p, w)?;
    let qi = tape.slice_rows(qi, band.p, w)?;
    let kr = tape.slice_rows(kr, band.p, w)?;
    let ki = tape.slice_rows(ki, band.p, w)?;
    // (a + ib)(c − id) = (ac + bd) + i(bc − ad)
    let ac = tape.mul(qr, kr)?;
    let bd = tape.mul(qi, ki)?;
    let bc = tape.mul(qi, kr)?;
    let ad = tape.mul(qr, ki)?;
    let re = tape.add(ac, bd)?;
    let im = tape.sub(bc, ad)?;
    let re = tape.pad_rows(re, band.p, m)?;
    let im = tape.pad_rows(im, band.p, m)?;
    tape.irfft(re, im, l)
}

/// Autocorrelation scores from two sliced spectra, `L×C`.
pub fn autocorr_scores(q: &SlicedSpectrum, k: &SlicedSpectrum) -> Result<Tensor> {
    if q.start != k.start
        || q.width != k.width
        || q.channels != k.channels
        || q.series_len != k.series_len
    {
        return Err(contract(format!(
            "autocorrelation bands differ: [{}, {}) vs [{}, {})",
            q.start,
            q.start + q.width,
            k.start,
            k.start + k.width
        )));
    }
    let bins: Vec<Complex64> = q.bins.iter().zip(&k.bins).map(|(a, b)| a * b.conj()).collect();
    let product = SlicedSpectrum {
        bins,
        start: q.start,
        width: q.width,
        channels: q.channels,
        series_len: q.series_len,
    };
    let m = one_sided_len(q.series_len);
    let mut padded: Spectrum = zero_pad(&product, q.start, m)?;
    // Q̃⊙conj(K̃) is real at DC and Nyquist up to rounding.
    padded = force_real_edges(padded)?;
    irfft(&padded, q.series_len)
}

fn force_real_edges(s: Spectrum) -> Result<Spectrum> {
    let (l, c) = (s.series_len(), s.channels());
    let m = s.len();
    let mut bins = s.bins().to_vec();
    for ch in 0..c {
        bins[ch].im = 0.0;
        if l % 2 == 0 {
            bins[(m - 1) * c + ch].im = 0.0;
        }
    }
    Spectrum::from_bins(bins, l, c)
}

/// How the frequency branch picks its lags.
#[derive(Clone, Copy, Debug)]
pub enum LagChoice<'s> {
    /// Top-k by score, with the count given by the policy.
    Select(LagPolicy),
    /// Replay one fixed lag list per head.
    Frozen(&'s [Vec<usize>]),
}

/// Frequency-domain branch: per head, autocorrelation scores of the
/// band-limited Q and K, reduced by a mean over `d_k`, pick lags whose
/// softmax weights aggregate the band-limited V by circular rolling.
///
/// Returns the branch output and the per-head selections. Gradients flow
/// through the selected scores but not through the choice of lags.
pub fn freq_branch(
    tape: &mut Tape<'_>,
    x: Var,
    band: &Band,
    w: &BranchVars,
    lags: LagChoice<'_>,
) -> Result<(Var, Vec<LagSelection>)> {
    let (q, k, v) = project(tape, x, w)?;
    let l = tape.shape(q)[0];
    let r = autocorr_on(tape, q, k, band)?;
    let v = band_filter(tape, v, band)?;
    let dk = tape.shape(q)[1] / w.heads;
    if let LagChoice::Frozen(f) = lags {
        if f.len() != w.heads {
            return Err(contract(format!(
                "{} frozen lag lists for {} heads",
                f.len(),
                w.heads
            )));
        }
    }
    let mut outs = Vec::with_capacity(w.heads);
    let mut sels = Vec::with_capacity(w.heads);
    for h in 0..w.heads {
        let rh = tape.slice_cols(r, h * dk, dk)?;
        let score = tape.mean_cols(rh)?;
        let chosen = match lags {
            LagChoice::Select(policy) => {
                top_lags(tape.value(score).data(), policy.count(l)?)?
            }
            LagChoice::Frozen(f) => f[h].clone(),
        };
        let picked = tape.gather(score, &chosen)?;
        let probs = tape.softmax(picked, 0)?;
        let vh = tape.slice_cols(v, h * dk, dk)?;
        outs.push(tape.time_delay_aggregate(vh, probs, &chosen)?);
        sels.push(LagSelection {
            probs: tape.value(probs).data().to_vec(),
            lags: chosen,
        });
    }
    Ok((merge_heads(tape, &outs, w)?, sels))
}

#[cfg(test)]
mod tests;
