use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attention::{freq_branch, time_branch, BranchVars, LagChoice, LagSelection};
use crate::error::{config, contract, Error, Result};
use crate::numeric::{Tape, Tensor, Var};
use crate::spectral::harmonic_energy_ratio;

use super::revin::{revin_denormalize, revin_normalize, RevinStats};
use super::DualformerModel;

const LN_EPS: f64 = 1e-5;

/// Model variants used in the ablation study.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    Full,
    /// Frequency branch removed: `(w_t, w_f) = (1, 0)`.
    TimeOnly,
    /// Time branch removed: `(w_t, w_f) = (0, 1)`.
    FreqOnly,
    /// `(w_t, w_f) = (0.5, 0.5)`.
    UniformWeighting,
    /// Identity instance normalization.
    NoRevin,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::Full,
        Ablation::TimeOnly,
        Ablation::FreqOnly,
        Ablation::UniformWeighting,
        Ablation::NoRevin,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::TimeOnly => "time_only",
            Ablation::FreqOnly => "freq_only",
            Ablation::UniformWeighting => "uniform_weighting",
            Ablation::NoRevin => "no_revin",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| config(format!("unknown ablation mode {s:?}")))
    }
}

/// Knobs for a single forward pass.
#[derive(Clone, Copy, Debug, Default)]
pub struct ForwardOptions<'a> {
    pub ablation: Ablation,
    /// Replace the computed `w_f` (and `w_t = 1 − w_f`).
    pub w_f_override: Option<f64>,
    /// Replay lags per layer and head instead of selecting them.
    pub frozen_lags: Option<&'a [Vec<Vec<usize>>]>,
}

/// What a forward pass decided along the way.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ForwardTrace {
    pub w_f: f64,
    pub w_t: f64,
    /// Lag selections per layer and head; empty for skipped branches.
    pub lags: Vec<Vec<LagSelection>>,
    pub time_calls: usize,
    pub freq_calls: usize,
}

impl ForwardTrace {
    /// Lag lists in the shape expected by [`ForwardOptions::frozen_lags`].
    pub fn frozen_lags(&self) -> Vec<Vec<Vec<usize>>> {
        self.lags
            .iter()
            .map(|layer| layer.iter().map(|s| s.lags.clone()).collect())
            .collect()
    }
}

pub struct ForwardOutput {
    /// `T×C` forecast.
    pub y: Var,
    /// Parameter handles in [`DualformerModel::params`] order.
    pub params: Vec<Var>,
    pub trace: ForwardTrace,
}

/// Mean of the per-channel harmonic energy ratios of the standardized
/// input. Channels without a dominant frequency contribute 0.
pub fn periodicity_weight(x: &Tensor, n_harmonics: usize) -> Result<f64> {
    let c = x.cols();
    let mut total = 0.0;
    for ch in 0..c {
        match harmonic_energy_ratio(&x.column(ch), n_harmonics) {
            Ok(w) => total += w.w_f,
            Err(Error::NoDominantFrequency { .. } | Error::DegenerateSignal) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(total / c as f64)
}

struct LayerVars {
    time: BranchVars,
    freq: BranchVars,
    ln1: (Var, Var),
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
    ln2: (Var, Var),
}

fn weighted(tape: &mut Tape<'_>, x: Var, w: f64) -> Result<Var> {
    if w == 1.0 {
        Ok(x)
    } else {
        tape.scale(x, w)
    }
}

/// Run the model on one `L×C` window, registering every parameter on
/// `tape`. The periodicity weights and the lag choices carry no gradient.
pub fn forward<'a>(
    tape: &mut Tape<'a>,
    model: &'a DualformerModel,
    x: &Tensor,
    opts: &ForwardOptions<'_>,
) -> Result<ForwardOutput> {
    let cfg = &model.config;
    let (l, t, c, d) = (cfg.lookback, cfg.horizon, cfg.channels, cfg.d_model);
    if x.shape() != [l, c] {
        return Err(contract(format!(
            "input of shape {:?} does not match the configured {l}x{c}",
            x.shape()
        )));
    }
    if let Some(f) = opts.frozen_lags {
        if f.len() != cfg.layers {
            return Err(contract(format!(
                "{} frozen lag layers for {} encoder layers",
                f.len(),
                cfg.layers
            )));
        }
    }

    let params: Vec<Var> = model.params().into_iter().map(|(_, p)| tape.param(p)).collect();
    let mut it = params.iter().copied();
    let mut next = || it.next().expect("parameter list matches the model layout");
    let (gamma, beta, embed_w, embed_b) = (next(), next(), next(), next());
    let heads = cfg.heads;
    let layers: Vec<LayerVars> = (0..cfg.layers)
        .map(|_| {
            let mut branch = || BranchVars {
                w_q: next(),
                w_k: next(),
                w_v: next(),
                w_out: next(),
                heads,
            };
            let time = branch();
            let freq = branch();
            LayerVars {
                time,
                freq,
                ln1: (next(), next()),
                w1: next(),
                b1: next(),
                w2: next(),
                b2: next(),
                ln2: (next(), next()),
            }
        })
        .collect();
    let (head_w, head_b) = (next(), next());

    let revin = opts.ablation != Ablation::NoRevin;
    let stats = RevinStats::of(x);
    let xv = tape.constant(x.clone());
    let (z, standardized) = if revin {
        (
            revin_normalize(tape, xv, &stats, gamma, beta)?,
            stats.standardize(x),
        )
    } else {
        (xv, x.clone())
    };

    let computed = match opts.ablation {
        Ablation::Full | Ablation::NoRevin => periodicity_weight(&standardized, cfg.n_harmonics)?,
        Ablation::TimeOnly => 0.0,
        Ablation::FreqOnly => 1.0,
        Ablation::UniformWeighting => 0.5,
    };
    let w_f = opts.w_f_override.unwrap_or(computed);
    if !(0.0..=1.0).contains(&w_f) {
        return Err(contract(format!("w_f must lie in [0, 1], got {w_f}")));
    }
    let w_t = 1.0 - w_f;
    let run_time = opts.ablation != Ablation::FreqOnly;
    let run_freq = opts.ablation != Ablation::TimeOnly;

    let mut trace = ForwardTrace {
        w_f,
        w_t,
        ..ForwardTrace::default()
    };
    let h = tape.matmul(z, embed_w)?;
    let mut h = tape.add_row(h, embed_b)?;
    for (i, lv) in layers.iter().enumerate() {
        let band = model.plan.band(i + 1);
        let mut acc = h;
        if run_time {
            let out = time_branch(tape, h, band, &lv.time)?;
            trace.time_calls += 1;
            let out = weighted(tape, out, w_t)?;
            acc = tape.add(acc, out)?;
        }
        let mut sels = Vec::new();
        if run_freq {
            let choice = match opts.frozen_lags {
                Some(f) => LagChoice::Frozen(&f[i]),
                None => LagChoice::Select(cfg.lag_policy),
            };
            let (out, s) = freq_branch(tape, h, band, &lv.freq, choice)?;
            trace.freq_calls += 1;
            sels = s;
            let out = weighted(tape, out, w_f)?;
            acc = tape.add(acc, out)?;
        }
        trace.lags.push(sels);
        let hu = tape.layer_norm(acc, lv.ln1.0, lv.ln1.1, LN_EPS)?;
        let f = tape.matmul(hu, lv.w1)?;
        let f = tape.add_row(f, lv.b1)?;
        let f = tape.gelu(f)?;
        let f = tape.matmul(f, lv.w2)?;
        let f = tape.add_row(f, lv.b2)?;
        let r = tape.add(hu, f)?;
        h = tape.layer_norm(r, lv.ln2.0, lv.ln2.1, LN_EPS)?;
    }

    let flat = tape.reshape(h, &[1, l * d])?;
    let y = tape.matmul(flat, head_w)?;
    let y = tape.add_row(y, head_b)?;
    let y = tape.reshape(y, &[t, c])?;
    let y = if revin {
        revin_denormalize(tape, y, &stats, gamma, beta)?
    } else {
        y
    };
    Ok(ForwardOutput { y, params, trace })
}

/// Gradient-free forecast for one window.
pub fn predict(
    model: &DualformerModel,
    x: &Tensor,
    opts: &ForwardOptions<'_>,
) -> Result<(Tensor, ForwardTrace)> {
    let mut tape = Tape::new();
    let out = forward(&mut tape, model, x, opts)?;
    Ok((tape.value(out.y).clone(), out.trace))
}
