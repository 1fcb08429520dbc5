//! The full forecaster: RevIN, embedding, dual-branch encoder layers fused
//! by the periodicity weights, and a dense forecasting head.

mod checkpoint;
mod forward;
mod revin;

pub use checkpoint::{Checkpoint, NamedParam};
pub use forward::{
    forward, periodicity_weight, predict, Ablation, ForwardOptions, ForwardOutput, ForwardTrace,
};
pub use revin::{revin_denormalize, revin_normalize, RevinStats, REVIN_EPS};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{BranchProjections, LagPolicy};
use crate::error::{config, Result};
use crate::numeric::Tensor;
use crate::spectral::{make_plan, SamplingPlan};

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Lookback `L`.
    pub lookback: usize,
    /// Horizon `T`.
    pub horizon: usize,
    /// Input channels `C`.
    pub channels: usize,
    /// Hidden width `D`.
    pub d_model: usize,
    pub heads: usize,
    /// Encoder layers `N`.
    pub layers: usize,
    /// Sampling ratio `α`.
    pub alpha: f64,
    pub lag_policy: LagPolicy,
    /// Harmonics `n` in the periodicity weight.
    pub n_harmonics: usize,
    pub ffn_mult: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            lookback: 96,
            horizon: 96,
            channels: 7,
            d_model: 16,
            heads: 4,
            layers: 3,
            alpha: 0.4,
            lag_policy: LagPolicy::default(),
            n_harmonics: 3,
            ffn_mult: 4,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lookback", self.lookback),
            ("horizon", self.horizon),
            ("channels", self.channels),
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("layers", self.layers),
            ("n_harmonics", self.n_harmonics),
            ("ffn_mult", self.ffn_mult),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(config(format!("{name} must be positive")));
            }
        }
        if self.lookback < 2 {
            return Err(config("lookback must be at least 2"));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(config(format!(
                "d_model {} is not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(config(format!("alpha must lie in (0, 1], got {}", self.alpha)));
        }
        self.lag_policy.count(self.lookback)?;
        make_plan(self.layers, self.alpha, self.lookback)?;
        Ok(())
    }

    /// Closed-form number of trainable scalars.
    pub fn param_count(&self) -> usize {
        let (l, t, c, d, n) = (
            self.lookback,
            self.horizon,
            self.channels,
            self.d_model,
            self.layers,
        );
        let f = self.ffn_mult * d;
        let layer = 8 * d * d + 4 * d + (d * f + f + f * d + d);
        2 * c + (c * d + d) + n * layer + (l * d * t * c + t * c)
    }
}

/// Parameters of one encoder layer.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayer {
    pub time: BranchProjections,
    pub freq: BranchProjections,
    pub ln1_gamma: Tensor,
    pub ln1_beta: Tensor,
    pub ffn_w1: Tensor,
    pub ffn_b1: Tensor,
    pub ffn_w2: Tensor,
    pub ffn_b2: Tensor,
    pub ln2_gamma: Tensor,
    pub ln2_beta: Tensor,
}

impl EncoderLayer {
    const PARAMS: usize = 16;

    fn tensors(&self) -> [(&'static str, &Tensor); Self::PARAMS] {
        [
            ("time.w_q", &self.time.w_q),
            ("time.w_k", &self.time.w_k),
            ("time.w_v", &self.time.w_v),
            ("time.w_out", &self.time.w_out),
            ("freq.w_q", &self.freq.w_q),
            ("freq.w_k", &self.freq.w_k),
            ("freq.w_v", &self.freq.w_v),
            ("freq.w_out", &self.freq.w_out),
            ("ln1.gamma", &self.ln1_gamma),
            ("ln1.beta", &self.ln1_beta),
            ("ffn.w1", &self.ffn_w1),
            ("ffn.b1", &self.ffn_b1),
            ("ffn.w2", &self.ffn_w2),
            ("ffn.b2", &self.ffn_b2),
            ("ln2.gamma", &self.ln2_gamma),
            ("ln2.beta", &self.ln2_beta),
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; Self::PARAMS] {
        [
            &mut self.time.w_q,
            &mut self.time.w_k,
            &mut self.time.w_v,
            &mut self.time.w_out,
            &mut self.freq.w_q,
            &mut self.freq.w_k,
            &mut self.freq.w_v,
            &mut self.freq.w_out,
            &mut self.ln1_gamma,
            &mut self.ln1_beta,
            &mut self.ffn_w1,
            &mut self.ffn_b1,
            &mut self.ffn_w2,
            &mut self.ffn_b2,
            &mut self.ln2_gamma,
            &mut self.ln2_beta,
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DualformerModel {
    pub config: ModelConfig,
    pub plan: SamplingPlan,
    pub revin_gamma: Tensor,
    pub revin_beta: Tensor,
    /// `C×D`.
    pub embed_w: Tensor,
    pub embed_b: Tensor,
    pub layers: Vec<EncoderLayer>,
    /// `(L·D)×(T·C)`.
    pub head_w: Tensor,
    pub head_b: Tensor,
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let bound = 1.0 / (rows as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(vec![rows, cols], data).expect("extents are positive")
}

fn vector(len: usize, value: f64) -> Tensor {
    Tensor::full(&[len], value)
}

/// Build a model with weights drawn from `U(−1/√fan_in, 1/√fan_in)` using
/// the config seed. Biases and shifts start at 0, scales at 1.
pub fn init_model(cfg: &ModelConfig) -> Result<DualformerModel> {
    cfg.validate()?;
    let (l, t, c, d) = (cfg.lookback, cfg.horizon, cfg.channels, cfg.d_model);
    let f = cfg.ffn_mult * d;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let embed_w = uniform(&mut rng, c, d);
    let mut layers = Vec::with_capacity(cfg.layers);
    for _ in 0..cfg.layers {
        let time = BranchProjections::init(d, cfg.heads, &mut rng)?;
        let freq = BranchProjections::init(d, cfg.heads, &mut rng)?;
        layers.push(EncoderLayer {
            time,
            freq,
            ln1_gamma: vector(d, 1.0),
            ln1_beta: vector(d, 0.0),
            ffn_w1: uniform(&mut rng, d, f),
            ffn_b1: vector(f, 0.0),
            ffn_w2: uniform(&mut rng, f, d),
            ffn_b2: vector(d, 0.0),
            ln2_gamma: vector(d, 1.0),
            ln2_beta: vector(d, 0.0),
        });
    }
    let head_w = uniform(&mut rng, l * d, t * c);
    Ok(DualformerModel {
        plan: make_plan(cfg.layers, cfg.alpha, cfg.lookback)?,
        config: cfg.clone(),
        revin_gamma: vector(c, 1.0),
        revin_beta: vector(c, 0.0),
        embed_w,
        embed_b: vector(d, 0.0),
        layers,
        head_w,
        head_b: vector(t * c, 0.0),
    })
}

impl DualformerModel {
    /// Every parameter with its dotted name, in a fixed order shared by
    /// [`DualformerModel::params_mut`], gradients and checkpoints.
    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("revin.gamma".to_owned(), &self.revin_gamma),
            ("revin.beta".to_owned(), &self.revin_beta),
            ("embed.w".to_owned(), &self.embed_w),
            ("embed.b".to_owned(), &self.embed_b),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            for (name, t) in layer.tensors() {
                out.push((format!("layers.{i}.{name}"), t));
            }
        }
        out.push(("head.w".to_owned(), &self.head_w));
        out.push(("head.b".to_owned(), &self.head_b));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![
            &mut self.revin_gamma,
            &mut self.revin_beta,
            &mut self.embed_w,
            &mut self.embed_b,
        ];
        for layer in &mut self.layers {
            out.extend(layer.tensors_mut());
        }
        out.push(&mut self.head_w);
        out.push(&mut self.head_b);
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Parameter group of a dotted name: the name with any layer index
    /// removed, e.g. `layers.1.time.w_q` → `time.w_q`.
    pub fn group_of(name: &str) -> String {
        match name.strip_prefix("layers.") {
            Some(rest) => rest.split_once('.').map_or(rest, |(_, r)| r).to_owned(),
            None => name.to_owned(),
        }
    }

    /// FNV-1a over the bit patterns of every parameter.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (_, t) in self.params() {
            for v in t.data() {
                for b in v.to_bits().to_le_bytes() {
                    h ^= u64::from(b);
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }
}

#[cfg(test)]
mod tests;
