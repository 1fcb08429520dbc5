//! Flat `key = value` run configuration.
//!
//! Lines are `key = value`; `#` starts a comment; blank lines are ignored.
//! Every key has a default, unknown keys are rejected and a key may appear
//! only once per file. `--set key=value` overrides are applied afterwards in
//! order.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use dualformer::attention::LagPolicy;
use dualformer::data::{MixtureSpec, SplitSpec};
use dualformer::model::{Ablation, ModelConfig};
use dualformer::pipeline::TrainConfig;

use crate::error::{CliError, CliResult};

/// Key, default value and description of every configuration key.
pub const SCHEMA: &[(&str, &str, &str)] = &[
    ("data", "", "CSV path, or `synthetic` for a generated sine mixture"),
    ("max_rows", "0", "use only the first N rows (0 = all)"),
    ("split", "auto", "`ett` (6:2:2), `standard` (7:1:2), `auto` (ett for ETT* files) or `a,b,c`"),
    ("lookback", "96", "lookback window L"),
    ("horizon", "96", "forecast horizon T"),
    ("d_model", "16", "hidden width D"),
    ("heads", "4", "attention heads"),
    ("layers", "3", "encoder layers N"),
    ("alpha", "0.4", "frequency sampling ratio in (0, 1]"),
    ("lag_policy", "factor", "`factor` (k·ln L lags) or `direct` (exactly k lags)"),
    ("k_lags", "3", "lag factor or lag count, depending on lag_policy"),
    ("n_harmonics", "3", "harmonics in the periodicity weight"),
    ("ffn_mult", "4", "feed-forward width multiplier"),
    ("batch_size", "32", "mini-batch size"),
    ("max_epochs", "20", "epoch limit"),
    ("patience", "3", "early-stopping patience in epochs"),
    ("lr", "0.0001", "initial Adam learning rate (cosine decay)"),
    ("max_steps", "0", "optimizer step limit (0 = none)"),
    ("seed", "0", "seed for initialization and shuffling"),
    ("ablation", "full", "full, time_only, freq_only, uniform_weighting or no_revin"),
    ("out_dir", "dualformer-out", "directory for checkpoint and reports"),
    ("synth_len", "2000", "synthetic series length"),
    ("synth_channels", "1", "synthetic channel count"),
    ("synth_periods", "24,12", "synthetic sinusoid periods"),
    ("synth_amplitudes", "1,0.5", "synthetic sinusoid amplitudes"),
    ("synth_noise", "0.05", "synthetic Gaussian noise sigma"),
    ("synth_seed", "0", "seed of the synthetic generator"),
];

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SplitChoice {
    /// ETT ratios for files whose name starts with `ETT`, standard otherwise.
    Auto,
    Fixed(SplitSpec),
}

impl SplitChoice {
    pub fn resolve(&self, dataset_name: &str) -> SplitSpec {
        match self {
            SplitChoice::Auto if dataset_name.starts_with("ETT") => SplitSpec::ETT,
            SplitChoice::Auto => SplitSpec::STANDARD,
            SplitChoice::Fixed(s) => *s,
        }
    }
}

impl fmt::Display for SplitChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitChoice::Auto => f.write_str("auto"),
            SplitChoice::Fixed(s) if *s == SplitSpec::ETT => f.write_str("ett"),
            SplitChoice::Fixed(s) if *s == SplitSpec::STANDARD => f.write_str("standard"),
            SplitChoice::Fixed(s) => write!(f, "{},{},{}", s.train, s.val, s.test),
        }
    }
}

impl FromStr for SplitChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "auto" => Ok(SplitChoice::Auto),
            "ett" => Ok(SplitChoice::Fixed(SplitSpec::ETT)),
            "standard" => Ok(SplitChoice::Fixed(SplitSpec::STANDARD)),
            _ => {
                let r = parse_list::<f64>(s)?;
                let [train, val, test] = r[..] else {
                    return Err(format!("expected three ratios, got {}", r.len()));
                };
                let spec = SplitSpec { train, val, test };
                spec.validate().map_err(|e| e.to_string())?;
                Ok(SplitChoice::Fixed(spec))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LagMode {
    Factor,
    Direct,
}

/// Everything a run needs.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data: String,
    pub max_rows: usize,
    pub split: SplitChoice,
    pub lookback: usize,
    pub horizon: usize,
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub alpha: f64,
    pub lag_policy: LagMode,
    pub k_lags: f64,
    pub n_harmonics: usize,
    pub ffn_mult: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub lr: f64,
    pub max_steps: usize,
    pub seed: u64,
    pub ablation: Ablation,
    pub out_dir: String,
    pub synth_len: usize,
    pub synth_channels: usize,
    pub synth_periods: Vec<f64>,
    pub synth_amplitudes: Vec<f64>,
    pub synth_noise: f64,
    pub synth_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut cfg = RunConfig {
            data: String::new(),
            max_rows: 0,
            split: SplitChoice::Auto,
            lookback: 0,
            horizon: 0,
            d_model: 0,
            heads: 0,
            layers: 0,
            alpha: 0.0,
            lag_policy: LagMode::Factor,
            k_lags: 0.0,
            n_harmonics: 0,
            ffn_mult: 0,
            batch_size: 0,
            max_epochs: 0,
            patience: 0,
            lr: 0.0,
            max_steps: 0,
            seed: 0,
            ablation: Ablation::Full,
            out_dir: String::new(),
            synth_len: 0,
            synth_channels: 0,
            synth_periods: Vec::new(),
            synth_amplitudes: Vec::new(),
            synth_noise: 0.0,
            synth_seed: 0,
        };
        for (k, v, _) in SCHEMA {
            cfg.set(k, v).expect("schema defaults parse");
        }
        cfg
    }
}

fn parse_list<T: FromStr>(s: &str) -> Result<Vec<T>, String> {
    s.split(',')
        .map(|p| p.trim().parse::<T>().map_err(|_| format!("bad list element {p:?}")))
        .collect()
}

fn join<T: fmt::Display>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn parse<T: FromStr>(key: &str, value: &str) -> CliResult<T> {
    value
        .parse()
        .map_err(|_| CliError::Config(format!("{key}: cannot parse {value:?}")))
}

impl RunConfig {
    /// Tiny architecture used by `gradcheck` when no config file is given.
    pub fn tiny() -> Self {
        let mut cfg = RunConfig::default();
        for (k, v) in [
            ("data", "synthetic"),
            ("lookback", "32"),
            ("horizon", "8"),
            ("d_model", "8"),
            ("heads", "2"),
            ("layers", "2"),
            ("alpha", "0.5"),
            ("synth_len", "64"),
            ("synth_channels", "2"),
        ] {
            cfg.set(k, v).expect("valid tiny config");
        }
        cfg
    }

    /// Set one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let v = value.trim();
        match key.trim() {
            "data" => self.data = v.to_owned(),
            "max_rows" => self.max_rows = parse(key, v)?,
            "split" => self.split = v.parse().map_err(|e| CliError::Config(format!("split: {e}")))?,
            "lookback" => self.lookback = parse(key, v)?,
            "horizon" => self.horizon = parse(key, v)?,
            "d_model" => self.d_model = parse(key, v)?,
            "heads" => self.heads = parse(key, v)?,
            "layers" => self.layers = parse(key, v)?,
            "alpha" => self.alpha = parse(key, v)?,
            "lag_policy" => {
                self.lag_policy = match v {
                    "factor" => LagMode::Factor,
                    "direct" => LagMode::Direct,
                    _ => return Err(CliError::Config(format!("lag_policy: unknown policy {v:?}"))),
                }
            }
            "k_lags" => self.k_lags = parse(key, v)?,
            "n_harmonics" => self.n_harmonics = parse(key, v)?,
            "ffn_mult" => self.ffn_mult = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "max_epochs" => self.max_epochs = parse(key, v)?,
            "patience" => self.patience = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "max_steps" => self.max_steps = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "ablation" => self.ablation = v.parse().map_err(|e: dualformer::Error| CliError::Config(e.to_string()))?,
            "out_dir" => self.out_dir = v.to_owned(),
            "synth_len" => self.synth_len = parse(key, v)?,
            "synth_channels" => self.synth_channels = parse(key, v)?,
            "synth_periods" => {
                self.synth_periods = parse_list(v).map_err(|e| CliError::Config(format!("synth_periods: {e}")))?
            }
            "synth_amplitudes" => {
                self.synth_amplitudes =
                    parse_list(v).map_err(|e| CliError::Config(format!("synth_amplitudes: {e}")))?
            }
            "synth_noise" => self.synth_noise = parse(key, v)?,
            "synth_seed" => self.synth_seed = parse(key, v)?,
            other => return Err(CliError::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Current value of a key in the same textual form [`RunConfig::set`]
    /// accepts.
    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "data" => self.data.clone(),
            "max_rows" => self.max_rows.to_string(),
            "split" => self.split.to_string(),
            "lookback" => self.lookback.to_string(),
            "horizon" => self.horizon.to_string(),
            "d_model" => self.d_model.to_string(),
            "heads" => self.heads.to_string(),
            "layers" => self.layers.to_string(),
            "alpha" => self.alpha.to_string(),
            "lag_policy" => match self.lag_policy {
                LagMode::Factor => "factor".into(),
                LagMode::Direct => "direct".into(),
            },
            "k_lags" => self.k_lags.to_string(),
            "n_harmonics" => self.n_harmonics.to_string(),
            "ffn_mult" => self.ffn_mult.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "max_epochs" => self.max_epochs.to_string(),
            "patience" => self.patience.to_string(),
            "lr" => self.lr.to_string(),
            "max_steps" => self.max_steps.to_string(),
            "seed" => self.seed.to_string(),
            "ablation" => self.ablation.to_string(),
            "out_dir" => self.out_dir.clone(),
            "synth_len" => self.synth_len.to_string(),
            "synth_channels" => self.synth_channels.to_string(),
            "synth_periods" => join(&self.synth_periods),
            "synth_amplitudes" => join(&self.synth_amplitudes),
            "synth_noise" => self.synth_noise.to_string(),
            "synth_seed" => self.synth_seed.to_string(),
            _ => return None,
        })
    }

    /// Parse file text on top of the defaults.
    pub fn parse_str(text: &str) -> CliResult<Self> {
        Self::parse_onto(RunConfig::default(), text)
    }

    pub fn parse_onto(mut cfg: RunConfig, text: &str) -> CliResult<Self> {
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected `key = value`", i + 1)))?;
            let k = k.trim();
            if !seen.insert(k.to_owned()) {
                return Err(CliError::Config(format!("line {}: duplicate key {k:?}", i + 1)));
            }
            cfg.set(k, v)
                .map_err(|e| CliError::Config(format!("line {}: {}", i + 1, strip(&e))))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        Self::load_onto(RunConfig::default(), path)
    }

    pub fn load_onto(base: RunConfig, path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse_onto(base, &text)
    }

    /// Apply `key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> CliResult<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("override {o:?} is not key=value")))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn lag_policy(&self) -> CliResult<LagPolicy> {
        match self.lag_policy {
            LagMode::Factor => Ok(LagPolicy::Factor(self.k_lags)),
            LagMode::Direct => {
                if self.k_lags.fract() != 0.0 || self.k_lags < 1.0 {
                    return Err(CliError::Config(format!(
                        "k_lags must be a positive integer with lag_policy=direct, got {}",
                        self.k_lags
                    )));
                }
                Ok(LagPolicy::Direct(self.k_lags as usize))
            }
        }
    }

    pub fn model_config(&self, channels: usize) -> CliResult<ModelConfig> {
        let cfg = ModelConfig {
            lookback: self.lookback,
            horizon: self.horizon,
            channels,
            d_model: self.d_model,
            heads: self.heads,
            layers: self.layers,
            alpha: self.alpha,
            lag_policy: self.lag_policy()?,
            n_harmonics: self.n_harmonics,
            ffn_mult: self.ffn_mult,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> CliResult<TrainConfig> {
        let cfg = TrainConfig {
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            lr: self.lr,
            max_steps: (self.max_steps > 0).then_some(self.max_steps),
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn mixture(&self) -> MixtureSpec {
        MixtureSpec {
            len: self.synth_len,
            channels: self.synth_channels,
            periods: self.synth_periods.clone(),
            amplitudes: self.synth_amplitudes.clone(),
            noise_sigma: self.synth_noise,
            seed: self.synth_seed,
        }
    }
}

fn strip(e: &CliError) -> String {
    match e {
        CliError::Config(m) => m.clone(),
        other => other.to_string(),
    }
}

/// Canonical file form: every key in schema order.
impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, _, _) in SCHEMA {
            writeln!(f, "{k} = {}", self.get(k).expect("schema key"))?;
        }
        Ok(())
    }
}
