//! Library entry points behind each subcommand. They return records and
//! leave printing to the caller, except `cmd_train` which also writes its
//! artifacts to `out_dir`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use dualformer::data::{
    collect_windows, load_csv, sine_mixture, synth_generate, write_csv, Dataset, MixtureSpec,
    NormStats, Split, SplitSpec, Window, WindowSpec,
};
use dualformer::model::{init_model, Ablation, Checkpoint, DualformerModel, ForwardOptions};
use dualformer::numeric::{BackwardFault, Tensor};
use dualformer::pipeline::{
    evaluate, evaluate_naive, model_gradcheck, train, write_jsonl, GroupError, MetricsReport,
    TrainOutcome,
};
use dualformer::spectral::{harmonic_energy_ratio, verify_theorem, SyntheticPeriodicSignal};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const HISTORY_FILE: &str = "history.jsonl";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CONFIG_FILE: &str = "config.txt";

/// Ops whose backward rule the hidden gradcheck flag can corrupt.
pub const FAULTABLE_OPS: &[&str] = &[
    "matmul", "add", "sub", "mul", "scale", "add_row", "mul_row", "recip", "col_affine",
    "transpose", "reshape", "slice_cols", "concat_cols", "slice_rows", "pad_rows", "sum", "mean",
    "gelu", "softmax", "layer_norm", "rfft_re", "rfft_im", "irfft", "mean_cols", "gather",
    "time_delay_aggregate",
];

/// Stored in the checkpoint so `eval` can rebuild the exact data pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub seed: u64,
    pub ablation: Ablation,
    pub data: String,
    pub mixture: Option<MixtureSpec>,
    pub max_rows: usize,
    pub split: SplitSpec,
    pub norm: NormStats,
    pub best_epoch: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub seed: u64,
    pub ablation: Ablation,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mse: Option<f64>,
    pub lr: f64,
    pub steps: usize,
}

/// Model and naive-baseline metrics on one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub seed: u64,
    pub ablation: Ablation,
    pub split: String,
    pub model: MetricsReport,
    pub naive: MetricsReport,
    /// Model MSE over naive MSE, normalized scale.
    pub mse_ratio: f64,
}

/// Windows of every split on the z-scored scale.
pub struct Prepared {
    pub dataset: Dataset,
    pub split: SplitSpec,
    pub stats: NormStats,
    pub train: Vec<Window>,
    pub val: Vec<Window>,
    pub test: Vec<Window>,
    pub warnings: Vec<String>,
}

impl Prepared {
    pub fn by_name(&self, name: &str) -> CliResult<&[Window]> {
        match name {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            _ => Err(CliError::Config(format!("unknown split {name:?}; use train, val or test"))),
        }
    }
}

pub struct TrainArtifacts {
    pub model: DualformerModel,
    pub outcome: TrainOutcome,
    pub history: Vec<HistoryRecord>,
    pub test: EvalRecord,
    pub metadata: RunMetadata,
    pub warnings: Vec<String>,
}

fn load_source(data: &str, mixture: Option<&MixtureSpec>, max_rows: usize) -> CliResult<Dataset> {
    let ds = match (data, mixture) {
        ("", _) => return Err(CliError::Config("no dataset given; set `data`".into())),
        ("synthetic", Some(m)) => sine_mixture(m).map_err(|e| CliError::Config(e.to_string()))?,
        ("synthetic", None) => return Err(CliError::Data("synthetic source without a spec".into())),
        (path, _) => load_csv(path).map_err(|e| CliError::Data(format!("{path}: {e}")))?,
    };
    if max_rows > 0 {
        Ok(ds.head(max_rows)?)
    } else {
        Ok(ds)
    }
}

/// Load the configured dataset and honour `max_rows`.
pub fn load_dataset(cfg: &RunConfig) -> CliResult<Dataset> {
    load_source(&cfg.data, Some(&cfg.mixture()), cfg.max_rows)
}

/// Split, fit z-score statistics on the training rows (or reuse `stats`)
/// and cut windows.
pub fn prepare(
    ds: Dataset,
    split: SplitSpec,
    window: WindowSpec,
    stats: Option<NormStats>,
) -> CliResult<Prepared> {
    let s = Split::new(&ds, &split, Some(&window))?;
    let stats = match stats {
        Some(st) => st,
        None => NormStats::fit(&s.train)?,
    };
    let cut = |seg: &dualformer::data::Segment| collect_windows(&seg.map_values(|v| stats.apply(v)), window);
    Ok(Prepared {
        train: cut(&s.train),
        val: cut(&s.val),
        test: cut(&s.test),
        warnings: s.warnings.clone(),
        dataset: ds,
        split,
        stats,
    })
}

fn eval_record(
    model: &DualformerModel,
    windows: &[Window],
    stats: &NormStats,
    seed: u64,
    ablation: Ablation,
    split: &str,
) -> CliResult<EvalRecord> {
    if windows.is_empty() {
        return Err(CliError::Data(format!("the {split} split has no complete windows")));
    }
    let opts = ForwardOptions {
        ablation,
        ..Default::default()
    };
    let m = evaluate(model, windows, stats, &opts)?;
    let n = evaluate_naive(windows, stats)?;
    Ok(EvalRecord {
        seed,
        ablation,
        split: split.into(),
        mse_ratio: m.mse / n.mse,
        model: m,
        naive: n,
    })
}

/// Train and score on the test split without touching the filesystem
/// (except to read the dataset).
pub fn run_training(cfg: &RunConfig) -> CliResult<TrainArtifacts> {
    let ds = load_dataset(cfg)?;
    let mc = cfg.model_config(ds.channels())?;
    let tc = cfg.train_config()?;
    let prep = prepare(
        ds,
        cfg.split.resolve(&cfg.data_name()),
        WindowSpec::new(cfg.lookback, cfg.horizon),
        None,
    )?;
    if prep.train.is_empty() {
        return Err(CliError::Data(format!(
            "the train split has no complete windows (L+T = {})",
            cfg.lookback + cfg.horizon
        )));
    }
    let mut model = init_model(&mc)?;
    let opts = ForwardOptions {
        ablation: cfg.ablation,
        ..Default::default()
    };
    let outcome = train(&mut model, &prep.train, &prep.val, &tc, &opts)?;
    let history = outcome
        .history
        .iter()
        .map(|r| HistoryRecord {
            seed: cfg.seed,
            ablation: cfg.ablation,
            epoch: r.epoch,
            train_loss: r.train_loss,
            val_mse: r.val_mse,
            lr: r.lr,
            steps: r.steps,
        })
        .collect();
    let test = eval_record(&model, &prep.test, &prep.stats, cfg.seed, cfg.ablation, "test")?;
    let metadata = RunMetadata {
        seed: cfg.seed,
        ablation: cfg.ablation,
        data: cfg.data.clone(),
        mixture: (cfg.data == "synthetic").then(|| cfg.mixture()),
        max_rows: cfg.max_rows,
        split: prep.split,
        norm: prep.stats.clone(),
        best_epoch: outcome.best_epoch,
    };
    Ok(TrainArtifacts {
        model,
        outcome,
        history,
        test,
        metadata,
        warnings: prep.warnings,
    })
}

impl RunConfig {
    /// Name used for the automatic split choice.
    pub fn data_name(&self) -> String {
        Path::new(&self.data)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn jsonl<T: Serialize>(records: &[T]) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    write_jsonl(records, &mut buf)?;
    Ok(buf)
}

/// Train, then write the checkpoint, history, test metrics and the resolved
/// config into `out_dir`.
pub fn cmd_train(cfg: &RunConfig) -> CliResult<TrainArtifacts> {
    let art = run_training(cfg)?;
    let dir = PathBuf::from(&cfg.out_dir);
    fs::create_dir_all(&dir).map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
    let ckpt = Checkpoint::from_model(&art.model, serde_json::to_value(&art.metadata)?);
    ckpt.save(dir.join(CHECKPOINT_FILE))?;
    write_file(&dir.join(HISTORY_FILE), &jsonl(&art.history)?)?;
    write_file(&dir.join(METRICS_FILE), &jsonl(std::slice::from_ref(&art.test))?)?;
    write_file(&dir.join(CONFIG_FILE), cfg.to_string().as_bytes())?;
    Ok(art)
}

/// Score a checkpoint on one split of a dataset. `data` overrides the
/// dataset recorded in the checkpoint.
pub fn cmd_eval(checkpoint: &Path, data: Option<&str>, split: &str) -> CliResult<EvalRecord> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let model = ckpt.to_model()?;
    let meta: RunMetadata = serde_json::from_value(ckpt.metadata.clone())
        .map_err(|e| CliError::Data(format!("checkpoint metadata: {e}")))?;
    let source = data.unwrap_or(&meta.data);
    let ds = load_source(source, meta.mixture.as_ref(), meta.max_rows)?;
    let want = model.config.channels;
    if ds.channels() != want {
        return Err(CliError::Data(format!(
            "channel mismatch: checkpoint expects C={want}, dataset has C={}",
            ds.channels()
        )));
    }
    let window = WindowSpec::new(model.config.lookback, model.config.horizon);
    let prep = prepare(ds, meta.split, window, Some(meta.norm.clone()))?;
    let windows = prep.by_name(split)?;
    eval_record(&model, windows, &prep.stats, meta.seed, meta.ablation, split)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeRecord {
    pub start: usize,
    pub channel: usize,
    /// Basis bin; `None` for flat windows.
    pub k: Option<usize>,
    pub w_f: f64,
    pub flat: bool,
}

/// Periodicity weight of every channel over a sliding window. Each window
/// is centred before the transform, as inside the model.
pub fn cmd_analyze(ds: &Dataset, window: usize, stride: usize, n_harmonics: usize) -> CliResult<Vec<AnalyzeRecord>> {
    if window < 2 || stride == 0 || n_harmonics == 0 {
        return Err(CliError::Config("window must be ≥ 2; stride and harmonics ≥ 1".into()));
    }
    if ds.len() < window {
        return Err(CliError::Data(format!(
            "series of {} rows is shorter than the window {window}",
            ds.len()
        )));
    }
    let mut out = Vec::new();
    for c in 0..ds.channels() {
        let col = ds.channel(c);
        for start in (0..=ds.len() - window).step_by(stride) {
            let x = &col[start..start + window];
            let mean = x.iter().sum::<f64>() / window as f64;
            let centred: Vec<f64> = x.iter().map(|v| v - mean).collect();
            let rec = match harmonic_energy_ratio(&centred, n_harmonics) {
                Ok(w) => AnalyzeRecord {
                    start,
                    channel: c,
                    k: Some(w.basis_freq),
                    w_f: w.w_f,
                    flat: false,
                },
                Err(dualformer::Error::NoDominantFrequency { .. } | dualformer::Error::DegenerateSignal) => {
                    AnalyzeRecord {
                        start,
                        channel: c,
                        k: None,
                        w_f: 0.0,
                        flat: true,
                    }
                }
                Err(e) => return Err(e.into()),
            };
            out.push(rec);
        }
    }
    out.sort_by_key(|r| (r.start, r.channel));
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoremRecord {
    pub index: usize,
    pub period: usize,
    pub repeats: usize,
    pub harmonics: usize,
    pub target_lambda: f64,
    pub lambda: f64,
    pub ratio: f64,
    pub bound: f64,
    pub binding: bool,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoremSummary {
    pub seed: u64,
    pub count: usize,
    pub binding: usize,
    pub violations: usize,
    /// Smallest `ratio − bound` over binding cases.
    pub min_margin: Option<f64>,
}

/// Check the harmonic-energy bound on `count` random periodic-plus-noise
/// signals whose target `λ` is log-uniform in `[lambda_min, lambda_max]`.
/// The realized `λ` decides whether a case is binding.
pub fn cmd_verify_theorem(
    count: usize,
    lambda_min: f64,
    lambda_max: f64,
    seed: u64,
) -> CliResult<(Vec<TheoremRecord>, TheoremSummary)> {
    if !(lambda_min > 0.0 && lambda_max >= lambda_min && lambda_max.is_finite()) {
        return Err(CliError::Config(format!(
            "lambda range [{lambda_min}, {lambda_max}] must be positive and ordered"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(count);
    for index in 0..count {
        let period = [4usize, 6, 8, 12, 16, 24][rng.random_range(0..6)];
        let repeats = rng.random_range(2..=12);
        let harmonics = rng.random_range(1..=period / 2);
        let coeffs: Vec<f64> = (0..harmonics)
            .map(|_| {
                let c: f64 = rng.random_range(0.1..1.0);
                if rng.random_bool(0.5) { c } else { -c }
            })
            .collect();
        let target = (lambda_min.ln() + rng.random::<f64>() * (lambda_max / lambda_min).ln()).exp();
        // E_p/len = Σc²/2, so this σ hits the target λ in expectation.
        let power: f64 = coeffs.iter().map(|c| c * c).sum::<f64>() / 2.0;
        let sigma = (power / target).sqrt();
        let spec = SyntheticPeriodicSignal {
            period,
            repeats,
            harmonic_coeffs: coeffs,
            residual_sigma: sigma,
            seed: rng.random(),
        };
        let r = verify_theorem(&spec)?;
        records.push(TheoremRecord {
            index,
            period,
            repeats,
            harmonics,
            target_lambda: target,
            lambda: r.lambda,
            ratio: r.ratio,
            bound: r.bound,
            binding: r.binding,
            holds: r.holds,
        });
    }
    let binding: Vec<&TheoremRecord> = records.iter().filter(|r| r.binding).collect();
    let summary = TheoremSummary {
        seed,
        count,
        binding: binding.len(),
        violations: records.iter().filter(|r| !r.holds).count(),
        min_margin: binding.iter().map(|r| r.ratio - r.bound).reduce(f64::min),
    };
    Ok((records, summary))
}

/// Finite-difference check of the full model on the first `windows`
/// training windows of the configured data.
pub fn cmd_gradcheck(
    cfg: &RunConfig,
    windows: usize,
    step: f64,
    corrupt: Option<&str>,
) -> CliResult<Vec<GroupError>> {
    if cfg.lookback > 32 || cfg.d_model > 8 {
        return Err(CliError::Config(format!(
            "gradcheck needs a tiny model (lookback ≤ 32, d_model ≤ 8), got L={} D={}",
            cfg.lookback, cfg.d_model
        )));
    }
    if windows == 0 || step.is_nan() || step <= 0.0 {
        return Err(CliError::Config("need at least one window and a positive step".into()));
    }
    let fault = match corrupt {
        None => None,
        Some(op) => Some(BackwardFault {
            op: FAULTABLE_OPS
                .iter()
                .find(|&&o| o == op)
                .ok_or_else(|| CliError::Config(format!("unknown op {op:?}")))?,
            factor: 1.5,
        }),
    };
    let ds = load_dataset(cfg)?;
    let model = init_model(&cfg.model_config(ds.channels())?)?;
    let prep = prepare(
        ds,
        cfg.split.resolve(&cfg.data_name()),
        WindowSpec::new(cfg.lookback, cfg.horizon),
        None,
    )?;
    if prep.train.len() < windows {
        return Err(CliError::Data(format!(
            "need {windows} training windows, the data yields {}",
            prep.train.len()
        )));
    }
    let opts = ForwardOptions {
        ablation: cfg.ablation,
        ..Default::default()
    };
    Ok(model_gradcheck(&model, &prep.train[..windows], &opts, step, fault)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: String,
    pub value: String,
    pub seed: u64,
    pub ok: bool,
    pub error: Option<String>,
    pub best_epoch: Option<usize>,
    pub steps: Option<usize>,
    pub test_mse: Option<f64>,
    pub test_mae: Option<f64>,
    pub naive_mse: Option<f64>,
}

pub const SWEEP_PARAMS: &[&str] = &["alpha", "k_lags", "n_harmonics"];

/// One training run per value with everything else, including the seed,
/// shared. Runs that fail are reported as failed rows.
pub fn cmd_sweep(cfg: &RunConfig, param: &str, values: &[String]) -> CliResult<Vec<SweepRow>> {
    if !SWEEP_PARAMS.contains(&param) {
        return Err(CliError::Config(format!(
            "cannot sweep {param:?}; choose one of {SWEEP_PARAMS:?}"
        )));
    }
    if values.is_empty() {
        return Err(CliError::Config("no sweep values".into()));
    }
    let mut runs = Vec::with_capacity(values.len());
    for v in values {
        let mut c = cfg.clone();
        c.set(param, v)?;
        if param == "k_lags" {
            c.lag_policy()?;
        }
        runs.push(c);
    }
    Ok(runs
        .iter()
        .zip(values)
        .map(|(c, v)| {
            let base = SweepRow {
                param: param.into(),
                value: v.clone(),
                seed: c.seed,
                ok: false,
                error: None,
                best_epoch: None,
                steps: None,
                test_mse: None,
                test_mae: None,
                naive_mse: None,
            };
            match run_training(c) {
                Ok(a) => SweepRow {
                    ok: true,
                    best_epoch: Some(a.outcome.best_epoch),
                    steps: Some(a.outcome.steps),
                    test_mse: Some(a.test.model.mse),
                    test_mae: Some(a.test.model.mae),
                    naive_mse: Some(a.test.naive.mse),
                    ..base
                },
                Err(e) => SweepRow {
                    error: Some(e.to_string()),
                    ..base
                },
            }
        })
        .collect())
}

/// Plain-text rendering of a sweep for the terminal.
pub fn sweep_table(rows: &[SweepRow]) -> String {
    let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_owned(), |x| format!("{x:.6}"));
    let mut s = format!("{:<12} {:>12} {:>12} {:>12}  status\n", "value", "test_mse", "test_mae", "naive_mse");
    for r in rows {
        s.push_str(&format!(
            "{:<12} {:>12} {:>12} {:>12}  {}\n",
            r.value,
            fmt(r.test_mse),
            fmt(r.test_mae),
            fmt(r.naive_mse),
            if r.ok { "ok" } else { "FAILED" }
        ));
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub seed: u64,
    pub len: usize,
    pub lambda: f64,
    pub energy_periodic: f64,
    pub energy_residual: f64,
}

/// Write a periodic-plus-noise series as CSV. With `components` the
/// periodic and residual parts are added as extra columns.
pub fn cmd_synth(spec: &SyntheticPeriodicSignal, components: bool, out: &mut impl Write) -> CliResult<SynthSummary> {
    let s = synth_generate(spec).map_err(|e| CliError::Config(e.to_string()))?;
    let len = s.series.len();
    let (cols, names): (Vec<&[f64]>, Vec<String>) = if components {
        (
            vec![&s.series, &s.periodic, &s.residual],
            vec!["value".into(), "periodic".into(), "residual".into()],
        )
    } else {
        (vec![&s.series], vec!["value".into()])
    };
    let data: Vec<f64> = (0..len).flat_map(|t| cols.iter().map(move |c| c[t])).collect();
    let ds = Dataset::new("synthetic", Tensor::matrix(len, cols.len(), data)?, names)?;
    write_csv(&ds, out)?;
    Ok(SynthSummary {
        seed: spec.seed,
        len,
        lambda: s.lambda,
        energy_periodic: s.energy_periodic,
        energy_residual: s.energy_residual,
    })
}
