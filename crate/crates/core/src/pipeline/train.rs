use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{NormStats, Window};
use crate::error::{config, Error, Result};
use crate::model::{forward, predict, DualformerModel, ForwardOptions};
use crate::numeric::{BackwardFault, Tape, Tensor, Var};

use super::metrics::{MetricsAccumulator, MetricsReport};
use super::optim::{cosine_lr, Adam, EarlyStopper, StopDecision};

/// Windows per gradient task. Fixed so the reduction order, and with it
/// every bit of the result, does not depend on the thread count.
const CHUNK: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub lr: f64,
    /// Hard cap on optimizer steps; also the cosine horizon when set.
    pub max_steps: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            max_epochs: 20,
            patience: 3,
            lr: 1e-4,
            max_steps: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(config("batch_size must be at least 1"));
        }
        if self.patience == 0 {
            return Err(config("patience must be at least 1"));
        }
        if self.max_epochs == 0 {
            return Err(config("max_epochs must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(config(format!("lr must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

/// One row of the training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training MSE over the epoch's windows.
    pub train_loss: f64,
    /// `None` when there are no validation windows.
    pub val_mse: Option<f64>,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    /// Epoch whose parameters were restored.
    pub best_epoch: usize,
    pub best_score: f64,
    pub steps: usize,
    pub stopped_early: bool,
}

/// `mean((ŷ − y)²)` on the tape.
pub fn mse_loss(tape: &mut Tape<'_>, pred: Var, target: &Tensor) -> Result<Var> {
    let y = tape.constant(target.clone());
    let e = tape.sub(pred, y)?;
    let sq = tape.mul(e, e)?;
    tape.mean(sq)
}

/// Per-parameter gradients of `weight · Σ_i mse_i` over `windows`, in
/// [`DualformerModel::params`] order, plus the unweighted loss sum.
fn chunk_gradients(
    model: &DualformerModel,
    windows: &[&Window],
    weight: f64,
    opts: &ForwardOptions<'_>,
    fault: Option<BackwardFault>,
) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = match fault {
        Some(f) => Tape::with_fault(f),
        None => Tape::new(),
    };
    let mut total: Option<Var> = None;
    let mut params = Vec::new();
    let mut loss_sum = 0.0;
    for w in windows {
        let out = forward(&mut tape, model, &w.x, opts)?;
        let l = mse_loss(&mut tape, out.y, &w.y)?;
        loss_sum += tape.value(l).data()[0];
        total = Some(match total {
            Some(t) => tape.add(t, l)?,
            None => l,
        });
        params.push(out.params);
    }
    let total = total.ok_or_else(|| config("empty gradient chunk"))?;
    let total = tape.scale(total, weight)?;
    let mut grads = tape.backward(total)?;
    let shapes: Vec<Vec<usize>> = model.params().iter().map(|(_, t)| t.shape().to_vec()).collect();
    let mut acc: Vec<Tensor> = shapes.iter().map(|s| Tensor::zeros(s)).collect();
    for vars in params {
        for (a, v) in acc.iter_mut().zip(vars) {
            if let Some(g) = grads.take(v) {
                a.axpy(1.0, &g);
            }
        }
    }
    Ok((loss_sum, acc))
}

/// Mean MSE over `windows` and its gradient with respect to every
/// parameter. Work is split into fixed chunks that run in parallel and are
/// summed in order.
pub fn batch_gradients(
    model: &DualformerModel,
    windows: &[&Window],
    opts: &ForwardOptions<'_>,
    fault: Option<BackwardFault>,
) -> Result<(f64, Vec<Tensor>)> {
    if windows.is_empty() {
        return Err(config("empty batch"));
    }
    let weight = 1.0 / windows.len() as f64;
    let parts: Vec<(f64, Vec<Tensor>)> = windows
        .par_chunks(CHUNK)
        .map(|c| chunk_gradients(model, c, weight, opts, fault))
        .collect::<Result<_>>()?;
    let mut it = parts.into_iter();
    let (mut loss, mut grads) = it.next().expect("at least one chunk");
    for (l, g) in it {
        loss += l;
        for (a, b) in grads.iter_mut().zip(&g) {
            a.axpy(1.0, b);
        }
    }
    Ok((loss * weight, grads))
}

/// Forecasts for every window, computed in parallel, in window order.
pub fn predict_all(
    model: &DualformerModel,
    windows: &[Window],
    opts: &ForwardOptions<'_>,
) -> Result<Vec<Tensor>> {
    windows
        .par_iter()
        .map(|w| predict(model, &w.x, opts).map(|(y, _)| y))
        .collect()
}

/// Mean over windows of per-window MSE, normalized scale.
pub fn mean_mse(model: &DualformerModel, windows: &[Window], opts: &ForwardOptions<'_>) -> Result<f64> {
    let preds = predict_all(model, windows, opts)?;
    let mut s = 0.0;
    for (p, w) in preds.iter().zip(windows) {
        s += super::metrics::mse(p, &w.y)?;
    }
    Ok(s / windows.len() as f64)
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ epoch as u64)
}

/// Seeded mini-batch Adam with cosine decay and early stopping on the
/// validation MSE (training loss when `val` is empty). The best parameters
/// seen are restored into `model`.
pub fn train(
    model: &mut DualformerModel,
    train: &[Window],
    val: &[Window],
    cfg: &TrainConfig,
    opts: &ForwardOptions<'_>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Training {
            step: 0,
            msg: "no training windows".into(),
        });
    }
    let per_epoch = train.len().div_ceil(cfg.batch_size);
    let t_max = cfg.max_steps.unwrap_or(cfg.max_epochs * per_epoch);
    let mut opt = Adam::new(model.params().into_iter().map(|(_, t)| t));
    let mut stopper = EarlyStopper::new(cfg.patience);
    let mut best = model.clone();
    let mut history = Vec::new();
    let mut step = 0;
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..train.len()).collect();

    'epochs: for epoch in 1..=cfg.max_epochs {
        order.sort_unstable();
        order.shuffle(&mut epoch_rng(cfg.seed, epoch));
        let mut loss_sum = 0.0;
        let mut seen = 0;
        let mut lr = cosine_lr(step, t_max, cfg.lr);
        for batch in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| step >= m) {
                break;
            }
            let ws: Vec<&Window> = batch.iter().map(|&i| &train[i]).collect();
            let (loss, grads) = batch_gradients(model, &ws, opts, None).map_err(|e| match e {
                Error::NonFinite { op } => Error::Training {
                    step: step + 1,
                    msg: format!("non-finite value in {op}"),
                },
                other => other,
            })?;
            if !loss.is_finite() {
                return Err(Error::Training {
                    step: step + 1,
                    msg: format!("loss is {loss}"),
                });
            }
            lr = cosine_lr(step, t_max, cfg.lr);
            opt.step(model.params_mut(), &grads, lr)?;
            step += 1;
            loss_sum += loss * ws.len() as f64;
            seen += ws.len();
        }
        if seen == 0 {
            break;
        }
        let train_loss = loss_sum / seen as f64;
        let val_mse = if val.is_empty() {
            None
        } else {
            Some(mean_mse(model, val, opts)?)
        };
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_mse,
            lr,
            steps: step,
        });
        match stopper.observe(epoch, val_mse.unwrap_or(train_loss)) {
            StopDecision::Improved => best = model.clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => {
                stopped_early = true;
                break 'epochs;
            }
        }
        if cfg.max_steps.is_some_and(|m| step >= m) {
            break;
        }
    }
    *model = best;
    Ok(TrainOutcome {
        history,
        best_epoch: stopper.best_epoch,
        best_score: stopper.best,
        steps: step,
        stopped_early,
    })
}

/// Repeat the last observed row `horizon` times.
pub fn naive_baseline(x: &Tensor, horizon: usize) -> Result<Tensor> {
    if x.ndim() != 2 || horizon == 0 {
        return Err(config("naive baseline needs an L×C input and a positive horizon"));
    }
    let last = x.row(x.rows() - 1);
    Tensor::matrix(horizon, x.cols(), last.repeat(horizon))
}

/// Score `preds` against the windows' targets on both scales.
pub fn score(windows: &[Window], preds: &[Tensor], stats: &NormStats) -> Result<MetricsReport> {
    let mut acc = MetricsAccumulator::default();
    for (w, p) in windows.iter().zip(preds) {
        acc.push(p, &w.y, &stats.invert(p), &stats.invert(&w.y))?;
    }
    acc.finish()
}

/// Model metrics over `windows`, which hold z-scored values; `stats`
/// maps them back to the data scale.
pub fn evaluate(
    model: &DualformerModel,
    windows: &[Window],
    stats: &NormStats,
    opts: &ForwardOptions<'_>,
) -> Result<MetricsReport> {
    if windows.is_empty() {
        return Err(Error::Evaluation("no windows to evaluate".into()));
    }
    score(windows, &predict_all(model, windows, opts)?, stats)
}

/// Metrics of the last-value-repeat forecast over `windows`.
pub fn evaluate_naive(windows: &[Window], stats: &NormStats) -> Result<MetricsReport> {
    if windows.is_empty() {
        return Err(Error::Evaluation("no windows to evaluate".into()));
    }
    let preds: Vec<Tensor> = windows
        .iter()
        .map(|w| naive_baseline(&w.x, w.y.rows()))
        .collect::<Result<_>>()?;
    score(windows, &preds, stats)
}
