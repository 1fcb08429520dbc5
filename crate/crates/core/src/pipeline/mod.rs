//! Loss, optimizer, schedule, early stopping, training loop, evaluation and
//! the full-model gradient check.

mod gradcheck;
mod metrics;
mod optim;
mod report;
mod train;

pub use gradcheck::{model_gradcheck, GroupError};
pub use metrics::{mae, mse, rmse, wape, MetricsAccumulator, MetricsReport};
pub use optim::{cosine_lr, Adam, EarlyStopper, StopDecision};
pub use report::{read_jsonl, to_jsonl, write_jsonl};
pub use train::{
    batch_gradients, evaluate, evaluate_naive, mean_mse, mse_loss, naive_baseline, predict_all,
    score, train, EpochRecord, TrainConfig, TrainOutcome,
};

#[cfg(test)]
mod tests;
