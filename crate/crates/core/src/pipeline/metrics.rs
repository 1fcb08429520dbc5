use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Tensor;

fn check(pred: &Tensor, target: &Tensor) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape {
            op: "metric",
            lhs: pred.shape().to_vec(),
            rhs: target.shape().to_vec(),
        });
    }
    Ok(())
}

fn mean_of(pred: &Tensor, target: &Tensor, f: impl Fn(f64) -> f64) -> Result<f64> {
    check(pred, target)?;
    let s: f64 = pred.data().iter().zip(target.data()).map(|(p, y)| f(p - y)).sum();
    Ok(s / pred.numel() as f64)
}

pub fn mse(pred: &Tensor, target: &Tensor) -> Result<f64> {
    mean_of(pred, target, |e| e * e)
}

pub fn mae(pred: &Tensor, target: &Tensor) -> Result<f64> {
    mean_of(pred, target, f64::abs)
}

pub fn rmse(pred: &Tensor, target: &Tensor) -> Result<f64> {
    Ok(mse(pred, target)?.sqrt())
}

/// `Σ|p − y| / Σ|y|`; `None` when the target is all zeros.
pub fn wape(pred: &Tensor, target: &Tensor) -> Result<Option<f64>> {
    check(pred, target)?;
    let (num, den) = wape_parts(pred, target);
    Ok((den > 0.0).then(|| num / den))
}

fn wape_parts(pred: &Tensor, target: &Tensor) -> (f64, f64) {
    pred.data()
        .iter()
        .zip(target.data())
        .fold((0.0, 0.0), |(n, d), (p, y)| (n + (p - y).abs(), d + y.abs()))
}

/// Scores on the normalized scale (`mse`, `mae`) and on the original data
/// scale (`renorm_*`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub windows: usize,
    pub mse: f64,
    pub mae: f64,
    pub renorm_mse: f64,
    pub renorm_mae: f64,
    pub renorm_rmse: f64,
    /// `None` when the re-normalized targets sum to zero in absolute value.
    pub renorm_wape: Option<f64>,
    pub wape_defined: bool,
}

/// Running aggregate: means over windows of per-window means, with WAPE
/// pooled over all windows.
#[derive(Default)]
pub struct MetricsAccumulator {
    windows: usize,
    mse: f64,
    mae: f64,
    renorm_mse: f64,
    renorm_mae: f64,
    wape_num: f64,
    wape_den: f64,
}

impl MetricsAccumulator {
    pub fn push(
        &mut self,
        pred: &Tensor,
        target: &Tensor,
        pred_raw: &Tensor,
        target_raw: &Tensor,
    ) -> Result<()> {
        self.mse += mse(pred, target)?;
        self.mae += mae(pred, target)?;
        self.renorm_mse += mse(pred_raw, target_raw)?;
        self.renorm_mae += mae(pred_raw, target_raw)?;
        let (n, d) = wape_parts(pred_raw, target_raw);
        self.wape_num += n;
        self.wape_den += d;
        self.windows += 1;
        Ok(())
    }

    pub fn finish(self) -> Result<MetricsReport> {
        if self.windows == 0 {
            return Err(Error::Evaluation("no windows to evaluate".into()));
        }
        let w = self.windows as f64;
        let renorm_mse = self.renorm_mse / w;
        let wape_defined = self.wape_den > 0.0;
        Ok(MetricsReport {
            windows: self.windows,
            mse: self.mse / w,
            mae: self.mae / w,
            renorm_mse,
            renorm_mae: self.renorm_mae / w,
            renorm_rmse: renorm_mse.sqrt(),
            renorm_wape: wape_defined.then(|| self.wape_num / self.wape_den),
            wape_defined,
        })
    }
}
