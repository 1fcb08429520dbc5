use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::numeric::{Tape, Tensor, Var};

/// Floor on the per-instance standard deviation.
pub const REVIN_EPS: f64 = 1e-5;

/// Per-instance, per-channel statistics captured at normalization. They
/// are constants with respect to gradients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RevinStats {
    pub mean: Vec<f64>,
    /// Population standard deviation, floored at [`REVIN_EPS`].
    pub std: Vec<f64>,
}

impl RevinStats {
    pub fn of(x: &Tensor) -> Self {
        let (l, c) = (x.rows(), x.cols());
        let mut mean = vec![0.0; c];
        for r in 0..l {
            for (m, v) in mean.iter_mut().zip(x.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= l as f64);
        let mut var = vec![0.0; c];
        for r in 0..l {
            for ((s, v), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .iter()
            .map(|s| (s / l as f64).sqrt().max(REVIN_EPS))
            .collect();
        Self { mean, std }
    }

    /// `(x − mean)/std` without the affine part.
    pub fn standardize(&self, x: &Tensor) -> Tensor {
        let c = self.mean.len();
        let mut out = x.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v = (*v - self.mean[i % c]) / self.std[i % c];
        }
        out
    }
}

/// `γ ⊙ (x − mean)/std + β` on the tape.
pub fn revin_normalize(
    tape: &mut Tape<'_>,
    x: Var,
    stats: &RevinStats,
    gamma: Var,
    beta: Var,
) -> Result<Var> {
    let c = stats.mean.len();
    let neg_mean: Vec<f64> = stats.mean.iter().map(|m| -m).collect();
    let inv_std: Vec<f64> = stats.std.iter().map(|s| 1.0 / s).collect();
    // Centre first so constant channels map to exact zeros.
    let z = tape.col_affine(x, &vec![1.0; c], &neg_mean)?;
    let z = tape.col_affine(z, &inv_std, &vec![0.0; c])?;
    let z = tape.mul_row(z, gamma)?;
    tape.add_row(z, beta)
}

/// `(y − β)/γ · std + mean`, inverting [`revin_normalize`] with the same
/// captured statistics.
pub fn revin_denormalize(
    tape: &mut Tape<'_>,
    y: Var,
    stats: &RevinStats,
    gamma: Var,
    beta: Var,
) -> Result<Var> {
    let neg_beta = tape.scale(beta, -1.0)?;
    let z = tape.add_row(y, neg_beta)?;
    let inv = tape.recip(gamma)?;
    let z = tape.mul_row(z, inv)?;
    tape.col_affine(z, &stats.std, &stats.mean)
}
