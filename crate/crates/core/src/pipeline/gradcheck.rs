use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::Window;
use crate::error::Result;
use crate::model::{predict, DualformerModel, ForwardOptions};
use crate::numeric::{relative_error, BackwardFault};

use super::metrics::mse;
use super::train::batch_gradients;

/// Worst coordinate error within one parameter group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupError {
    pub group: String,
    pub max_rel_err: f64,
    pub coords: usize,
}

/// Compare tape gradients of the mean MSE over `windows` with five-point
/// central differences for every parameter coordinate. Some coordinates
/// have gradients near 1e-10 on a loss of order one, so the step must be
/// large enough (about 1e-2) that rounding stays below them; the
/// fourth-order stencil keeps truncation small at that step. Lags are
/// frozen at the unperturbed selection; the periodicity weights depend on
/// the input only.
/// Groups merge the same tensor across layers.
pub fn model_gradcheck(
    model: &DualformerModel,
    windows: &[Window],
    ablation_opts: &ForwardOptions<'_>,
    step: f64,
    fault: Option<BackwardFault>,
) -> Result<Vec<GroupError>> {
    let frozen: Vec<Vec<Vec<Vec<usize>>>> = windows
        .iter()
        .map(|w| predict(model, &w.x, ablation_opts).map(|(_, t)| t.frozen_lags()))
        .collect::<Result<_>>()?;

    // The analytic side runs window by window so each gets its own lags.
    let names: Vec<String> = model.params().into_iter().map(|(n, _)| n).collect();
    let mut analytic: Vec<Vec<f64>> = model.params().iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
    for (w, lags) in windows.iter().zip(&frozen) {
        let opts = ForwardOptions {
            frozen_lags: Some(lags),
            ..*ablation_opts
        };
        let (_, g) = batch_gradients(model, &[w], &opts, fault)?;
        for (a, gi) in analytic.iter_mut().zip(&g) {
            for (x, y) in a.iter_mut().zip(gi.data()) {
                *x += y / windows.len() as f64;
            }
        }
    }

    let loss = |m: &DualformerModel| -> Result<f64> {
        let mut s = 0.0;
        for (w, lags) in windows.iter().zip(&frozen) {
            let opts = ForwardOptions {
                frozen_lags: Some(lags),
                ..*ablation_opts
            };
            s += mse(&predict(m, &w.x, &opts)?.0, &w.y)?;
        }
        Ok(s / windows.len() as f64)
    };

    let mut groups: BTreeMap<String, GroupError> = BTreeMap::new();
    let mut probe = model.clone();
    for (pi, name) in names.iter().enumerate() {
        let group = DualformerModel::group_of(name);
        let n = analytic[pi].len();
        let mut worst: f64 = 0.0;
        for (i, &a) in analytic[pi].iter().enumerate() {
            let orig = probe.params_mut()[pi].data()[i];
            let mut at = |delta: f64| -> Result<f64> {
                probe.params_mut()[pi].data_mut()[i] = orig + delta;
                loss(&probe)
            };
            let (p1, m1, p2, m2) = (at(step)?, at(-step)?, at(2.0 * step)?, at(-2.0 * step)?);
            probe.params_mut()[pi].data_mut()[i] = orig;
            let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * step);
            worst = worst.max(relative_error(a, numeric));
        }
        let e = groups.entry(group.clone()).or_insert(GroupError {
            group,
            max_rel_err: 0.0,
            coords: 0,
        });
        e.max_rel_err = e.max_rel_err.max(worst);
        e.coords += n;
    }
    Ok(groups.into_values().collect())
}
