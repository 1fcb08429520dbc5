//! Hierarchical frequency sampling: one frequency band per encoder layer,
//! moving from the highest band at layer 1 to a band starting at DC at
//! layer N.

use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::numeric::fft::one_sided_len;

/// Half-open bin range `[p, q)` assigned to one layer (1-based).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Band {
    pub layer: usize,
    pub p: usize,
    pub q: usize,
}

impl Band {
    pub fn width(&self) -> usize {
        self.q - self.p
    }

    pub fn full(m: usize) -> Self {
        Self { layer: 1, p: 0, q: m }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    /// `α ≤ 1/N`: uniform partition of `[0, M)`.
    Case1,
    /// `α > 1/N`: equal-width windows that overlap between adjacent layers.
    Case2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub layers: usize,
    pub alpha: f64,
    pub bins: usize,
    pub regime: Regime,
    pub bands: Vec<Band>,
}

impl SamplingPlan {
    pub fn band(&self, layer: usize) -> &Band {
        &self.bands[layer - 1]
    }

    /// Overlap `q^{n+1} − p^n` between layer `n` and `n+1` (1-based `n`).
    pub fn overlap(&self, n: usize) -> isize {
        self.band(n + 1).q as isize - self.band(n).p as isize
    }

    /// `(αN − 1)·M/(N − 1)`, the real-valued overlap of the case-2 formula.
    pub fn nominal_overlap(&self) -> f64 {
        let n = self.layers as f64;
        (self.alpha * n - 1.0) * self.bins as f64 / (n - 1.0)
    }
}

// Guards floors against representation error such as 0.1·30 = 2.9999….
const FLOOR_SLACK: f64 = 1e-9;

fn floor(x: f64) -> usize {
    (x + FLOOR_SLACK).floor().max(0.0) as usize
}

/// Build the per-layer bands for `layers` encoder layers over a length-`len`
/// series.
///
/// Case 1 uses integer boundaries `⌊M(N−n)/N⌋` so the bands tile `[0, M)`
/// exactly. Case 2 floors both real-valued bounds
/// `p = M(1−α)(N−n)/(N−1)` and `p + αM`, which keeps the overlap between
/// adjacent layers within one bin of `(αN−1)M/(N−1)`.
pub fn make_plan(layers: usize, alpha: f64, len: usize) -> Result<SamplingPlan> {
    if layers == 0 {
        return Err(config("layer count must be at least 1"));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(config(format!("sampling ratio must lie in (0, 1], got {alpha}")));
    }
    let m = one_sided_len(len);
    if m < layers {
        return Err(config(format!(
            "{m} frequency bins cannot give {layers} layers a non-empty band each"
        )));
    }
    let case1 = alpha * layers as f64 <= 1.0 + 1e-12;
    let bands = if case1 {
        (1..=layers)
            .map(|n| Band {
                layer: n,
                p: m * (layers - n) / layers,
                q: m * (layers - n + 1) / layers,
            })
            .collect()
    } else {
        let mf = m as f64;
        (1..=layers)
            .map(|n| {
                let p_real = mf * (1.0 - alpha) * (layers - n) as f64 / (layers - 1) as f64;
                let p = floor(p_real);
                let q = floor(p_real + alpha * mf).min(m).max(p + 1);
                Band { layer: n, p, q }
            })
            .collect()
    };
    Ok(SamplingPlan {
        layers,
        alpha,
        bins: m,
        regime: if case1 { Regime::Case1 } else { Regime::Case2 },
        bands,
    })
}
