//! Dataset ingestion, splitting, windowing, z-scoring and synthetic signals.

mod csv_io;
mod split;
mod synth;
mod window;

pub use csv_io::{load_csv, write_csv};
pub use split::{NormStats, Segment, Split, SplitSpec};
pub use synth::{sine_mixture, synth_generate, MixtureSpec, SyntheticSeries};
pub use window::{collect_windows, windows, Window, WindowSpec, Windows};

use crate::error::{contract, Result};
use crate::numeric::Tensor;

/// A rectangular multivariate series.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub timestamps: Option<Vec<String>>,
    /// `len × C`.
    pub values: Tensor,
    pub channel_names: Vec<String>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, values: Tensor, channel_names: Vec<String>) -> Result<Self> {
        if values.ndim() != 2 || values.cols() != channel_names.len() {
            return Err(contract(format!(
                "values of shape {:?} do not match {} channel names",
                values.shape(),
                channel_names.len()
            )));
        }
        Ok(Self {
            name: name.into(),
            timestamps: None,
            values,
            channel_names,
        })
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.values.cols()
    }

    /// First `n` rows (all rows if `n` exceeds the length).
    pub fn head(&self, n: usize) -> Result<Self> {
        let n = n.min(self.len());
        let c = self.channels();
        Ok(Self {
            name: self.name.clone(),
            timestamps: self.timestamps.as_ref().map(|t| t[..n].to_vec()),
            values: Tensor::matrix(n, c, self.values.data()[..n * c].to_vec())?,
            channel_names: self.channel_names.clone(),
        })
    }

    /// Values of one channel.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.values.column(c)
    }
}
