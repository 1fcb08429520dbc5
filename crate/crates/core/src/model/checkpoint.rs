use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Tensor;

use super::{init_model, DualformerModel, ModelConfig};

const FORMAT: &str = "dualformer-checkpoint";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedParam {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Self-describing JSON container: config, named parameters with shapes and
/// free-form metadata (normalization statistics, split, ...).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub params: Vec<NamedParam>,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

impl Checkpoint {
    pub fn from_model(model: &DualformerModel, metadata: serde_json::Value) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            config: model.config.clone(),
            params: model
                .params()
                .into_iter()
                .map(|(name, t)| NamedParam {
                    name,
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                })
                .collect(),
            metadata,
        }
    }

    /// Rebuild the model, checking every name and shape against the layout
    /// implied by the stored config.
    pub fn to_model(&self) -> Result<DualformerModel> {
        if self.format != FORMAT || self.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported container {:?} version {}",
                self.format, self.version
            )));
        }
        let mut model = init_model(&self.config)?;
        let expected: Vec<(String, Vec<usize>)> = model
            .params()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect();
        if expected.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                expected.len(),
                self.params.len()
            )));
        }
        for ((slot, (name, shape)), p) in model
            .params_mut()
            .into_iter()
            .zip(&expected)
            .zip(&self.params)
        {
            if &p.name != name || &p.shape != shape {
                return Err(Error::Checkpoint(format!(
                    "parameter {:?} with shape {:?} does not match expected {name:?} {shape:?}",
                    p.name, p.shape
                )));
            }
            let t = Tensor::new(p.shape.clone(), p.data.clone())
                .map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
            if !t.is_finite() {
                return Err(Error::Checkpoint(format!("{name} holds non-finite values")));
            }
            *slot = t;
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}
