//! Versioned JSON container of named tensors.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{param_shapes, trim, Parameterized};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "debcm-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    /// `teacher` or `student`.
    pub kind: String,
    pub config_hash: String,
    /// Model-specific metadata (dimensions, modes, cached statistics).
    pub meta: BTreeMap<String, serde_json::Value>,
    pub tensors: Vec<TensorRecord>,
}

impl Checkpoint {
    pub fn capture<P: Parameterized + ?Sized>(
        kind: &str,
        config_hash: &str,
        meta: BTreeMap<String, serde_json::Value>,
        model: &P,
    ) -> Self {
        let mut tensors = Vec::new();
        model.visit_params("", &mut |name, shape, data| {
            tensors.push(TensorRecord {
                name: trim(name),
                shape: shape.to_vec(),
                data: data.to_vec(),
            })
        });
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            kind: kind.into(),
            config_hash: config_hash.into(),
            meta,
            tensors,
        }
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported container {} v{}",
                self.format, self.version
            )));
        }
        if self.kind != kind {
            return Err(Error::Checkpoint(format!(
                "expected a {kind} checkpoint, found {}",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn meta<T: serde::de::DeserializeOwned>(&self, key: &str) -> Result<T> {
        let v = self
            .meta
            .get(key)
            .ok_or_else(|| Error::Checkpoint(format!("metadata key {key} missing")))?;
        serde_json::from_value(v.clone())
            .map_err(|e| Error::Checkpoint(format!("metadata key {key}: {e}")))
    }

    /// Copies tensors into an already-shaped model, validating that the set
    /// of names and every shape agree exactly.
    pub fn restore<P: Parameterized + ?Sized>(&self, model: &mut P) -> Result<()> {
        let by_name: HashMap<&str, &TensorRecord> =
            self.tensors.iter().map(|t| (t.name.as_str(), t)).collect();
        let expected = param_shapes(model);
        if expected.len() != self.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "model has {} tensors, checkpoint {}",
                expected.len(),
                self.tensors.len()
            )));
        }
        for (name, shape) in &expected {
            let rec = by_name
                .get(name.as_str())
                .ok_or_else(|| Error::Checkpoint(format!("tensor {name} missing")))?;
            let len: usize = rec.shape.iter().product();
            if &rec.shape != shape || rec.data.len() != len {
                return Err(Error::Checkpoint(format!(
                    "tensor {name}: shape {:?} with {} values, model expects {shape:?}",
                    rec.shape,
                    rec.data.len()
                )));
            }
        }
        model.visit_params_mut("", &mut |name, data| {
            data.copy_from_slice(&by_name[trim(name).as_str()].data);
        });
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }
}
