use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::NetParams;

pub const FORMAT_VERSION: u32 = 1;

/// One parameter tensor, row-major 64-bit values.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

/// Standardizer metadata carried alongside a model so the artifact can be
/// applied to raw physical units on its own.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ScalerEntry {
    pub channel: String,
    pub mean: f64,
    pub std: f64,
}

/// Self-describing model file: versioned, typed by `kind`, with topology in
/// `meta` and all tensors inline. JSON on disk; floats survive the round
/// trip bit-exactly via shortest-representation formatting.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ModelContainer {
    pub format_version: u32,
    pub kind: String,
    pub meta: serde_json::Value,
    pub scalers: Vec<ScalerEntry>,
    pub tensors: Vec<TensorEntry>,
}

impl ModelContainer {
    pub fn new(kind: impl Into<String>, meta: serde_json::Value) -> Self {
        ModelContainer {
            format_version: FORMAT_VERSION,
            kind: kind.into(),
            meta,
            scalers: Vec::new(),
            tensors: Vec::new(),
        }
    }

    /// Snapshot every parameter of `net`, in visitation order.
    pub fn capture(&mut self, net: &impl NetParams) {
        self.tensors = net
            .params()
            .iter()
            .map(|p| TensorEntry {
                name: p.name.clone(),
                rows: p.rows,
                cols: p.cols,
                data: p.value.clone(),
            })
            .collect();
    }

    /// Restore parameters into `net`. Names and shapes must line up exactly;
    /// this is a load-time integrity check, not a remapping facility.
    pub fn restore(&self, net: &mut impl NetParams) -> Result<()> {
        let mut params = net.params_mut();
        if params.len() != self.tensors.len() {
            return Err(Error::Shape {
                op: "container.restore",
                detail: format!(
                    "container has {} tensors, network has {} parameters",
                    self.tensors.len(),
                    params.len()
                ),
            });
        }
        for (p, t) in params.iter_mut().zip(&self.tensors) {
            if p.name != t.name || p.rows != t.rows || p.cols != t.cols {
                return Err(Error::Shape {
                    op: "container.restore",
                    detail: format!(
                        "expected {} [{}x{}], found {} [{}x{}]",
                        p.name, p.rows, p.cols, t.name, t.rows, t.cols
                    ),
                });
            }
            p.value.copy_from_slice(&t.data);
            p.zero_grad();
        }
        Ok(())
    }

    pub fn expect_kind(&self, kind: &'static str) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::BadFormatVersion {
                found: self.format_version,
                expected: FORMAT_VERSION,
            });
        }
        if self.kind != kind {
            return Err(Error::WrongContainerKind {
                expected: kind.into(),
                found: self.kind.clone(),
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_json(&text)
    }
}
