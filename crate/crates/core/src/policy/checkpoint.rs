//! Binary checkpoint container.
//!
//! Layout: the 8 magic bytes `URPCKPT1`, a little-endian u64 header length, a
//! TOML header of that many bytes, then for every section listed in the header
//! and every tensor of the parameter layout: a u32 rank, one u64 per
//! dimension, and the values as little-endian f64.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, UrpError};
use crate::numeric::Real;

use super::params::{ParamLayout, PolicyParams, ModelConfig};

pub const MAGIC: &[u8; 8] = b"URPCKPT1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    Policy,
    /// Evaluation stand-in that answers every prompt with the gold value.
    OracleStub,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    kind: CheckpointKind,
    sections: Vec<String>,
    model: ModelConfig,
    #[serde(default)]
    meta: toml::Table,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    pub model: ModelConfig,
    pub meta: toml::Table,
    pub sections: Vec<(String, Vec<f64>)>,
}

impl Checkpoint {
    pub fn new(kind: CheckpointKind, model: ModelConfig) -> Self {
        Checkpoint {
            kind,
            model,
            meta: toml::Table::new(),
            sections: Vec::new(),
        }
    }

    pub fn with_params<T: Real>(params: &PolicyParams<T>) -> Self {
        let mut c = Self::new(CheckpointKind::Policy, params.config.clone());
        c.push_section("theta", params.to_f64());
        c
    }

    pub fn push_section(&mut self, name: &str, values: Vec<f64>) {
        self.sections.push((name.to_string(), values));
    }

    pub fn section(&self, name: &str) -> Option<&[f64]> {
        self.sections.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    pub fn params<T: Real>(&self, name: &str) -> Result<PolicyParams<T>> {
        let values = self
            .section(name)
            .ok_or_else(|| UrpError::Data(format!("checkpoint has no {name:?} section")))?;
        PolicyParams::from_f64(&self.model, values)
    }

    /// Refuses a checkpoint whose architecture differs from `expected`.
    pub fn expect_model(&self, expected: &ModelConfig) -> Result<()> {
        if &self.model != expected {
            return Err(UrpError::Refused(format!(
                "checkpoint model config {:?} does not match the run config {:?}",
                self.model, expected
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let layout = ParamLayout::new(&self.model);
        let header = Header {
            kind: self.kind,
            sections: self.sections.iter().map(|(n, _)| n.clone()).collect(),
            model: self.model.clone(),
            meta: self.meta.clone(),
        };
        let text = toml::to_string(&header).map_err(|e| UrpError::Data(format!("checkpoint header: {e}")))?;
        let mut out = Vec::with_capacity(16 + text.len() + 8 * layout.total * self.sections.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(text.len() as u64).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        for (name, values) in &self.sections {
            if values.len() != layout.total {
                return Err(UrpError::Data(format!(
                    "section {name:?} has {} values, layout needs {}",
                    values.len(),
                    layout.total
                )));
            }
            for e in &layout.entries {
                out.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
                for &dim in &e.shape {
                    out.extend_from_slice(&(dim as u64).to_le_bytes());
                }
                for v in &values[e.offset..e.offset + e.len()] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(UrpError::Data("not a checkpoint (bad magic bytes)".into()));
        }
        let len = r.u64()? as usize;
        let text = std::str::from_utf8(r.take(len)?)
            .map_err(|_| UrpError::Data("checkpoint header is not UTF-8".into()))?;
        let header: Header = toml::from_str(text).map_err(|e| UrpError::Data(format!("checkpoint header: {e}")))?;
        header.model.validate()?;
        let layout = ParamLayout::new(&header.model);
        let mut sections = Vec::with_capacity(header.sections.len());
        for name in &header.sections {
            let mut values = Vec::with_capacity(layout.total);
            for e in &layout.entries {
                let rank = r.u32()? as usize;
                let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
                if shape != e.shape {
                    return Err(UrpError::Data(format!(
                        "tensor {} in section {name:?} has shape {shape:?}, expected {:?}",
                        e.name, e.shape
                    )));
                }
                for _ in 0..e.len() {
                    values.push(f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")));
                }
            }
            sections.push((name.clone(), values));
        }
        if r.pos != bytes.len() {
            return Err(UrpError::Data("trailing bytes after the last tensor".into()));
        }
        Ok(Checkpoint {
            kind: header.kind,
            model: header.model,
            meta: header.meta,
            sections,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| UrpError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| UrpError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| UrpError::Data("checkpoint is truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
