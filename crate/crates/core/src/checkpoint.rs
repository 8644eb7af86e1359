//! Model checkpoints.
//!
//! Layout:
//!
//! | bytes | field |
//! |-------|-------|
//! | 5 | magic `DNTX1` |
//! | 4 | header length `L` (`u32` LE) |
//! | L | UTF-8 JSON header |
//! | … | `f64` LE payload |
//!
//! The header records the model configuration, the ordered parameter names
//! and shapes, the optimizer moments present (if any) and an opaque trainer
//! state. The payload holds every parameter in header order, then for each
//! optimizer entry its first moment followed by its second moment.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::nn::{Adam, ParamStore};

pub const MAGIC: &[u8; 5] = b"DNTX1";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct OptimizerHeader {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    /// Parameters with stored moments, in payload order.
    entries: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    params: Vec<TensorEntry>,
    optimizer: Option<OptimizerHeader>,
    state: Option<serde_json::Value>,
}

/// A loaded checkpoint.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub optimizer: Option<Adam>,
    pub state: Option<serde_json::Value>,
}

fn push_f64s(out: &mut Vec<u8>, v: &[f64]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn to_bytes(model: &Model, optimizer: Option<&Adam>, state: Option<&serde_json::Value>) -> Result<Vec<u8>> {
    let params: Vec<TensorEntry> = model
        .store
        .iter()
        .map(|(k, p)| TensorEntry {
            name: k.clone(),
            shape: p.shape.clone(),
        })
        .collect();
    let optimizer_header = optimizer.map(|a| OptimizerHeader {
        beta1: a.beta1,
        beta2: a.beta2,
        eps: a.eps,
        step: a.step,
        entries: a.m.keys().cloned().collect(),
    });
    let header = Header {
        model: model.cfg.clone(),
        params,
        optimizer: optimizer_header,
        state: state.cloned(),
    };
    let json = serde_json::to_vec(&header)?;
    let len = u32::try_from(json.len()).map_err(|_| Error::Checkpoint("header too large".into()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&json);
    for (_, p) in model.store.iter() {
        push_f64s(&mut out, &p.data);
    }
    if let Some(a) = optimizer {
        for (k, m) in &a.m {
            let v = a
                .v
                .get(k)
                .ok_or_else(|| Error::Checkpoint(format!("optimizer moment mismatch for {k}")))?;
            push_f64s(&mut out, m);
            push_f64s(&mut out, v);
        }
    }
    Ok(out)
}

struct Payload<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Payload<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let end = self
            .pos
            .checked_add(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)
            .filter(|e| *e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("payload truncated while reading {what}")))?;
        let v = self.bytes[self.pos..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        self.pos = end;
        Ok(v)
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 9 || &bytes[..5] != MAGIC {
        return Err(Error::Checkpoint("not a DNTX1 checkpoint".into()));
    }
    let len = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let json = bytes
        .get(9..9 + len)
        .ok_or_else(|| Error::Checkpoint("header truncated".into()))?;
    let header: Header = serde_json::from_slice(json)?;
    let mut payload = Payload {
        bytes: &bytes[9 + len..],
        pos: 0,
    };
    let mut store = ParamStore::new();
    for e in &header.params {
        let n = e.shape.iter().product();
        store.insert(&e.name, &e.shape, payload.take(n, &e.name)?);
    }
    let optimizer = match &header.optimizer {
        None => None,
        Some(o) => {
            let mut m = BTreeMap::new();
            let mut v = BTreeMap::new();
            for k in &o.entries {
                let n = store
                    .get(k)
                    .ok_or_else(|| Error::Checkpoint(format!("optimizer entry {k} has no parameter")))?
                    .data
                    .len();
                m.insert(k.clone(), payload.take(n, k)?);
                v.insert(k.clone(), payload.take(n, k)?);
            }
            Some(Adam {
                beta1: o.beta1,
                beta2: o.beta2,
                eps: o.eps,
                step: o.step,
                m,
                v,
            })
        }
    };
    if payload.pos != payload.bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing payload bytes",
            payload.bytes.len() - payload.pos
        )));
    }
    Ok(Checkpoint {
        model: Model::with_store(header.model, store)?,
        optimizer,
        state: header.state,
    })
}

pub fn save(path: &Path, model: &Model, optimizer: Option<&Adam>, state: Option<&serde_json::Value>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, to_bytes(model, optimizer, state)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::MissingCheckpoint(path.to_path_buf()));
    }
    from_bytes(&fs::read(path)?)
}
