//! Parameter files: magic, version, a JSON header describing the model and
//! every tensor, then the raw little-endian f64 values in header order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"HEATNETP";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    tensors: Vec<TensorHeader>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    shape: Vec<usize>,
}

pub fn save_params(params: &ModelParams, path: &Path) -> Result<()> {
    let header = Header {
        config: params.config.clone(),
        tensors: params
            .store
            .entries()
            .iter()
            .map(|e| TensorHeader {
                name: e.name.clone(),
                shape: e.value.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(json.len() + 8 * params.store.numel() + 20);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for e in params.store.entries() {
        for v in e.value.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

fn incompatible(message: impl Into<String>) -> Error {
    Error::Compatibility(message.into())
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(incompatible(format!("file truncated while reading {what}")));
    }
    let (head, tail) = bytes.split_at(n);
    *bytes = tail;
    Ok(head)
}

/// Loads a parameter file, rebuilding the model layout from its header.
pub fn load_params(path: &Path) -> Result<ModelParams> {
    let bytes = fs::read(path)?;
    let mut rest = bytes.as_slice();
    if take(&mut rest, MAGIC.len(), "magic")? != MAGIC {
        return Err(incompatible("not a parameter file"));
    }
    let version = u32::from_le_bytes(take(&mut rest, 4, "version")?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(incompatible(format!("file version {version}, expected {VERSION}")));
    }
    let len = u64::from_le_bytes(take(&mut rest, 8, "header length")?.try_into().expect("8 bytes"));
    let header: Header = serde_json::from_slice(take(&mut rest, len as usize, "header")?)
        .map_err(|e| incompatible(format!("bad header: {e}")))?;

    let mut params = ModelParams::init(header.config, 0).map_err(|e| incompatible(e.to_string()))?;
    let layout = params.store.entries();
    if layout.len() != header.tensors.len() {
        return Err(incompatible(format!(
            "file lists {} tensors, the model has {}",
            header.tensors.len(),
            layout.len()
        )));
    }
    let mut values = Vec::with_capacity(layout.len());
    for (entry, th) in layout.iter().zip(&header.tensors) {
        if entry.name != th.name || entry.value.shape() != th.shape.as_slice() {
            return Err(incompatible(format!(
                "tensor {} {:?} does not match model tensor {} {:?}",
                th.name,
                th.shape,
                entry.name,
                entry.value.shape()
            )));
        }
        let n: usize = th.shape.iter().product();
        let raw = take(&mut rest, 8 * n, &th.name)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        values.push(Tensor::new(th.shape.clone(), data)?);
    }
    if !rest.is_empty() {
        return Err(incompatible(format!("{} trailing bytes", rest.len())));
    }
    params.store.set_values(values)?;
    Ok(params)
}

/// Loads a parameter file and insists that it was written for `expected`.
pub fn load_params_expecting(path: &Path, expected: &ModelConfig) -> Result<ModelParams> {
    let params = load_params(path)?;
    if params.config.variant != expected.variant {
        return Err(incompatible(format!(
            "file holds variant {}, expected {}",
            params.config.variant, expected.variant
        )));
    }
    if &params.config != expected {
        return Err(incompatible(format!(
            "file configuration {:?} differs from expected {:?}",
            params.config, expected
        )));
    }
    Ok(params)
}
