//! Single-file checkpoints: `u64` little-endian header length, a JSON header
//! (configuration, tensor names, shapes and byte offsets, free-form
//! metadata), then every tensor as little-endian `f32`.
//!
//! Parameters are rounded to `f32` on save, so a model whose parameters are
//! already `f32`-representable survives a round-trip bit for bit.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, Params};
use crate::error::ModelError;

pub const FORMAT: &str = "chargefill-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the data section.
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub tensors: Vec<TensorEntry>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

pub fn to_bytes(model: &Model, meta: &serde_json::Value) -> Vec<u8> {
    let mut tensors = Vec::new();
    let mut data = Vec::new();
    model.params.for_each(|name, t| {
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: t.shape.clone(),
            offset: data.len() as u64,
        });
        for v in &t.data {
            data.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    });
    let header = Header {
        format: FORMAT.into(),
        version: FORMAT_VERSION,
        config: model.config.clone(),
        tensors,
        meta: meta.clone(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(8 + json.len() + data.len());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&data);
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<(Model, serde_json::Value), ModelError> {
    let bad = |m: String| ModelError::Checkpoint(m);
    if bytes.len() < 8 {
        return Err(bad("file shorter than its length prefix".into()));
    }
    let hlen = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    let data_start = 8usize
        .checked_add(hlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad(format!("header length {hlen} exceeds file size")))?;
    let header: Header = serde_json::from_slice(&bytes[8..data_start]).map_err(|e| bad(format!("header: {e}")))?;
    if header.format != FORMAT || header.version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format {} v{}", header.format, header.version)));
    }
    header.config.validate()?;
    let data = &bytes[data_start..];
    let mut params = Params::init(&header.config, &mut ChaCha8Rng::seed_from_u64(0));
    let names = params.names();
    if names.len() != header.tensors.len() {
        return Err(bad(format!("expected {} tensors, found {}", names.len(), header.tensors.len())));
    }
    let mut err = None;
    let mut idx = 0;
    params.for_each_mut(|name, t| {
        if err.is_some() {
            return;
        }
        let e = &header.tensors[idx];
        idx += 1;
        if e.name != name || e.shape != t.shape {
            err = Some(format!("tensor {name}: header has {} {:?}", e.name, e.shape));
            return;
        }
        let start = e.offset as usize;
        let end = start + 4 * t.len();
        if end > data.len() {
            err = Some(format!("tensor {name} runs past end of file"));
            return;
        }
        for (v, c) in t.data.iter_mut().zip(data[start..end].chunks_exact(4)) {
            *v = f32::from_le_bytes(c.try_into().unwrap()) as f64;
        }
    });
    if let Some(e) = err {
        return Err(bad(e));
    }
    Ok((Model::from_parts(header.config, params), header.meta))
}

pub fn save(model: &Model, meta: &serde_json::Value, path: &Path) -> Result<(), ModelError> {
    std::fs::write(path, to_bytes(model, meta))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(Model, serde_json::Value), ModelError> {
    from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut m = Model::new(ModelConfig::tiny(3), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        m.params.quantize_f32();
        let meta = serde_json::json!({"stations": ["a", "b", "c"]});
        let bytes = to_bytes(&m, &meta);
        let (back, meta_back) = from_bytes(&bytes).unwrap();
        let bits = |p: &Params| p.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.params), bits(&m.params));
        assert_eq!(back.config, m.config);
        assert_eq!(meta_back, meta);
        assert_eq!(to_bytes(&back, &meta), bytes);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let m = Model::new(ModelConfig::tiny(1), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let mut bytes = to_bytes(&m, &serde_json::Value::Null);
        bytes.truncate(bytes.len() - 1);
        assert!(matches!(from_bytes(&bytes), Err(ModelError::Checkpoint(_))));
        assert!(from_bytes(&[1, 2]).is_err());
    }
}
