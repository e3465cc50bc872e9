//! Field checkpoints: `MSTF` magic, `u32` format version, `u32` header length,
//! a JSON header, then little-endian `f32` blobs (parameters, and Adam first
//! and second moments when an optimizer is stored).

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Adam, AdamConfig, FieldConfig, NeuralTextureField};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MSTF";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    field: FieldConfig,
    param_count: usize,
    optimizer: Option<OptimizerHeader>,
    meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct OptimizerHeader {
    config: AdamConfig,
    step: u64,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub field: NeuralTextureField,
    pub optimizer: Option<Adam>,
    /// Caller-defined state (e.g. trainer counters).
    pub meta: serde_json::Value,
}

/// Writes atomically through a temporary sibling file.
pub fn save_checkpoint(
    path: impl AsRef<Path>,
    field: &NeuralTextureField,
    optimizer: Option<&Adam>,
    meta: &serde_json::Value,
) -> Result<()> {
    let path = path.as_ref();
    let header = Header {
        field: field.config().clone(),
        param_count: field.param_count(),
        optimizer: optimizer.map(|a| OptimizerHeader {
            config: a.config.clone(),
            step: a.step,
        }),
        meta: meta.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut bytes = Vec::with_capacity(12 + json.len() + field.param_bytes() * 3);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&json);
    let mut push = |v: &[f32]| v.iter().for_each(|x| bytes.extend_from_slice(&x.to_le_bytes()));
    push(field.params());
    if let Some(a) = optimizer {
        push(&a.m);
        push(&a.v);
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(Error::Checkpoint(format!("{}: not a field checkpoint", path.display())));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = bytes
        .get(12..12 + hlen)
        .ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
    let header: Header = serde_json::from_slice(body)?;
    let n = header.param_count;
    let blobs = if header.optimizer.is_some() { 3 } else { 1 };
    let data = &bytes[12 + hlen..];
    if data.len() != n * 4 * blobs {
        return Err(Error::Checkpoint(format!(
            "expected {} blob bytes, found {}",
            n * 4 * blobs,
            data.len()
        )));
    }
    let read = |k: usize| -> Vec<f32> {
        data[k * n * 4..(k + 1) * n * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect()
    };
    let field = NeuralTextureField::from_params(header.field, read(0))?;
    let optimizer = header.optimizer.map(|o| Adam {
        config: o.config,
        m: read(1),
        v: read(2),
        step: o.step,
    });
    Ok(Checkpoint {
        field,
        optimizer,
        meta: header.meta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::FieldGradient;

    #[test]
    fn roundtrip_with_optimizer_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut f = NeuralTextureField::new(FieldConfig::small(), 4).unwrap();
        let mut adam = Adam::new(AdamConfig::default(), &f);
        let mut g: FieldGradient = f.zero_gradient();
        for (i, x) in g.as_mut_slice().iter_mut().enumerate() {
            *x = (i % 13) as f64 - 6.0;
        }
        adam.step(&mut f, &g);
        let meta = serde_json::json!({"epoch": 3});
        let p = dir.path().join("ck/field.ckpt");
        save_checkpoint(&p, &f, Some(&adam), &meta).unwrap();
        let ck = load_checkpoint(&p).unwrap();
        assert_eq!(ck.field, f);
        assert_eq!(ck.optimizer.unwrap(), adam);
        assert_eq!(ck.meta, meta);
    }

    #[test]
    fn garbage_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.ckpt");
        std::fs::write(&p, b"hello world, not a checkpoint").unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::Checkpoint(_))));
    }
}
