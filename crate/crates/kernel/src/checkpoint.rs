//! Binary checkpoint format.
//!
//! ```text
//! BSTCKPT1\n
//! <compact UTF-8 JSON header>\n
//! <little-endian f64 payload>
//! ```
//!
//! The header is `{"metadata": <any>, "tensors": [{"name", "shape", "offset"}]}`
//! where `offset` is the byte offset of the tensor within the payload.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{KernelError, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8] = b"BSTCKPT1\n";

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    metadata: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

pub fn encode(store: &ParamStore, metadata: &serde_json::Value) -> Result<Vec<u8>> {
    let mut tensors = Vec::with_capacity(store.len());
    let mut payload = Vec::with_capacity(store.num_scalars() * 8);
    for (name, t) in store.iter() {
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset: payload.len(),
        });
        for x in t.data() {
            payload.extend_from_slice(&x.to_le_bytes());
        }
    }
    let header = serde_json::to_vec(&Header {
        metadata: metadata.clone(),
        tensors,
    })?;
    let mut out = Vec::with_capacity(MAGIC.len() + header.len() + 1 + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&header);
    out.push(b'\n');
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<(ParamStore, serde_json::Value)> {
    let rest = bytes
        .strip_prefix(MAGIC)
        .ok_or_else(|| KernelError::Format("missing BSTCKPT1 magic".into()))?;
    let newline = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| KernelError::Format("unterminated header".into()))?;
    let header: Header = serde_json::from_slice(&rest[..newline])?;
    let payload = &rest[newline + 1..];
    let mut store = ParamStore::new();
    for entry in header.tensors {
        let n: usize = entry.shape.iter().product();
        let end = entry.offset + n * 8;
        if end > payload.len() {
            return Err(KernelError::Format(format!("tensor `{}` runs past the payload", entry.name)));
        }
        let data = payload[entry.offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        store.insert(entry.name, Tensor::new(entry.shape, data)?)?;
    }
    Ok((store, header.metadata))
}

pub fn save(path: &Path, store: &ParamStore, metadata: &serde_json::Value) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, encode(store, metadata)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(ParamStore, serde_json::Value)> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            tensors in prop::collection::vec(
                (1usize..4, 1usize..5).prop_flat_map(|(r, c)| {
                    prop::collection::vec(-1e300f64..1e300, r * c).prop_map(move |d| (r, c, d))
                }),
                1..5,
            )
        ) {
            let mut store = ParamStore::new();
            for (i, (r, c, d)) in tensors.iter().enumerate() {
                store.insert(format!("t{i}"), Tensor::new(vec![*r, *c], d.clone()).unwrap()).unwrap();
            }
            let meta = serde_json::json!({"direction": "e->f", "dims": [3, 4]});
            let bytes = encode(&store, &meta).unwrap();
            let (back, meta_back) = decode(&bytes).unwrap();
            prop_assert_eq!(meta_back, meta.clone());
            prop_assert_eq!(back.len(), store.len());
            for ((n1, t1), (n2, t2)) in store.iter().zip(back.iter()) {
                prop_assert_eq!(n1, n2);
                prop_assert_eq!(t1.shape(), t2.shape());
                let b1: Vec<u64> = t1.data().iter().map(|x| x.to_bits()).collect();
                let b2: Vec<u64> = t2.data().iter().map(|x| x.to_bits()).collect();
                prop_assert_eq!(b1, b2);
            }
            prop_assert_eq!(encode(&back, &meta).unwrap(), bytes);
        }
    }

    #[test]
    fn rejects_bad_magic() {
        assert!(matches!(decode(b"NOTCKPT\n{}\n"), Err(KernelError::Format(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut store = ParamStore::new();
        store.insert("w", Tensor::matrix(2, 2, vec![1.0, -0.0, 3.5, 1e-300]).unwrap()).unwrap();
        save(&path, &store, &serde_json::Value::Null).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(MAGIC));
        let (back, _) = load(&path).unwrap();
        assert_eq!(back.by_name("w").unwrap().data()[1].to_bits(), (-0.0f64).to_bits());
    }
}
