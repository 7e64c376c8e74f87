//! `CSNN1` checkpoint files.
//!
//! Layout: the five magic bytes `CSNN1`, a little-endian `u32` header length,
//! a UTF-8 JSON header, then every parameter as a little-endian `f64`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::arch::{build_layout, ArchDescriptor, LayerSlice, ModelParams};
use crate::scalar::Real;

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"CSNN1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub arch: ArchDescriptor,
    pub layout: Vec<LayerSlice>,
    pub param_count: usize,
    pub seed: u64,
    /// Free-form training metadata (iterations, losses, templates, ...).
    #[serde(default)]
    pub metadata: serde_json::Value,
}

pub fn encode_checkpoint<T: Real>(params: &ModelParams<T>, seed: u64, metadata: serde_json::Value) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        arch: params.arch.clone(),
        layout: params.layout.clone(),
        param_count: params.values.len(),
        seed,
        metadata,
    };
    let json = serde_json::to_vec(&header)?;
    let len = u32::try_from(json.len()).map_err(|_| Error::Parameter("checkpoint header too large".into()))?;
    let mut out = Vec::with_capacity(9 + json.len() + 8 * params.values.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&json);
    for v in &params.values {
        out.extend_from_slice(&v.as_f64().to_le_bytes());
    }
    Ok(out)
}

pub fn decode_checkpoint<T: Real>(bytes: &[u8]) -> Result<(ModelParams<T>, CheckpointHeader)> {
    let bad = |m: &str| Error::MalformedFile(format!("checkpoint: {m}"));
    if bytes.len() < 9 || &bytes[..5] != CHECKPOINT_MAGIC {
        return Err(bad("missing CSNN1 magic"));
    }
    let len = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
    let json = bytes.get(9..9 + len).ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(json)?;
    header.arch.validate()?;
    if header.param_count != header.arch.param_count() || header.layout != build_layout(&header.arch) {
        return Err(bad("header layout does not match the architecture"));
    }
    let payload = &bytes[9 + len..];
    if payload.len() != 8 * header.param_count {
        return Err(bad("payload length does not match parameter count"));
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
        .collect();
    let params = ModelParams::from_values(header.arch.clone(), values)?;
    Ok((params, header))
}

pub fn save_checkpoint<T: Real>(
    path: impl AsRef<Path>,
    params: &ModelParams<T>,
    seed: u64,
    metadata: serde_json::Value,
) -> Result<()> {
    let bytes = encode_checkpoint(params, seed, metadata)?;
    std::fs::File::create(path)?.write_all(&bytes)?;
    Ok(())
}

pub fn load_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<(ModelParams<T>, CheckpointHeader)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let params = ModelParams::<f64>::init(ArchDescriptor::desk_vector(43), 17).unwrap();
        let meta = serde_json::json!({"iterations": 12});
        let bytes = encode_checkpoint(&params, 17, meta.clone()).unwrap();
        assert_eq!(&bytes[..5], b"CSNN1");
        let (back, header) = decode_checkpoint::<f64>(&bytes).unwrap();
        assert_eq!(back, params);
        assert_eq!(header.seed, 17);
        assert_eq!(header.metadata, meta);
    }

    #[test]
    fn f32_params_widen_exactly() {
        let params = ModelParams::<f32>::init(ArchDescriptor::vector(&[4], &[4], 2), 1).unwrap();
        let bytes = encode_checkpoint(&params, 1, serde_json::Value::Null).unwrap();
        let (back, _) = decode_checkpoint::<f32>(&bytes).unwrap();
        assert_eq!(back.values, params.values);
    }

    #[test]
    fn corruption_detected() {
        let params = ModelParams::<f64>::init(ArchDescriptor::vector(&[4], &[4], 2), 1).unwrap();
        let bytes = encode_checkpoint(&params, 1, serde_json::Value::Null).unwrap();
        assert!(decode_checkpoint::<f64>(&bytes[..bytes.len() - 3]).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(matches!(decode_checkpoint::<f64>(&wrong), Err(Error::MalformedFile(_))));
        let mut nan = bytes.clone();
        let n = nan.len();
        nan[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(decode_checkpoint::<f64>(&nan).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csnn");
        let params = ModelParams::<f64>::init(ArchDescriptor::desk_segmentation(), 2).unwrap();
        save_checkpoint(&path, &params, 2, serde_json::Value::Null).unwrap();
        assert_eq!(load_checkpoint::<f64>(&path).unwrap().0, params);
    }
}
