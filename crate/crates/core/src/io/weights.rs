//! Decoder weight files: a flat little-endian f32 payload plus a JSON sidecar
//! listing every tensor's name, shape and element offset.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{manifest_path, read_json, write_json};
use crate::decoder::{DecoderConfig, DecoderWeights};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the payload, in elements.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightManifest {
    pub config: DecoderConfig,
    pub tensors: Vec<TensorEntry>,
}

pub fn save_weights(path: &Path, cfg: &DecoderConfig, weights: &DecoderWeights) -> Result<()> {
    weights.validate(cfg)?;
    let mut payload = Vec::new();
    let mut tensors = Vec::new();
    let mut offset = 0;
    for (name, shape, data) in weights.tensors() {
        tensors.push(TensorEntry { name, shape, offset });
        offset += data.len();
        payload.extend(data.iter().flat_map(|v| v.to_le_bytes()));
    }
    fs::write(path, payload).map_err(|e| Error::io(path, e))?;
    write_json(
        &manifest_path(path),
        &WeightManifest {
            config: cfg.clone(),
            tensors,
        },
    )
}

pub fn load_weights(path: &Path) -> Result<(DecoderConfig, DecoderWeights)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let manifest: WeightManifest = read_json(&manifest_path(path))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::format(path, "payload is not a whole number of f32 values"));
    }
    let floats: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let lookup = |name: &str, shape: &[usize]| -> Result<Vec<f32>> {
        let entry = manifest
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::format(path, format!("tensor {name} missing from manifest")))?;
        if entry.shape != shape {
            return Err(Error::format(
                path,
                format!("tensor {name} has shape {:?}, expected {shape:?}", entry.shape),
            ));
        }
        let len: usize = shape.iter().product();
        floats
            .get(entry.offset..entry.offset + len)
            .map(<[f32]>::to_vec)
            .ok_or_else(|| Error::format(path, format!("tensor {name} runs past the payload")))
    };
    let weights = DecoderWeights::from_tensors(&manifest.config, lookup)
        .map_err(|e| match e {
            Error::InvalidInput(reason) => Error::format(path, reason),
            other => other,
        })?;
    Ok((manifest.config, weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridDims;

    #[test]
    fn weights_round_trip() {
        let cfg = DecoderConfig {
            num_queries: 5,
            num_heads: 2,
            num_layers: 2,
            embed_dim: 4,
            pos_dim: 6,
            num_classes: 3,
            voxel_dims: GridDims::cube(2, 2, 2),
            seed: 9,
        };
        let w = DecoderWeights::random(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.bin");
        save_weights(&p, &cfg, &w).unwrap();
        let first = fs::read(&p).unwrap();
        let (cfg2, w2) = load_weights(&p).unwrap();
        assert_eq!(cfg2, cfg);
        assert_eq!(w2, w);
        save_weights(&p, &cfg2, &w2).unwrap();
        assert_eq!(fs::read(&p).unwrap(), first);

        fs::write(&p, &first[..first.len() - 4]).unwrap();
        assert!(load_weights(&p).is_err());
        let mut nan = first.clone();
        nan[..4].copy_from_slice(&f32::NAN.to_le_bytes());
        fs::write(&p, nan).unwrap();
        assert!(load_weights(&p).is_err());
    }
}
