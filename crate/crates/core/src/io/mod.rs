//! On-disk formats.
//!
//! Grids are headerless little-endian payloads in x-major order with a JSON
//! sidecar at `<path>.json` describing shape and element type. A raw
//! SemanticKITTI `.label` voxel file loads as a semantic grid once a sidecar
//! with `"kind": "u16"` is placed next to it.

mod config;
mod maskset;
mod weights;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask3D, FovMask, GridDims, InstanceGrid, MaskLogits3D, SemanticGrid};

pub use config::RunConfig;
pub use maskset::{decode_mask_set, encode_mask_set, load_mask_set, save_mask_set, MaskSet, MASK_SET_MAGIC, MASK_SET_VERSION};
pub use weights::{load_weights, save_weights, TensorEntry, WeightManifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementKind {
    U8,
    U16,
    U32,
    F32,
}

impl ElementKind {
    pub fn width(self) -> usize {
        match self {
            ElementKind::U8 => 1,
            ElementKind::U16 => 2,
            ElementKind::U32 | ElementKind::F32 => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridManifest {
    pub dims: [usize; 3],
    pub resolution_m: f64,
    pub kind: ElementKind,
    /// Name of the label taxonomy the payload refers to, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub taxonomy: Option<String>,
}

impl GridManifest {
    pub fn new(dims: GridDims, kind: ElementKind) -> Self {
        GridManifest {
            dims: dims.shape(),
            resolution_m: dims.resolution_m,
            kind,
            taxonomy: None,
        }
    }

    pub fn grid_dims(&self) -> Result<GridDims> {
        GridDims::new(self.dims[0], self.dims[1], self.dims[2], self.resolution_m)
    }
}

/// Sidecar location for a grid payload.
pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads the sidecar manifest of a grid payload.
pub fn read_manifest(path: &Path) -> Result<GridManifest> {
    read_json(&manifest_path(path))
}

fn write_grid(path: &Path, manifest: &GridManifest, payload: &[u8]) -> Result<()> {
    fs::write(path, payload).map_err(|e| Error::io(path, e))?;
    write_json(&manifest_path(path), manifest)
}

fn read_grid(path: &Path, kind: ElementKind) -> Result<(GridDims, Vec<u8>)> {
    let payload = fs::read(path).map_err(|e| Error::io(path, e))?;
    let manifest: GridManifest = read_json(&manifest_path(path))?;
    if manifest.kind != kind {
        return Err(Error::format(
            path,
            format!("expected {kind:?} payload, manifest says {:?}", manifest.kind),
        ));
    }
    let dims = manifest
        .grid_dims()
        .map_err(|e| Error::format(path, e.to_string()))?;
    let want = dims.len() * kind.width();
    if payload.len() != want {
        return Err(Error::format(
            path,
            format!("payload is {} bytes, {dims} {kind:?} grid needs {want}", payload.len()),
        ));
    }
    Ok((dims, payload))
}

pub fn save_semantic(path: &Path, grid: &SemanticGrid, taxonomy_name: Option<&str>) -> Result<()> {
    let mut manifest = GridManifest::new(grid.dims, ElementKind::U16);
    manifest.taxonomy = taxonomy_name.map(str::to_string);
    let bytes: Vec<u8> = grid.labels.iter().flat_map(|v| v.to_le_bytes()).collect();
    write_grid(path, &manifest, &bytes)
}

pub fn load_semantic(path: &Path) -> Result<SemanticGrid> {
    let (dims, bytes) = read_grid(path, ElementKind::U16)?;
    let labels = bytes
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect();
    SemanticGrid::from_labels(dims, labels)
}

pub fn save_instances(path: &Path, grid: &InstanceGrid) -> Result<()> {
    let bytes: Vec<u8> = grid.ids.iter().flat_map(|v| v.to_le_bytes()).collect();
    write_grid(path, &GridManifest::new(grid.dims, ElementKind::U32), &bytes)
}

pub fn load_instances(path: &Path) -> Result<InstanceGrid> {
    let (dims, bytes) = read_grid(path, ElementKind::U32)?;
    let ids = bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    InstanceGrid::from_ids(dims, ids)
}

/// Boolean grid stored as one byte per voxel, 0 or 1.
pub fn save_mask(path: &Path, mask: &BinaryMask3D) -> Result<()> {
    let bytes: Vec<u8> = mask.to_bools().into_iter().map(u8::from).collect();
    write_grid(path, &GridManifest::new(mask.dims(), ElementKind::U8), &bytes)
}

pub fn load_mask(path: &Path) -> Result<BinaryMask3D> {
    let (dims, bytes) = read_grid(path, ElementKind::U8)?;
    if let Some(i) = bytes.iter().position(|&b| b > 1) {
        return Err(Error::format(
            path,
            format!("byte {i} is {}, boolean grids hold only 0 or 1", bytes[i]),
        ));
    }
    Ok(BinaryMask3D::from_fn(dims, |i| bytes[i] == 1))
}

pub fn save_fov(path: &Path, fov: &FovMask) -> Result<()> {
    save_mask(path, fov.as_mask())
}

pub fn load_fov(path: &Path) -> Result<FovMask> {
    load_mask(path).map(FovMask)
}

pub fn save_logits(path: &Path, logits: &MaskLogits3D) -> Result<()> {
    let bytes: Vec<u8> = logits.values.iter().flat_map(|v| v.to_le_bytes()).collect();
    write_grid(path, &GridManifest::new(logits.dims, ElementKind::F32), &bytes)
}

pub fn load_logits(path: &Path) -> Result<MaskLogits3D> {
    let (dims, bytes) = read_grid(path, ElementKind::F32)?;
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    MaskLogits3D::new(dims, values).map_err(|e| Error::format(path, e.to_string()))
}
