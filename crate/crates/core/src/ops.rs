//! Mask-level primitives shared by merging, matching and evaluation.

use crate::error::{ensure_same_dims, Result};
use crate::grid::{BinaryMask3D, SemanticGrid};
use crate::taxonomy::{ClassId, ClassTaxonomy};

/// `|a ∩ b| / |a ∪ b|` over voxels outside `ignore`; 0 for an empty union.
pub fn mask_iou(a: &BinaryMask3D, b: &BinaryMask3D, ignore: Option<&BinaryMask3D>) -> Result<f64> {
    ensure_same_dims(a.dims(), b.dims())?;
    if let Some(ig) = ignore {
        ensure_same_dims(a.dims(), ig.dims())?;
    }
    let mut inter = 0u64;
    let mut union = 0u64;
    for (i, (wa, wb)) in a.words().iter().zip(b.words()).enumerate() {
        let keep = ignore.map_or(u64::MAX, |ig| !ig.words()[i]);
        inter += (wa & wb & keep).count_ones() as u64;
        union += ((wa | wb) & keep).count_ones() as u64;
    }
    Ok(if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    })
}

/// Voxels labelled `class_id`.
pub fn class_mask(
    grid: &SemanticGrid,
    taxonomy: &ClassTaxonomy,
    class_id: ClassId,
) -> Result<BinaryMask3D> {
    taxonomy.ensure_known(class_id)?;
    Ok(BinaryMask3D::from_fn(grid.dims, |i| grid.labels[i] == class_id))
}

/// Voxels whose label is unknown; empty when the taxonomy has no unknown class.
pub fn unknown_mask(grid: &SemanticGrid, taxonomy: &ClassTaxonomy) -> BinaryMask3D {
    match taxonomy.unknown_id() {
        Some(u) => BinaryMask3D::from_fn(grid.dims, |i| grid.labels[i] == u),
        None => BinaryMask3D::empty(grid.dims),
    }
}
