//! Binary mask-set file.
//!
//! Little-endian throughout. Header (34 bytes):
//!
//! | offset | type | field |
//! |---|---|---|
//! | 0 | `[u8; 4]` | magic `VPMS` |
//! | 4 | u16 | version (1) |
//! | 6 | u32 | record count |
//! | 10 | u16 | thing-class count |
//! | 12 | u32 × 3 | mask dims h, w, d |
//! | 24 | f64 | voxel size in metres |
//! | 32 | u16 | flags, bit 0 = records carry a score |
//!
//! Each record is the class probabilities (f32 per class), the score (f32,
//! only when flagged) and the dense logits (f32 per voxel, x-major).

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::grid::{GridDims, MaskLogits3D};
use crate::merge::MaskPrediction;

pub const MASK_SET_MAGIC: [u8; 4] = *b"VPMS";
pub const MASK_SET_VERSION: u16 = 1;
const HEADER_LEN: usize = 34;
const FLAG_SCORE: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    pub dims: GridDims,
    pub num_classes: usize,
    pub predictions: Vec<MaskPrediction>,
}

impl MaskSet {
    pub fn new(dims: GridDims, num_classes: usize, predictions: Vec<MaskPrediction>) -> Result<Self> {
        let set = MaskSet {
            dims,
            num_classes,
            predictions,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        if self.num_classes > u16::MAX as usize || self.predictions.len() > u32::MAX as usize {
            return Err(Error::invalid("mask set too large for the file header"));
        }
        let scored = self.predictions.first().map_or(false, |p| p.score.is_some());
        for (i, p) in self.predictions.iter().enumerate() {
            if p.class_probs.len() != self.num_classes {
                return Err(Error::invalid(format!(
                    "prediction {i} has {} class probabilities, expected {}",
                    p.class_probs.len(),
                    self.num_classes
                )));
            }
            if p.logits.dims.shape() != self.dims.shape() {
                return Err(Error::invalid(format!(
                    "prediction {i} mask is {}, expected {}",
                    p.logits.dims, self.dims
                )));
            }
            if p.score.is_some() != scored {
                return Err(Error::invalid(
                    "either every prediction carries a score or none does",
                ));
            }
            let finite = p.class_probs.iter().chain(p.score.iter()).all(|v| v.is_finite());
            if !finite {
                return Err(Error::invalid(format!("prediction {i} has non-finite values")));
            }
        }
        Ok(())
    }

    fn has_scores(&self) -> bool {
        self.predictions.first().map_or(false, |p| p.score.is_some())
    }
}

pub fn encode_mask_set(set: &MaskSet) -> Result<Vec<u8>> {
    set.validate()?;
    let per_record = 4 * (set.num_classes + usize::from(set.has_scores()) + set.dims.len());
    let mut out = Vec::with_capacity(HEADER_LEN + per_record * set.predictions.len());
    out.extend_from_slice(&MASK_SET_MAGIC);
    // Writes into a Vec cannot fail.
    out.write_u16::<LE>(MASK_SET_VERSION).unwrap();
    out.write_u32::<LE>(set.predictions.len() as u32).unwrap();
    out.write_u16::<LE>(set.num_classes as u16).unwrap();
    for n in set.dims.shape() {
        let n = u32::try_from(n).map_err(|_| Error::invalid("mask dims exceed u32"))?;
        out.write_u32::<LE>(n).unwrap();
    }
    out.write_f64::<LE>(set.dims.resolution_m).unwrap();
    out.write_u16::<LE>(if set.has_scores() { FLAG_SCORE } else { 0 }).unwrap();
    for p in &set.predictions {
        for &v in p.class_probs.iter().chain(p.score.iter()).chain(p.logits.values.iter()) {
            out.write_f32::<LE>(v).unwrap();
        }
    }
    Ok(out)
}

pub fn decode_mask_set(bytes: &[u8], path: &Path) -> Result<MaskSet> {
    let bad = |reason: String| Error::format(path, reason);
    let truncated = |_| bad("file is truncated".to_string());
    let mut r = Cursor::new(bytes);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if magic != MASK_SET_MAGIC {
        return Err(bad(format!("bad magic {magic:?}, not a mask-set file")));
    }
    let version = r.read_u16::<LE>().map_err(truncated)?;
    if version != MASK_SET_VERSION {
        return Err(bad(format!("unsupported mask-set version {version}")));
    }
    let count = r.read_u32::<LE>().map_err(truncated)? as usize;
    let num_classes = r.read_u16::<LE>().map_err(truncated)? as usize;
    let mut shape = [0usize; 3];
    for s in &mut shape {
        *s = r.read_u32::<LE>().map_err(truncated)? as usize;
    }
    let resolution_m = r.read_f64::<LE>().map_err(truncated)?;
    let flags = r.read_u16::<LE>().map_err(truncated)?;
    if flags & !FLAG_SCORE != 0 {
        return Err(bad(format!("unknown flag bits {flags:#06x}")));
    }
    let dims = GridDims::new(shape[0], shape[1], shape[2], resolution_m)
        .map_err(|e| bad(e.to_string()))?;
    let scored = flags & FLAG_SCORE != 0;
    let per_record = 4 * (num_classes + usize::from(scored) + dims.len());
    let expected = count
        .checked_mul(per_record)
        .and_then(|b| b.checked_add(HEADER_LEN))
        .ok_or_else(|| bad("header sizes overflow".to_string()))?;
    if bytes.len() != expected {
        return Err(bad(format!(
            "{count} records of {per_record} bytes need {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    let mut predictions = Vec::with_capacity(count);
    for i in 0..count {
        let mut class_probs = vec![0f32; num_classes];
        r.read_f32_into::<LE>(&mut class_probs).map_err(truncated)?;
        let score = if scored {
            Some(r.read_f32::<LE>().map_err(truncated)?)
        } else {
            None
        };
        let mut values = vec![0f32; dims.len()];
        r.read_f32_into::<LE>(&mut values).map_err(truncated)?;
        if class_probs.iter().chain(score.iter()).any(|v| !v.is_finite()) {
            return Err(bad(format!("record {i} has non-finite class probabilities or score")));
        }
        let logits = MaskLogits3D::new(dims, values).map_err(|e| bad(format!("record {i}: {e}")))?;
        predictions.push(MaskPrediction {
            class_probs,
            logits,
            score,
        });
    }
    Ok(MaskSet {
        dims,
        num_classes,
        predictions,
    })
}

pub fn save_mask_set(path: &Path, set: &MaskSet) -> Result<()> {
    let bytes = encode_mask_set(set)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_mask_set(path: &Path) -> Result<MaskSet> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_mask_set(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_set(rng: &mut ChaCha8Rng, scored: bool) -> MaskSet {
        let dims = GridDims::new(rng.gen_range(1..5), rng.gen_range(1..5), rng.gen_range(1..4), 0.8).unwrap();
        let classes = rng.gen_range(1..4);
        let preds = (0..rng.gen_range(0..5))
            .map(|_| MaskPrediction {
                class_probs: (0..classes).map(|_| rng.gen()).collect(),
                logits: MaskLogits3D::new(dims, (0..dims.len()).map(|_| rng.gen_range(-5.0..5.0)).collect()).unwrap(),
                score: scored.then(|| rng.gen()),
            })
            .collect();
        MaskSet::new(dims, classes, preds).unwrap()
    }

    #[test]
    fn header_layout() {
        let dims = GridDims::new(2, 3, 1, 0.8).unwrap();
        let set = MaskSet::new(
            dims,
            2,
            vec![MaskPrediction {
                class_probs: vec![0.5, 0.25],
                logits: MaskLogits3D::filled(dims, 1.0),
                score: Some(0.75),
            }],
        )
        .unwrap();
        let b = encode_mask_set(&set).unwrap();
        assert_eq!(&b[..4], b"VPMS");
        assert_eq!(b[4..6], [1, 0]);
        assert_eq!(b[6..10], [1, 0, 0, 0]);
        assert_eq!(b[10..12], [2, 0]);
        assert_eq!(b[12..24], [2, 0, 0, 0, 3, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(b[24..32], 0.8f64.to_le_bytes());
        assert_eq!(b[32..34], [1, 0]);
        assert_eq!(b[34..38], 0.5f32.to_le_bytes());
        assert_eq!(b[42..46], 0.75f32.to_le_bytes());
        assert_eq!(b.len(), HEADER_LEN + 4 * (2 + 1 + 6));
    }

    #[test]
    fn random_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let p = Path::new("mem");
        for i in 0..50 {
            let set = random_set(&mut rng, i % 2 == 0);
            let bytes = encode_mask_set(&set).unwrap();
            let back = decode_mask_set(&bytes, p).unwrap();
            assert_eq!(back, set);
            assert_eq!(encode_mask_set(&back).unwrap(), bytes);
        }
    }

    #[test]
    fn corrupt_files_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut set = random_set(&mut rng, false);
        while set.predictions.is_empty() {
            set = random_set(&mut rng, false);
        }
        let good = encode_mask_set(&set).unwrap();
        let p = Path::new("x.vpms");

        let mut b = good.clone();
        b[0] = b'X';
        assert!(decode_mask_set(&b, p).is_err());
        assert!(decode_mask_set(&good[..good.len() - 1], p).is_err());
        let mut b = good.clone();
        b[4] = 2;
        assert!(decode_mask_set(&b, p).is_err());

        let last = good.len() - 4;
        for bad in [f32::NAN, f32::INFINITY, f32::NEG_INFINITY] {
            let mut b = good.clone();
            b[last..].copy_from_slice(&bad.to_le_bytes());
            let err = decode_mask_set(&b, p).unwrap_err();
            assert!(err.to_string().contains("x.vpms"));
            let mut b = good.clone();
            b[HEADER_LEN..HEADER_LEN + 4].copy_from_slice(&bad.to_le_bytes());
            assert!(decode_mask_set(&b, p).is_err());
        }
    }

    #[test]
    fn mixed_scores_rejected() {
        let dims = GridDims::cube(1, 1, 1);
        let mut a = MaskPrediction::new(vec![0.5], MaskLogits3D::filled(dims, 0.0));
        let b = a.clone();
        a.score = Some(0.3);
        assert!(MaskSet::new(dims, 1, vec![a, b]).is_err());
    }
}
