//! Dense voxel grids.
//!
//! Every grid is stored flat in x-major order: the voxel at `(x, y, z)` lives
//! at `x * w * d + y * d + z`, which is the layout of SemanticKITTI voxel files.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_same_dims, Error, Result};
use crate::taxonomy::ClassId;

/// Extent of a voxel grid plus the metric edge length of one voxel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridDims {
    /// Voxels along the forward axis.
    pub h: usize,
    /// Voxels along the lateral axis.
    pub w: usize,
    /// Voxels along the vertical axis.
    pub d: usize,
    pub resolution_m: f64,
}

impl Default for GridDims {
    /// The SemanticKITTI completion volume: 51.2 m x 51.2 m x 6.4 m at 0.2 m.
    fn default() -> Self {
        GridDims {
            h: 256,
            w: 256,
            d: 32,
            resolution_m: 0.2,
        }
    }
}

impl fmt::Display for GridDims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.h, self.w, self.d)
    }
}

impl GridDims {
    pub fn new(h: usize, w: usize, d: usize, resolution_m: f64) -> Result<Self> {
        let dims = GridDims {
            h,
            w,
            d,
            resolution_m,
        };
        dims.validate()?;
        Ok(dims)
    }

    /// Shorthand for tests and fixtures: unit resolution.
    pub fn cube(h: usize, w: usize, d: usize) -> Self {
        GridDims {
            h,
            w,
            d,
            resolution_m: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.h == 0 || self.w == 0 || self.d == 0 {
            return Err(Error::invalid(format!("grid dims {self} must be positive")));
        }
        if !(self.resolution_m > 0.0) || !self.resolution_m.is_finite() {
            return Err(Error::invalid(format!(
                "voxel resolution {} must be positive",
                self.resolution_m
            )));
        }
        Ok(())
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.h, self.w, self.d]
    }

    pub fn len(&self) -> usize {
        self.h * self.w * self.d
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        debug_assert!(x < self.h && y < self.w && z < self.d);
        (x * self.w + y) * self.d + z
    }

    #[inline]
    pub fn coords(&self, index: usize) -> (usize, usize, usize) {
        let z = index % self.d;
        let rest = index / self.d;
        (rest / self.w, rest % self.w, z)
    }

    /// Per-axis integer ratio `self / coarse`, if every axis divides evenly.
    pub fn scale_from(&self, coarse: &GridDims) -> Option<[usize; 3]> {
        let mut out = [0; 3];
        for (i, (fine, c)) in self.shape().into_iter().zip(coarse.shape()).enumerate() {
            if c == 0 || fine % c != 0 {
                return None;
            }
            out[i] = fine / c;
        }
        Some(out)
    }

    /// Dims reduced by an integer factor on every axis, with the voxel size
    /// grown accordingly.
    pub fn downscaled(&self, factor: usize) -> Result<GridDims> {
        if factor == 0 || self.h % factor != 0 || self.w % factor != 0 || self.d % factor != 0 {
            return Err(Error::invalid(format!(
                "grid {self} is not divisible by {factor}"
            )));
        }
        Ok(GridDims {
            h: self.h / factor,
            w: self.w / factor,
            d: self.d / factor,
            resolution_m: self.resolution_m * factor as f64,
        })
    }
}

/// Per-voxel semantic class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticGrid {
    pub dims: GridDims,
    pub labels: Vec<ClassId>,
}

impl SemanticGrid {
    pub fn filled(dims: GridDims, label: ClassId) -> Self {
        SemanticGrid {
            dims,
            labels: vec![label; dims.len()],
        }
    }

    pub fn from_labels(dims: GridDims, labels: Vec<ClassId>) -> Result<Self> {
        check_len(dims, labels.len())?;
        Ok(SemanticGrid { dims, labels })
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> ClassId {
        self.labels[self.dims.index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, label: ClassId) {
        let i = self.dims.index(x, y, z);
        self.labels[i] = label;
    }

    /// Number of voxels per label, sorted by label.
    pub fn histogram(&self) -> std::collections::BTreeMap<ClassId, usize> {
        let mut counts = std::collections::BTreeMap::new();
        for &l in &self.labels {
            *counts.entry(l).or_insert(0) += 1;
        }
        counts
    }
}

/// Per-voxel instance ids; 0 means "no instance".
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceGrid {
    pub dims: GridDims,
    pub ids: Vec<u32>,
}

impl InstanceGrid {
    pub fn zeros(dims: GridDims) -> Self {
        InstanceGrid {
            dims,
            ids: vec![0; dims.len()],
        }
    }

    pub fn from_ids(dims: GridDims, ids: Vec<u32>) -> Result<Self> {
        check_len(dims, ids.len())?;
        Ok(InstanceGrid { dims, ids })
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> u32 {
        self.ids[self.dims.index(x, y, z)]
    }

    pub fn max_id(&self) -> u32 {
        self.ids.iter().copied().max().unwrap_or(0)
    }
}

/// Dense boolean voxel mask, bit-packed into 64-bit words.
#[derive(Clone, PartialEq)]
pub struct BinaryMask3D {
    dims: GridDims,
    words: Vec<u64>,
}

impl fmt::Debug for BinaryMask3D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BinaryMask3D")
            .field("dims", &self.dims)
            .field("count", &self.count())
            .finish()
    }
}

impl BinaryMask3D {
    pub fn empty(dims: GridDims) -> Self {
        BinaryMask3D {
            dims,
            words: vec![0; dims.len().div_ceil(64)],
        }
    }

    pub fn full(dims: GridDims) -> Self {
        let mut m = Self::empty(dims);
        m.words.iter_mut().for_each(|w| *w = u64::MAX);
        m.clear_tail();
        m
    }

    pub fn from_fn(dims: GridDims, mut f: impl FnMut(usize) -> bool) -> Self {
        let mut m = Self::empty(dims);
        for i in 0..dims.len() {
            if f(i) {
                m.words[i >> 6] |= 1 << (i & 63);
            }
        }
        m
    }

    pub fn from_bools(dims: GridDims, bits: &[bool]) -> Result<Self> {
        check_len(dims, bits.len())?;
        Ok(Self::from_fn(dims, |i| bits[i]))
    }

    pub(crate) fn from_words(dims: GridDims, words: Vec<u64>) -> Self {
        debug_assert_eq!(words.len(), dims.len().div_ceil(64));
        let mut m = BinaryMask3D { dims, words };
        m.clear_tail();
        m
    }

    fn clear_tail(&mut self) {
        let rem = self.dims.len() & 63;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }

    pub fn dims(&self) -> GridDims {
        self.dims
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        (self.words[i >> 6] >> (i & 63)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: bool) {
        let bit = 1u64 << (i & 63);
        if value {
            self.words[i >> 6] |= bit;
        } else {
            self.words[i >> 6] &= !bit;
        }
    }

    pub fn get_xyz(&self, x: usize, y: usize, z: usize) -> bool {
        self.get(self.dims.index(x, y, z))
    }

    pub fn set_xyz(&mut self, x: usize, y: usize, z: usize, value: bool) {
        let i = self.dims.index(x, y, z);
        self.set(i, value);
    }

    /// Population count.
    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    /// `|self ∩ other|`.
    pub fn count_and(&self, other: &BinaryMask3D) -> Result<usize> {
        ensure_same_dims(self.dims, other.dims)?;
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum())
    }

    pub fn and(&self, other: &BinaryMask3D) -> Result<BinaryMask3D> {
        ensure_same_dims(self.dims, other.dims)?;
        let words = self.words.iter().zip(&other.words).map(|(a, b)| a & b);
        Ok(BinaryMask3D {
            dims: self.dims,
            words: words.collect(),
        })
    }

    pub fn or(&self, other: &BinaryMask3D) -> Result<BinaryMask3D> {
        ensure_same_dims(self.dims, other.dims)?;
        let words = self.words.iter().zip(&other.words).map(|(a, b)| a | b);
        Ok(BinaryMask3D {
            dims: self.dims,
            words: words.collect(),
        })
    }

    /// `self \ other`.
    pub fn and_not(&self, other: &BinaryMask3D) -> Result<BinaryMask3D> {
        ensure_same_dims(self.dims, other.dims)?;
        let words = self.words.iter().zip(&other.words).map(|(a, b)| a & !b);
        Ok(BinaryMask3D {
            dims: self.dims,
            words: words.collect(),
        })
    }

    pub fn not(&self) -> BinaryMask3D {
        let mut m = BinaryMask3D {
            dims: self.dims,
            words: self.words.iter().map(|w| !w).collect(),
        };
        m.clear_tail();
        m
    }

    /// Flat indices of set voxels in ascending order.
    pub fn iter_ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &word)| {
            let mut w = word;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let tz = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(wi * 64 + tz)
            })
        })
    }

    pub fn to_bools(&self) -> Vec<bool> {
        (0..self.dims.len()).map(|i| self.get(i)).collect()
    }
}

/// Real-valued mask logits, usually at quarter resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskLogits3D {
    pub dims: GridDims,
    pub values: Vec<f32>,
}

impl MaskLogits3D {
    pub fn new(dims: GridDims, values: Vec<f32>) -> Result<Self> {
        check_len(dims, values.len())?;
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "mask logit at index {pos} is not finite"
            )));
        }
        Ok(MaskLogits3D { dims, values })
    }

    pub fn filled(dims: GridDims, value: f32) -> Self {
        MaskLogits3D {
            dims,
            values: vec![value; dims.len()],
        }
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.values[self.dims.index(x, y, z)]
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.values
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

/// Voxels inside the camera frustum.
#[derive(Debug, Clone, PartialEq)]
pub struct FovMask(pub BinaryMask3D);

impl FovMask {
    pub fn all_visible(dims: GridDims) -> Self {
        FovMask(BinaryMask3D::full(dims))
    }

    pub fn dims(&self) -> GridDims {
        self.0.dims()
    }

    pub fn as_mask(&self) -> &BinaryMask3D {
        &self.0
    }
}

fn check_len(dims: GridDims, len: usize) -> Result<()> {
    dims.validate()?;
    if dims.len() != len {
        return Err(Error::invalid(format!(
            "grid {dims} needs {} voxels, got {len}",
            dims.len()
        )));
    }
    Ok(())
}
