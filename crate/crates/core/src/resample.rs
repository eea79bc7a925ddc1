//! Trilinear upsampling of quarter-scale mask logits and thresholding.
//!
//! Sampling follows the cell-center convention (`align_corners = false`):
//! output voxel `o` on an axis of length `T` reads source coordinate
//! `(o + 0.5) * S / T - 0.5`, clamped at the borders, from a source axis of
//! length `S`. Each 1-D interpolation step is clamped to the interval spanned
//! by its two taps, so every output lies inside the hull of its eight source
//! neighbours even under rounding.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::grid::{BinaryMask3D, GridDims, MaskLogits3D};

/// Default binarization threshold for upsampled masks.
pub const MASK_THRESHOLD: f32 = 0.25;

#[derive(Debug, Clone)]
struct AxisTaps {
    lo: Vec<usize>,
    hi: Vec<usize>,
    frac: Vec<f32>,
}

impl AxisTaps {
    fn new(source: usize, target: usize) -> Self {
        let scale = source as f64 / target as f64;
        let mut taps = AxisTaps {
            lo: Vec::with_capacity(target),
            hi: Vec::with_capacity(target),
            frac: Vec::with_capacity(target),
        };
        for o in 0..target {
            let pos = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (pos.floor() as usize).min(source - 1);
            let hi = (lo + 1).min(source - 1);
            let frac = if hi == lo { 0.0 } else { (pos - lo as f64) as f32 };
            taps.lo.push(lo);
            taps.hi.push(hi);
            taps.frac.push(frac);
        }
        taps
    }

    /// Outputs whose taps touch the source interval `[first, last]`.
    fn outputs_touching(&self, first: usize, last: usize) -> Range<usize> {
        let start = self.hi.iter().position(|&h| h >= first).unwrap_or(self.hi.len());
        let end = self.lo.iter().rposition(|&l| l <= last).map_or(0, |p| p + 1);
        start..end.max(start)
    }

    fn sources_for(&self, outputs: &Range<usize>) -> Range<usize> {
        self.lo[outputs.start]..self.hi[outputs.end - 1] + 1
    }
}

#[inline]
fn lerp(a: f32, b: f32, t: f32) -> f32 {
    let v = a + (b - a) * t;
    v.max(a.min(b)).min(a.max(b))
}

fn check_scale(src: &GridDims, target: &GridDims) -> Result<()> {
    target.validate()?;
    if target.scale_from(src).is_none() {
        return Err(Error::invalid(format!(
            "target grid {target} is not an integer multiple of source grid {src}"
        )));
    }
    Ok(())
}

/// Separable trilinear resampling restricted to an output box. `emit`
/// receives `(x, y, values)` for each z-line `z in region[2]`.
fn resample_region(
    src: &MaskLogits3D,
    target: &GridDims,
    region: [Range<usize>; 3],
    mut emit: impl FnMut(usize, usize, &[f32]),
) {
    let s = src.dims;
    let tx = AxisTaps::new(s.h, target.h);
    let ty = AxisTaps::new(s.w, target.w);
    let tz = AxisTaps::new(s.d, target.d);
    let [rx, ry, rz] = region;
    if rx.is_empty() || ry.is_empty() || rz.is_empty() {
        return;
    }
    let sx = tx.sources_for(&rx);
    let sy = ty.sources_for(&ry);
    let (nsx, nsy, nz, ny) = (sx.len(), sy.len(), rz.len(), ry.len());

    // z pass: [sx][sy][oz]
    let mut along_z = vec![0f32; nsx * nsy * nz];
    for (ix, x) in sx.clone().enumerate() {
        for (iy, y) in sy.clone().enumerate() {
            let col = &src.values[(x * s.w + y) * s.d..][..s.d];
            let out = &mut along_z[(ix * nsy + iy) * nz..][..nz];
            for (k, oz) in rz.clone().enumerate() {
                out[k] = lerp(col[tz.lo[oz]], col[tz.hi[oz]], tz.frac[oz]);
            }
        }
    }

    // y pass: [sx][oy][oz]
    let mut along_y = vec![0f32; nsx * ny * nz];
    for ix in 0..nsx {
        for (j, oy) in ry.clone().enumerate() {
            let a = &along_z[(ix * nsy + ty.lo[oy] - sy.start) * nz..][..nz];
            let b = &along_z[(ix * nsy + ty.hi[oy] - sy.start) * nz..][..nz];
            let t = ty.frac[oy];
            let out = &mut along_y[(ix * ny + j) * nz..][..nz];
            for k in 0..nz {
                out[k] = lerp(a[k], b[k], t);
            }
        }
    }

    // x pass, emitted line by line
    let mut line = vec![0f32; nz];
    for ox in rx {
        let a0 = (tx.lo[ox] - sx.start) * ny * nz;
        let b0 = (tx.hi[ox] - sx.start) * ny * nz;
        let t = tx.frac[ox];
        for (j, oy) in ry.clone().enumerate() {
            let a = &along_y[a0 + j * nz..][..nz];
            let b = &along_y[b0 + j * nz..][..nz];
            for k in 0..nz {
                line[k] = lerp(a[k], b[k], t);
            }
            emit(ox, oy, &line);
        }
    }
}

/// Trilinear upsampling of `src` onto `target`, whose extent must be an
/// integer multiple of the source extent on every axis.
pub fn upsample_trilinear(src: &MaskLogits3D, target: GridDims) -> Result<MaskLogits3D> {
    check_scale(&src.dims, &target)?;
    let mut values = vec![0f32; target.len()];
    let (w, d) = (target.w, target.d);
    resample_region(
        src,
        &target,
        [0..target.h, 0..target.w, 0..target.d],
        |x, y, line| values[(x * w + y) * d..][..d].copy_from_slice(line),
    );
    Ok(MaskLogits3D {
        dims: target,
        values,
    })
}

/// Sets a voxel iff its value is strictly greater than `threshold`.
pub fn binarize(mask: &MaskLogits3D, threshold: f32) -> BinaryMask3D {
    BinaryMask3D::from_fn(mask.dims, |i| mask.values[i] > threshold)
}

/// `binarize(upsample_trilinear(src, target), threshold)` without
/// materialising the full-resolution float grid.
///
/// Only the output box whose interpolation taps reach a source value above
/// the threshold is evaluated; every other output is a convex combination
/// of sub-threshold values and therefore unset.
pub fn upsample_binarize(
    src: &MaskLogits3D,
    target: GridDims,
    threshold: f32,
) -> Result<BinaryMask3D> {
    check_scale(&src.dims, &target)?;
    let s = src.dims;
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    for (i, _) in src.values.iter().enumerate().filter(|(_, &v)| v > threshold) {
        let (x, y, z) = s.coords(i);
        for (axis, c) in [x, y, z].into_iter().enumerate() {
            lo[axis] = lo[axis].min(c);
            hi[axis] = hi[axis].max(c);
        }
    }
    let mut words = vec![0u64; target.len().div_ceil(64)];
    if lo[0] == usize::MAX {
        return Ok(BinaryMask3D::from_words(target, words));
    }
    let region = [
        AxisTaps::new(s.h, target.h).outputs_touching(lo[0], hi[0]),
        AxisTaps::new(s.w, target.w).outputs_touching(lo[1], hi[1]),
        AxisTaps::new(s.d, target.d).outputs_touching(lo[2], hi[2]),
    ];
    let z0 = region[2].start;
    let (w, d) = (target.w, target.d);
    resample_region(src, &target, region, |x, y, line| {
        let base = (x * w + y) * d + z0;
        for (k, &v) in line.iter().enumerate() {
            let i = base + k;
            words[i >> 6] |= ((v > threshold) as u64) << (i & 63);
        }
    });
    Ok(BinaryMask3D::from_words(target, words))
}
