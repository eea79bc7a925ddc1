//! Classification and mask losses.

use crate::error::{ensure_same_dims, Error, Result};
use crate::grid::{BinaryMask3D, MaskLogits3D, SemanticGrid};
use crate::taxonomy::ClassTaxonomy;

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Soft dice loss `1 - (2 Σ p g + s) / (Σ p + Σ g + s)` on probabilities.
pub fn dice_loss_probs(probs: &[f64], gt: &[bool], smooth: f64) -> Result<f64> {
    if probs.len() != gt.len() {
        return Err(Error::invalid(format!(
            "dice: {} probabilities against {} targets",
            probs.len(),
            gt.len()
        )));
    }
    let (mut inter, mut sum_p, mut sum_g) = (0.0, 0.0, 0.0);
    for (&p, &g) in probs.iter().zip(gt) {
        sum_p += p;
        if g {
            inter += p;
            sum_g += 1.0;
        }
    }
    Ok(1.0 - (2.0 * inter + smooth) / (sum_p + sum_g + smooth))
}

/// Dice loss of sigmoid(`logits`) against a binary target.
pub fn dice_loss(logits: &MaskLogits3D, gt: &BinaryMask3D, smooth: f64) -> Result<f64> {
    ensure_same_dims(gt.dims(), logits.dims)?;
    let (mut inter, mut sum_p, mut sum_g) = (0.0, 0.0, 0.0);
    for (i, &v) in logits.values.iter().enumerate() {
        let p = sigmoid(v as f64);
        sum_p += p;
        if gt.get(i) {
            inter += p;
            sum_g += 1.0;
        }
    }
    Ok(1.0 - (2.0 * inter + smooth) / (sum_p + sum_g + smooth))
}

/// Sigmoid focal loss summed over classes.
///
/// Class `j` has target 1 iff `Some(j) == target`; `None` trains every class
/// toward 0.
pub fn focal_loss(probs: &[f64], target: Option<usize>, gamma: f64, alpha: f64) -> Result<f64> {
    if let Some(t) = target {
        if t >= probs.len() {
            return Err(Error::invalid(format!(
                "focal: target class {t} out of range for {} classes",
                probs.len()
            )));
        }
    }
    let mut loss = 0.0;
    for (j, &p) in probs.iter().enumerate() {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::invalid(format!(
                "focal: probability {p} for class {j} is outside (0, 1)"
            )));
        }
        loss += if target == Some(j) {
            -alpha * (1.0 - p).powf(gamma) * p.ln()
        } else {
            -(1.0 - alpha) * p.powf(gamma) * (1.0 - p).ln()
        };
    }
    Ok(loss)
}

/// Mean over non-unknown voxels of `w[gt] * -log softmax(scores)[gt]`.
///
/// `scores` is voxel-major with one entry per class of
/// [`ClassTaxonomy::voxel_class_ids`]; `class_weights` uses the same order.
pub fn weighted_cross_entropy(
    scores: &[f32],
    gt: &SemanticGrid,
    class_weights: &[f64],
    taxonomy: &ClassTaxonomy,
) -> Result<f64> {
    let classes = taxonomy.voxel_class_ids();
    let c = classes.len();
    if class_weights.len() != c {
        return Err(Error::invalid(format!(
            "{} class weights for {c} classes",
            class_weights.len()
        )));
    }
    if scores.len() != gt.labels.len() * c {
        return Err(Error::invalid(format!(
            "expected {} x {c} scores, got {}",
            gt.labels.len(),
            scores.len()
        )));
    }
    let mut total = 0.0;
    let mut counted = 0usize;
    for (v, &label) in gt.labels.iter().enumerate() {
        if taxonomy.is_unknown(label) {
            continue;
        }
        let k = classes.binary_search(&label).map_err(|_| {
            Error::invalid(format!("ground-truth label {label} is not a voxel class"))
        })?;
        let row = &scores[v * c..(v + 1) * c];
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &s| m.max(s as f64));
        let log_z = max + row.iter().map(|&s| (s as f64 - max).exp()).sum::<f64>().ln();
        total += class_weights[k] * (log_z - row[k] as f64);
        counted += 1;
    }
    Ok(if counted == 0 { 0.0 } else { total / counted as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridDims;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dice_hand_case() {
        // 1 - (2 * 1 + 1) / (2 + 1 + 1)
        let l = dice_loss_probs(&[1.0, 1.0, 0.0, 0.0], &[true, false, false, false], 1.0).unwrap();
        assert!((l - 0.25).abs() < 1e-12);
    }

    #[test]
    fn dice_limits() {
        let dims = GridDims::cube(4, 4, 4);
        let gt = BinaryMask3D::from_fn(dims, |i| i % 3 == 0);
        let logits = MaskLogits3D::new(
            dims,
            (0..64).map(|i| if i % 3 == 0 { 20.0 } else { -20.0 }).collect(),
        )
        .unwrap();
        assert!(dice_loss(&logits, &gt, 1.0).unwrap() < 1e-3);

        let empty = BinaryMask3D::empty(dims);
        let off = MaskLogits3D::filled(dims, -30.0);
        assert!(dice_loss(&off, &empty, 1.0).unwrap().abs() < 1e-9);

        let wrong = BinaryMask3D::empty(GridDims::cube(4, 4, 2));
        assert!(dice_loss(&off, &wrong, 1.0).is_err());
    }

    #[test]
    fn dice_improves_when_mass_moves_inside() {
        let gt = [true, true, false, false];
        let outside = dice_loss_probs(&[0.5, 0.2, 0.6, 0.1], &gt, 1.0).unwrap();
        let moved = dice_loss_probs(&[0.5, 0.5, 0.3, 0.1], &gt, 1.0).unwrap();
        assert!(moved < outside);
        for l in [outside, moved] {
            assert!((0.0..=1.0).contains(&l));
        }
    }

    #[test]
    fn focal_hand_case() {
        // 0.25 * (1 - 0.5)^2 * ln 2
        let l = focal_loss(&[0.5], Some(0), 2.0, 0.25).unwrap();
        assert!((l - 0.25 * 0.25 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn focal_confident_correct_is_near_zero() {
        let l = focal_loss(&[1e-9, 1.0 - 1e-9, 1e-9], Some(1), 2.0, 0.25).unwrap();
        assert!(l < 1e-12);
    }

    #[test]
    fn focal_reduces_to_half_bce() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let n = rng.gen_range(1..6);
            let probs: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..0.99)).collect();
            let target = if rng.gen_bool(0.3) { None } else { Some(rng.gen_range(0..n)) };
            let bce: f64 = probs
                .iter()
                .enumerate()
                .map(|(j, &p)| if target == Some(j) { -p.ln() } else { -(1.0 - p).ln() })
                .sum();
            let focal = focal_loss(&probs, target, 0.0, 0.5).unwrap();
            assert!((focal - 0.5 * bce).abs() < 1e-9);
        }
    }

    #[test]
    fn focal_rejects_saturated_probs() {
        assert!(focal_loss(&[0.0, 0.5], Some(1), 2.0, 0.25).is_err());
        assert!(focal_loss(&[1.0], None, 2.0, 0.25).is_err());
        assert!(focal_loss(&[0.5], Some(3), 2.0, 0.25).is_err());
    }

    #[test]
    fn cross_entropy_cases() {
        let t = crate::taxonomy::ClassTaxonomy::new(vec![
            crate::taxonomy::ClassEntry { id: 0, name: "free".into(), kind: crate::taxonomy::ClassKind::Free },
            crate::taxonomy::ClassEntry { id: 1, name: "thing".into(), kind: crate::taxonomy::ClassKind::Thing },
            crate::taxonomy::ClassEntry { id: 255, name: "unknown".into(), kind: crate::taxonomy::ClassKind::Unknown },
        ])
        .unwrap();
        let dims = GridDims::cube(1, 1, 3);
        let gt = SemanticGrid::from_labels(dims, vec![0, 1, 255]).unwrap();
        let uniform = vec![0.3f32; 6];
        let l = weighted_cross_entropy(&uniform, &gt, &[1.0, 1.0], &t).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);

        let confident = vec![20.0, -5.0, -5.0, 20.0, 0.0, 0.0];
        assert!(weighted_cross_entropy(&confident, &gt, &[1.0, 1.0], &t).unwrap() < 1e-6);

        let mixed = vec![0.1, 0.7, 1.5, -0.2, 9.0, 9.0];
        let a = weighted_cross_entropy(&mixed, &gt, &[0.7, 1.3], &t).unwrap();
        let b = weighted_cross_entropy(&mixed, &gt, &[1.4, 2.6], &t).unwrap();
        assert_eq!(b, 2.0 * a);

        assert!(weighted_cross_entropy(&mixed, &gt, &[1.0], &t).is_err());
        assert!(weighted_cross_entropy(&mixed[..4], &gt, &[1.0, 1.0], &t).is_err());
    }
}
