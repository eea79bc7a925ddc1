//! Mask-wise merging of instance predictions into a panoptic voxel grid.
//!
//! Predictions are visited in descending confidence. Each surviving mask is
//! upsampled, binarized and clipped to the voxels that are still free; it is
//! kept only if most of it survives the clipping and most of it lies inside
//! the camera field of view. Kept masks write their class and a fresh
//! instance id into the output grids.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_same_dims, Error, Result};
use crate::grid::{BinaryMask3D, FovMask, InstanceGrid, MaskLogits3D, SemanticGrid};
use crate::resample::{upsample_binarize, MASK_THRESHOLD};
use crate::taxonomy::{ClassId, ClassTaxonomy};

/// One foreground candidate from the mask decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPrediction {
    /// Probability per thing class, in taxonomy thing order.
    pub class_probs: Vec<f32>,
    /// Quarter-scale mask logits.
    pub logits: MaskLogits3D,
    /// Precomputed confidence; when absent it is derived with
    /// [`confidence_score`].
    pub score: Option<f32>,
}

impl MaskPrediction {
    pub fn new(class_probs: Vec<f32>, logits: MaskLogits3D) -> Self {
        MaskPrediction {
            class_probs,
            logits,
            score: None,
        }
    }

    /// Index of the most probable thing class; ties go to the lower index.
    pub fn best_class(&self) -> Option<(usize, f32)> {
        self.class_probs
            .iter()
            .copied()
            .enumerate()
            .fold(None, |best, (i, p)| match best {
                Some((_, bp)) if bp >= p => best,
                _ => Some((i, p)),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MergeConfig {
    /// Minimum confidence (exclusive).
    pub t_q: f64,
    /// Minimum fraction of a mask that must land on free voxels (exclusive).
    pub t_overlap: f64,
    /// Minimum fraction of a mask inside the field of view (exclusive).
    pub t_fov: f64,
    /// Exponent on the class probability.
    pub alpha: f64,
    /// Exponent on the mask quality.
    pub beta: f64,
    pub mask_threshold: f32,
    /// Pass mask logits through a sigmoid before thresholding and scoring.
    pub apply_sigmoid: bool,
}

impl Default for MergeConfig {
    fn default() -> Self {
        MergeConfig {
            t_q: 0.2,
            t_overlap: 0.5,
            t_fov: 0.5,
            alpha: 1.0 / 3.0,
            beta: 1.0,
            mask_threshold: MASK_THRESHOLD,
            apply_sigmoid: false,
        }
    }
}

impl MergeConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = [
            ("t_q", self.t_q),
            ("t_overlap", self.t_overlap),
            ("t_fov", self.t_fov),
            ("mask_threshold", self.mask_threshold as f64),
        ];
        for (name, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} = {v} must lie in [0, 1]")));
            }
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::invalid("alpha and beta must be non-negative"));
        }
        if self.apply_sigmoid && !(self.mask_threshold > 0.0 && self.mask_threshold < 1.0) {
            return Err(Error::invalid(
                "mask_threshold must lie in (0, 1) when apply_sigmoid is set",
            ));
        }
        Ok(())
    }

    /// Threshold on the raw logit scale.
    pub fn logit_threshold(&self) -> f32 {
        if self.apply_sigmoid {
            let t = self.mask_threshold as f64;
            (t / (1.0 - t)).ln() as f32
        } else {
            self.mask_threshold
        }
    }
}

fn sigmoid(v: f32) -> f64 {
    1.0 / (1.0 + (-(v as f64)).exp())
}

/// `p^alpha * q^beta`, where `p` is the top class probability and `q` the
/// mean mask value over voxels above the mask threshold (0 if there are none).
pub fn confidence_score(pred: &MaskPrediction, cfg: &MergeConfig) -> Result<f64> {
    let (_, p) = pred
        .best_class()
        .ok_or_else(|| Error::invalid("prediction has no class probabilities"))?;
    let thr = cfg.mask_threshold as f64;
    let (mut sum, mut n) = (0.0f64, 0usize);
    for &v in &pred.logits.values {
        let v = if cfg.apply_sigmoid { sigmoid(v) } else { v as f64 };
        if v > thr {
            sum += v;
            n += 1;
        }
    }
    let q = if n == 0 { 0.0 } else { sum / n as f64 };
    Ok((p as f64).powf(cfg.alpha) * q.powf(cfg.beta))
}

/// Replaces every thing-class voxel with the free class.
pub fn zero_foreground(sem: &SemanticGrid, taxonomy: &ClassTaxonomy) -> SemanticGrid {
    let free = taxonomy.free_id();
    let labels = sem
        .labels
        .iter()
        .map(|&l| if taxonomy.is_thing(l) { free } else { l })
        .collect();
    SemanticGrid {
        dims: sem.dims,
        labels,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum MergeVerdict {
    Kept { instance_id: u32, class_id: ClassId },
    /// Confidence not above `t_q`.
    Score,
    /// Too little of the mask lands on free voxels.
    Overlap,
    /// Too little of the mask lies inside the field of view.
    Fov,
}

/// What happened to one prediction, in processing order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeDecision {
    /// Position of the prediction in the input list.
    pub index: usize,
    pub score: f64,
    #[serde(flatten)]
    pub verdict: MergeVerdict,
    /// `|binarized mask|`, absent for score discards.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mask_voxels: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub free_voxels: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub free_in_fov_voxels: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeOutcome {
    pub semantic: SemanticGrid,
    pub instances: InstanceGrid,
    pub decisions: Vec<MergeDecision>,
}

impl MergeOutcome {
    pub fn kept(&self) -> usize {
        self.decisions
            .iter()
            .filter(|d| matches!(d.verdict, MergeVerdict::Kept { .. }))
            .count()
    }
}

fn validate_prediction(i: usize, pred: &MaskPrediction, things: usize) -> Result<()> {
    if pred.class_probs.len() != things {
        return Err(Error::invalid(format!(
            "prediction {i} has {} class probabilities, taxonomy has {things} thing classes",
            pred.class_probs.len()
        )));
    }
    if pred.class_probs.iter().any(|p| !p.is_finite()) {
        return Err(Error::invalid(format!(
            "prediction {i} has non-finite class probabilities"
        )));
    }
    if let Some(s) = pred.score {
        if !s.is_finite() {
            return Err(Error::invalid(format!("prediction {i} has a non-finite score")));
        }
    }
    Ok(())
}

/// Merges instance predictions into a background semantic grid.
///
/// `background` must not contain thing voxels (see [`zero_foreground`]).
/// Instance ids `1..=K` are handed out in processing order; equal scores keep
/// their input order.
pub fn merge(
    background: &SemanticGrid,
    fov: &FovMask,
    preds: &[MaskPrediction],
    cfg: &MergeConfig,
    taxonomy: &ClassTaxonomy,
) -> Result<MergeOutcome> {
    cfg.validate()?;
    let dims = background.dims;
    ensure_same_dims(dims, fov.dims())?;
    let things = taxonomy.thing_ids();
    for (i, pred) in preds.iter().enumerate() {
        validate_prediction(i, pred, things.len())?;
        if dims.scale_from(&pred.logits.dims).is_none() {
            return Err(Error::DimensionMismatch {
                expected: dims,
                actual: pred.logits.dims,
            });
        }
    }
    if let Some(i) = background.labels.iter().position(|&l| taxonomy.is_thing(l)) {
        return Err(Error::invalid(format!(
            "background has thing class {} at voxel {:?}; clear foreground first",
            background.labels[i],
            dims.coords(i)
        )));
    }

    let scores = preds
        .iter()
        .map(|p| match p.score {
            Some(s) => Ok(s as f64),
            None => confidence_score(p, cfg),
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut semantic = background.clone();
    let mut instances = InstanceGrid::zeros(dims);
    let free_id = taxonomy.free_id();
    let mut free = BinaryMask3D::from_fn(dims, |i| semantic.labels[i] == free_id);
    let threshold = cfg.logit_threshold();
    let mut next_id = 1u32;
    let mut decisions = Vec::with_capacity(preds.len());

    for i in order {
        let score = scores[i];
        if score <= cfg.t_q {
            decisions.push(MergeDecision {
                index: i,
                score,
                verdict: MergeVerdict::Score,
                mask_voxels: None,
                free_voxels: None,
                free_in_fov_voxels: None,
            });
            continue;
        }
        let mask = upsample_binarize(&preds[i].logits, dims, threshold)?;
        let total = mask.count();
        let visible = mask.and(&free)?;
        let n_free = visible.count();
        let n_fov = visible.count_and(fov.as_mask())?;
        // An empty mask has undefined ratios and is treated as an overlap failure.
        let frac = |n: usize| if total == 0 { 0.0 } else { n as f64 / total as f64 };
        let verdict = if !(frac(n_free) > cfg.t_overlap) {
            MergeVerdict::Overlap
        } else if !(frac(n_fov) > cfg.t_fov) {
            MergeVerdict::Fov
        } else {
            let (best, _) = preds[i].best_class().expect("validated non-empty");
            let class_id = things[best];
            for v in visible.iter_ones() {
                semantic.labels[v] = class_id;
                instances.ids[v] = next_id;
            }
            free = free.and_not(&visible)?;
            let kept = MergeVerdict::Kept {
                instance_id: next_id,
                class_id,
            };
            next_id += 1;
            kept
        };
        decisions.push(MergeDecision {
            index: i,
            score,
            verdict,
            mask_voxels: Some(total),
            free_voxels: Some(n_free),
            free_in_fov_voxels: Some(n_fov),
        });
    }

    Ok(MergeOutcome {
        semantic,
        instances,
        decisions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridDims;

    fn taxonomy() -> ClassTaxonomy {
        ClassTaxonomy::semantic_kitti()
    }

    fn probs(class_index: usize, p: f32) -> Vec<f32> {
        let mut v = vec![0.0; 8];
        v[class_index] = p;
        v
    }

    fn block(dims: GridDims, xs: std::ops::Range<usize>, value: f32) -> MaskLogits3D {
        let mut m = MaskLogits3D::filled(dims, 0.0);
        for x in xs {
            for y in 0..dims.w {
                for z in 0..dims.d {
                    m.values[dims.index(x, y, z)] = value;
                }
            }
        }
        m
    }

    #[test]
    fn score_examples() {
        let cfg = MergeConfig::default();
        let dims = GridDims::cube(1, 1, 2);
        let perfect = MaskPrediction::new(probs(0, 1.0), MaskLogits3D::filled(dims, 1.0));
        assert!((confidence_score(&perfect, &cfg).unwrap() - 1.0).abs() < 1e-12);

        let mut logits = MaskLogits3D::filled(GridDims::cube(1, 1, 4), 0.1);
        logits.values[1] = 0.5;
        logits.values[3] = 0.5;
        let half = MaskPrediction::new(probs(2, 0.729), logits);
        // 0.729^(1/3) * mean(0.5, 0.5)
        assert!((confidence_score(&half, &cfg).unwrap() - 0.45).abs() < 1e-6);

        let dead = MaskPrediction::new(probs(0, 1.0), MaskLogits3D::filled(dims, 0.25));
        assert_eq!(confidence_score(&dead, &cfg).unwrap(), 0.0);

        let nothing = MaskPrediction::new(vec![], MaskLogits3D::filled(dims, 1.0));
        assert!(confidence_score(&nothing, &cfg).is_err());
    }

    #[test]
    fn sigmoid_scoring_uses_probabilities() {
        let cfg = MergeConfig {
            apply_sigmoid: true,
            ..MergeConfig::default()
        };
        let dims = GridDims::cube(1, 1, 2);
        // sigmoid(0) = 0.5 > 0.25, sigmoid(-3) ~ 0.047 is excluded
        let logits = MaskLogits3D::new(dims, vec![0.0, -3.0]).unwrap();
        let pred = MaskPrediction::new(probs(0, 1.0), logits);
        assert!((confidence_score(&pred, &cfg).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_foreground_clears_things_only() {
        let t = taxonomy();
        let dims = GridDims::cube(2, 2, 2);
        let all_car = SemanticGrid::filled(dims, 1);
        assert_eq!(zero_foreground(&all_car, &t), SemanticGrid::filled(dims, 0));
        let labels = vec![0, 1, 4, 9, 9, 15, 255, 8];
        let mixed = SemanticGrid::from_labels(dims, labels).unwrap();
        let out = zero_foreground(&mixed, &t);
        assert!(out.labels.iter().all(|&l| !t.is_thing(l)));
        let stuff = |g: &SemanticGrid| {
            g.histogram()
                .into_iter()
                .filter(|(c, _)| !t.is_thing(*c) && *c != 0)
                .collect::<Vec<_>>()
        };
        assert_eq!(stuff(&out), stuff(&mixed));
        let no_things = SemanticGrid::filled(dims, 9);
        assert_eq!(zero_foreground(&no_things, &t), no_things);
    }

    #[test]
    fn empty_predictions_leave_background() {
        let dims = GridDims::cube(4, 4, 4);
        let bg = SemanticGrid::filled(dims, 9);
        let out = merge(&bg, &FovMask::all_visible(dims), &[], &MergeConfig::default(), &taxonomy())
            .unwrap();
        assert_eq!(out.semantic, bg);
        assert_eq!(out.instances, InstanceGrid::zeros(dims));
    }

    #[test]
    fn duplicate_mask_loses_to_first() {
        let dims = GridDims::cube(4, 4, 4);
        let bg = SemanticGrid::filled(dims, 0);
        let m = block(dims, 0..2, 1.0);
        let preds = vec![
            MaskPrediction::new(probs(0, 0.9), m.clone()),
            MaskPrediction::new(probs(0, 0.9), m),
        ];
        let out = merge(&bg, &FovMask::all_visible(dims), &preds, &MergeConfig::default(), &taxonomy())
            .unwrap();
        assert_eq!(out.kept(), 1);
        assert_eq!(out.decisions[0].index, 0);
        assert_eq!(
            out.decisions[0].verdict,
            MergeVerdict::Kept { instance_id: 1, class_id: 1 }
        );
        assert_eq!(out.decisions[1].verdict, MergeVerdict::Overlap);
        assert_eq!(out.decisions[1].free_voxels, Some(0));
        assert_eq!(out.instances.ids.iter().filter(|&&i| i == 1).count(), 32);
    }

    #[test]
    fn low_score_discarded() {
        let dims = GridDims::cube(4, 4, 4);
        let bg = SemanticGrid::filled(dims, 0);
        let mut pred = MaskPrediction::new(probs(0, 1.0), block(dims, 0..2, 1.0));
        pred.score = Some(0.19);
        let out = merge(&bg, &FovMask::all_visible(dims), &[pred], &MergeConfig::default(), &taxonomy())
            .unwrap();
        assert_eq!(out.semantic, bg);
        assert_eq!(out.instances, InstanceGrid::zeros(dims));
        assert_eq!(out.decisions[0].verdict, MergeVerdict::Score);
    }

    #[test]
    fn outside_fov_discarded() {
        let dims = GridDims::cube(4, 4, 4);
        let bg = SemanticGrid::filled(dims, 0);
        let fov = FovMask(BinaryMask3D::from_fn(dims, |i| dims.coords(i).0 < 2));
        let mut pred = MaskPrediction::new(probs(3, 1.0), block(dims, 2..4, 1.0));
        pred.score = Some(1.0);
        let out = merge(&bg, &fov, &[pred], &MergeConfig::default(), &taxonomy()).unwrap();
        assert_eq!(out.decisions[0].verdict, MergeVerdict::Fov);
        assert_eq!(out.decisions[0].free_in_fov_voxels, Some(0));
        assert_eq!(out.kept(), 0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let t = taxonomy();
        let dims = GridDims::cube(4, 4, 4);
        let bg = SemanticGrid::filled(dims, 0);
        let fov = FovMask::all_visible(dims);
        let cfg = MergeConfig::default();

        let small_fov = FovMask::all_visible(GridDims::cube(4, 4, 2));
        assert!(matches!(
            merge(&bg, &small_fov, &[], &cfg, &t),
            Err(Error::DimensionMismatch { .. })
        ));
        let odd = MaskPrediction::new(probs(0, 1.0), MaskLogits3D::filled(GridDims::cube(3, 4, 4), 1.0));
        assert!(merge(&bg, &fov, &[odd], &cfg, &t).is_err());
        let short = MaskPrediction::new(vec![1.0], MaskLogits3D::filled(dims, 1.0));
        assert!(merge(&bg, &fov, &[short], &cfg, &t).is_err());
        let cars = SemanticGrid::filled(dims, 1);
        assert!(merge(&cars, &fov, &[], &cfg, &t).is_err());
    }

    #[test]
    fn quarter_scale_masks_upsample_into_place() {
        let t = taxonomy();
        let full = GridDims::cube(8, 8, 8);
        let quarter = GridDims::cube(2, 2, 2);
        let bg = SemanticGrid::filled(full, 0);
        let pred = MaskPrediction::new(probs(0, 1.0), MaskLogits3D::filled(quarter, 1.0));
        let out = merge(&bg, &FovMask::all_visible(full), &[pred], &MergeConfig::default(), &t)
            .unwrap();
        assert!(out.semantic.labels.iter().all(|&l| l == 1));
        assert!(out.instances.ids.iter().all(|&i| i == 1));
    }
}
