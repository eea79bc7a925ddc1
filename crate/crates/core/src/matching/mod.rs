//! Set matching between mask predictions and ground-truth instances, and the
//! deep-supervision instance loss built on top of it.

mod hungarian;
mod loss;

pub use hungarian::{hungarian, Assignment, CostMatrix};
pub use loss::{dice_loss, dice_loss_probs, focal_loss, weighted_cross_entropy};

use serde::{Deserialize, Serialize};

use crate::error::{ensure_same_dims, Error, Result};
use crate::grid::{BinaryMask3D, GridDims};
use crate::merge::MaskPrediction;

/// Probabilities are clamped into `[PROB_EPS, 1 - PROB_EPS]` before entering
/// the focal loss; decoder outputs and mask-set files may be saturated.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_cls: f64,
    pub lambda_mask: f64,
    /// Decoder layers contributing to the instance loss.
    pub num_decoder_layers: usize,
    pub focal_gamma: f64,
    pub focal_alpha: f64,
    /// Additive smoothing in the dice ratio.
    pub dice_smooth: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_cls: 1.0,
            lambda_mask: 2.0,
            num_decoder_layers: 3,
            focal_gamma: 2.0,
            focal_alpha: 0.25,
            dice_smooth: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_cls >= 0.0 && self.lambda_mask >= 0.0) {
            return Err(Error::invalid("loss weights must be non-negative"));
        }
        if self.num_decoder_layers < 1 {
            return Err(Error::invalid("num_decoder_layers must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.focal_alpha) || !(self.focal_gamma >= 0.0) {
            return Err(Error::invalid("focal alpha must lie in [0, 1] and gamma be >= 0"));
        }
        Ok(())
    }

    fn focal(&self, probs: &[f32], target: Option<usize>) -> Result<f64> {
        let clamped: Vec<f64> = probs
            .iter()
            .map(|&p| (p as f64).clamp(PROB_EPS, 1.0 - PROB_EPS))
            .collect();
        focal_loss(&clamped, target, self.focal_gamma, self.focal_alpha)
    }
}

/// One ground-truth instance: its thing-class index and its mask at the
/// prediction (quarter) scale.
#[derive(Debug, Clone, PartialEq)]
pub struct GtInstance {
    pub thing_index: usize,
    pub mask: BinaryMask3D,
}

/// Majority pooling over `factor³` blocks; a block is set when at least half
/// of its voxels are.
pub fn downsample_majority(mask: &BinaryMask3D, factor: usize) -> Result<BinaryMask3D> {
    let fine = mask.dims();
    let coarse: GridDims = fine.downscaled(factor)?;
    let mut counts = vec![0u32; coarse.len()];
    for i in mask.iter_ones() {
        let (x, y, z) = fine.coords(i);
        counts[coarse.index(x / factor, y / factor, z / factor)] += 1;
    }
    let block = (factor * factor * factor) as u32;
    Ok(BinaryMask3D::from_fn(coarse, |i| 2 * counts[i] >= block))
}

/// `cost[i][j] = λ_cls · focal(pred_i, class_j) + λ_mask · dice(pred_i, mask_j)`.
pub fn matching_cost(
    preds: &[MaskPrediction],
    gts: &[GtInstance],
    weights: &LossWeights,
) -> Result<CostMatrix> {
    weights.validate()?;
    for (j, gt) in gts.iter().enumerate() {
        for pred in preds {
            ensure_same_dims(gt.mask.dims(), pred.logits.dims)?;
            if gt.thing_index >= pred.class_probs.len() {
                return Err(Error::invalid(format!(
                    "ground truth {j} has class index {} beyond {} predicted classes",
                    gt.thing_index,
                    pred.class_probs.len()
                )));
            }
        }
    }
    let mut values = Vec::with_capacity(preds.len() * gts.len());
    for pred in preds {
        for gt in gts {
            let cls = if weights.lambda_cls == 0.0 {
                0.0
            } else {
                weights.focal(&pred.class_probs, Some(gt.thing_index))?
            };
            let mask = if weights.lambda_mask == 0.0 {
                0.0
            } else {
                dice_loss(&pred.logits, &gt.mask, weights.dice_smooth)?
            };
            values.push(weights.lambda_cls * cls + weights.lambda_mask * mask);
        }
    }
    CostMatrix::new(preds.len(), gts.len(), values)
}

/// Per-layer loss terms after matching.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LayerLosses {
    /// Focal loss of each matched prediction against its ground-truth class.
    pub matched_focal: Vec<f64>,
    /// Dice loss of each matched pair.
    pub matched_dice: Vec<f64>,
    /// Focal loss of each unmatched prediction against the all-zero target.
    pub unmatched_focal: Vec<f64>,
}

impl LayerLosses {
    /// `(L_cls, L_mask)`: focal averaged over all predictions, dice over
    /// matched pairs. Empty sets contribute 0.
    pub fn means(&self) -> (f64, f64) {
        let n_cls = self.matched_focal.len() + self.unmatched_focal.len();
        let cls = if n_cls == 0 {
            0.0
        } else {
            (self.matched_focal.iter().sum::<f64>() + self.unmatched_focal.iter().sum::<f64>())
                / n_cls as f64
        };
        let mask = if self.matched_dice.is_empty() {
            0.0
        } else {
            self.matched_dice.iter().sum::<f64>() / self.matched_dice.len() as f64
        };
        (cls, mask)
    }
}

/// Loss terms of one decoder layer's predictions under `assignment`.
pub fn layer_losses(
    preds: &[MaskPrediction],
    gts: &[GtInstance],
    assignment: &Assignment,
    weights: &LossWeights,
) -> Result<LayerLosses> {
    if assignment.row_of_col.len() != gts.len() {
        return Err(Error::invalid("assignment does not cover the ground truth"));
    }
    let mut out = LayerLosses::default();
    let col_of_row = assignment.col_of_row(preds.len());
    for (i, pred) in preds.iter().enumerate() {
        match col_of_row[i] {
            Some(j) => {
                out.matched_focal
                    .push(weights.focal(&pred.class_probs, Some(gts[j].thing_index))?);
                out.matched_dice
                    .push(dice_loss(&pred.logits, &gts[j].mask, weights.dice_smooth)?);
            }
            None => out.unmatched_focal.push(weights.focal(&pred.class_probs, None)?),
        }
    }
    Ok(out)
}

/// `Σ_layers (λ_cls · L_cls + λ_mask · L_mask)`.
pub fn instance_loss(per_layer: &[LayerLosses], weights: &LossWeights) -> Result<f64> {
    if per_layer.len() != weights.num_decoder_layers {
        return Err(Error::invalid(format!(
            "{} layer loss sets for {} decoder layers",
            per_layer.len(),
            weights.num_decoder_layers
        )));
    }
    Ok(per_layer
        .iter()
        .map(|l| {
            let (cls, mask) = l.means();
            weights.lambda_cls * cls + weights.lambda_mask * mask
        })
        .sum())
}
