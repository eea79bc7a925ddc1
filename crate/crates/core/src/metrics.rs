//! Panoptic reconstruction quality and semantic completion IoU.
//!
//! Segments are matched greedily inside each category: the highest-IoU
//! unmatched (prediction, ground truth) pair is taken first, and pairs are
//! accepted while their IoU is at least the match threshold. Matched pairs
//! feed PRQ = RSQ x RRQ.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{ensure_same_dims, Result};
use crate::grid::{BinaryMask3D, InstanceGrid, SemanticGrid};
use crate::ops::unknown_mask;
use crate::taxonomy::{ClassId, ClassTaxonomy};

/// Voxels of one thing instance, or of a whole stuff class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub class_id: ClassId,
    /// Instance id for things, the class id for stuff.
    pub key: u32,
    /// Flat voxel indices, ascending.
    pub voxels: Vec<u32>,
}

/// Splits a panoptic grid into segments for the classes in `eval_classes`.
///
/// Thing voxels with instance id 0 and voxels labelled unknown belong to no
/// segment. Output is ordered by class id, then key.
pub fn extract_segments(
    sem: &SemanticGrid,
    ids: &InstanceGrid,
    taxonomy: &ClassTaxonomy,
    eval_classes: &[ClassId],
) -> Result<Vec<Segment>> {
    ensure_same_dims(sem.dims, ids.dims)?;
    let mut wanted = vec![false; u16::MAX as usize + 1];
    for &c in eval_classes {
        wanted[c as usize] = !taxonomy.is_unknown(c) && taxonomy.is_occupied(c);
    }
    let mut groups: BTreeMap<(ClassId, u32), Vec<u32>> = BTreeMap::new();
    for (i, (&label, &id)) in sem.labels.iter().zip(&ids.ids).enumerate() {
        if !wanted[label as usize] {
            continue;
        }
        let key = if taxonomy.is_thing(label) {
            if id == 0 {
                continue;
            }
            (label, id)
        } else {
            (label, label as u32)
        };
        groups.entry(key).or_default().push(i as u32);
    }
    Ok(groups
        .into_iter()
        .map(|((class_id, key), voxels)| Segment {
            class_id,
            key,
            voxels,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    /// Index into the prediction segment list.
    pub pred: usize,
    /// Index into the ground-truth segment list.
    pub gt: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryMatch {
    pub class_id: ClassId,
    pub tp: Vec<MatchedPair>,
    /// Unmatched prediction segments.
    pub fp: Vec<usize>,
    /// Unmatched ground-truth segments.
    #[serde(rename = "fn")]
    pub fn_: Vec<usize>,
}

impl CategoryMatch {
    pub fn empty(class_id: ClassId) -> Self {
        CategoryMatch {
            class_id,
            tp: Vec::new(),
            fp: Vec::new(),
            fn_: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentMatchReport {
    /// One entry per category, ascending class id.
    pub categories: Vec<CategoryMatch>,
}

impl SegmentMatchReport {
    /// Adds empty entries so that every class in `classes` is reported.
    pub fn with_categories(mut self, classes: &[ClassId]) -> Self {
        for &c in classes {
            if !self.categories.iter().any(|m| m.class_id == c) {
                self.categories.push(CategoryMatch::empty(c));
            }
        }
        self.categories.sort_by_key(|m| m.class_id);
        self
    }
}

fn sorted_intersection(a: &[u32], b: &[u32]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

fn visible_voxels(seg: &Segment, ignore: Option<&BinaryMask3D>) -> Vec<u32> {
    match ignore {
        None => seg.voxels.clone(),
        Some(ig) => seg
            .voxels
            .iter()
            .copied()
            .filter(|&v| !ig.get(v as usize))
            .collect(),
    }
}

/// Greedy maximum-IoU matching of prediction and ground-truth segments,
/// restricted to pairs of the same class.
///
/// IoU is computed over voxels outside `ignore`. Segments left with no
/// visible voxel take no part in matching and are not counted. Among equal
/// IoUs the lowest (prediction index, ground-truth index) wins.
pub fn greedy_match(
    preds: &[Segment],
    gts: &[Segment],
    iou_min: f64,
    ignore: Option<&BinaryMask3D>,
) -> SegmentMatchReport {
    let pred_vox: Vec<Vec<u32>> = preds.iter().map(|s| visible_voxels(s, ignore)).collect();
    let gt_vox: Vec<Vec<u32>> = gts.iter().map(|s| visible_voxels(s, ignore)).collect();

    let classes: BTreeSet<ClassId> = preds
        .iter()
        .chain(gts)
        .map(|s| s.class_id)
        .collect();
    let mut categories = Vec::with_capacity(classes.len());
    for class in classes {
        let p_idx: Vec<usize> = (0..preds.len())
            .filter(|&i| preds[i].class_id == class && !pred_vox[i].is_empty())
            .collect();
        let g_idx: Vec<usize> = (0..gts.len())
            .filter(|&j| gts[j].class_id == class && !gt_vox[j].is_empty())
            .collect();
        let mut candidates = Vec::new();
        for &i in &p_idx {
            for &j in &g_idx {
                let inter = sorted_intersection(&pred_vox[i], &gt_vox[j]);
                if inter == 0 {
                    continue;
                }
                let union = pred_vox[i].len() + gt_vox[j].len() - inter;
                let iou = inter as f64 / union as f64;
                if iou >= iou_min {
                    candidates.push(MatchedPair { pred: i, gt: j, iou });
                }
            }
        }
        candidates.sort_by(|a, b| {
            b.iou
                .total_cmp(&a.iou)
                .then(a.pred.cmp(&b.pred))
                .then(a.gt.cmp(&b.gt))
        });
        let mut pred_used = BTreeSet::new();
        let mut gt_used = BTreeSet::new();
        let mut tp = Vec::new();
        for c in candidates {
            if !pred_used.contains(&c.pred) && !gt_used.contains(&c.gt) {
                pred_used.insert(c.pred);
                gt_used.insert(c.gt);
                tp.push(c);
            }
        }
        categories.push(CategoryMatch {
            class_id: class,
            tp,
            fp: p_idx.into_iter().filter(|i| !pred_used.contains(i)).collect(),
            fn_: g_idx.into_iter().filter(|j| !gt_used.contains(j)).collect(),
        });
    }
    SegmentMatchReport { categories }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryScores {
    pub class_id: ClassId,
    pub prq: f64,
    pub rsq: f64,
    pub rrq: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// False when the category has no segment on either side; such
    /// categories are left out of the means.
    pub present: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanopticScores {
    pub categories: Vec<CategoryScores>,
    pub mean_prq: f64,
    pub mean_rsq: f64,
    pub mean_rrq: f64,
}

impl PanopticScores {
    /// `(prq, rsq, rrq)` averaged over present categories accepted by `keep`.
    pub fn mean_where(&self, keep: impl Fn(ClassId) -> bool) -> Option<(f64, f64, f64)> {
        let chosen: Vec<&CategoryScores> = self
            .categories
            .iter()
            .filter(|c| c.present && keep(c.class_id))
            .collect();
        if chosen.is_empty() {
            return None;
        }
        let n = chosen.len() as f64;
        let sum = |f: fn(&CategoryScores) -> f64| chosen.iter().map(|c| f(c)).sum::<f64>() / n;
        Some((sum(|c| c.prq), sum(|c| c.rsq), sum(|c| c.rrq)))
    }
}

/// PRQ recombined from its segmentation and recognition factors.
pub fn prq_from_factors(rsq: f64, rrq: f64) -> f64 {
    rsq * rrq
}

pub fn category_scores(m: &CategoryMatch) -> CategoryScores {
    let tp = m.tp.len();
    let (fp, fn_) = (m.fp.len(), m.fn_.len());
    let iou_sum: f64 = m.tp.iter().map(|p| p.iou).sum();
    let denom = tp as f64 + 0.5 * fp as f64 + 0.5 * fn_ as f64;
    let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { 0.0 };
    CategoryScores {
        class_id: m.class_id,
        prq: ratio(iou_sum, denom),
        rsq: ratio(iou_sum, tp as f64),
        rrq: ratio(tp as f64, denom),
        tp,
        fp,
        fn_,
        present: tp + fp + fn_ > 0,
    }
}

/// Per-category PRQ/RSQ/RRQ and their unweighted means over present
/// categories.
pub fn panoptic_scores(report: &SegmentMatchReport) -> PanopticScores {
    let categories: Vec<CategoryScores> = report.categories.iter().map(category_scores).collect();
    let mut scores = PanopticScores {
        categories,
        mean_prq: 0.0,
        mean_rsq: 0.0,
        mean_rrq: 0.0,
    };
    if let Some((prq, rsq, rrq)) = scores.mean_where(|_| true) {
        scores.mean_prq = prq;
        scores.mean_rsq = rsq;
        scores.mean_rrq = rrq;
    }
    scores
}

/// Occupancy IoU: occupied means a thing or stuff label. Voxels unknown in
/// `gt` are skipped. `None` when no voxel is evaluable; 0 when both
/// occupancies are empty.
pub fn ssc_iou(pred: &SemanticGrid, gt: &SemanticGrid, taxonomy: &ClassTaxonomy) -> Result<Option<f64>> {
    ensure_same_dims(gt.dims, pred.dims)?;
    let (mut inter, mut union, mut evaluable) = (0u64, 0u64, 0u64);
    for (&p, &g) in pred.labels.iter().zip(&gt.labels) {
        if taxonomy.is_unknown(g) {
            continue;
        }
        evaluable += 1;
        let (po, go) = (taxonomy.is_occupied(p), taxonomy.is_occupied(g));
        inter += (po && go) as u64;
        union += (po || go) as u64;
    }
    Ok(match (evaluable, union) {
        (0, _) => None,
        (_, 0) => Some(0.0),
        _ => Some(inter as f64 / union as f64),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassIou {
    pub class_id: ClassId,
    /// `None` when the class occurs in neither grid.
    pub iou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiouReport {
    pub per_class: Vec<ClassIou>,
    pub mean: Option<f64>,
}

/// Per-class IoU over the taxonomy's semantic classes. Absent classes count
/// as 0 in the mean unless `skip_absent` is set; the mean is `None` when no
/// voxel is evaluable.
pub fn ssc_miou(
    pred: &SemanticGrid,
    gt: &SemanticGrid,
    taxonomy: &ClassTaxonomy,
    skip_absent: bool,
) -> Result<MiouReport> {
    ensure_same_dims(gt.dims, pred.dims)?;
    let classes = taxonomy.semantic_ids();
    let mut slot = vec![usize::MAX; u16::MAX as usize + 1];
    for (k, &c) in classes.iter().enumerate() {
        slot[c as usize] = k;
    }
    let mut inter = vec![0u64; classes.len()];
    let mut union = vec![0u64; classes.len()];
    let mut evaluable = 0usize;
    for (&p, &g) in pred.labels.iter().zip(&gt.labels) {
        if taxonomy.is_unknown(g) {
            continue;
        }
        evaluable += 1;
        let (sp, sg) = (slot[p as usize], slot[g as usize]);
        if sp == sg {
            if sp != usize::MAX {
                inter[sp] += 1;
                union[sp] += 1;
            }
        } else {
            if sp != usize::MAX {
                union[sp] += 1;
            }
            if sg != usize::MAX {
                union[sg] += 1;
            }
        }
    }
    let per_class: Vec<ClassIou> = classes
        .iter()
        .enumerate()
        .map(|(k, &class_id)| ClassIou {
            class_id,
            iou: (union[k] > 0).then(|| inter[k] as f64 / union[k] as f64),
        })
        .collect();
    let values: Vec<f64> = if skip_absent {
        per_class.iter().filter_map(|c| c.iou).collect()
    } else {
        per_class.iter().map(|c| c.iou.unwrap_or(0.0)).collect()
    };
    let mean = (evaluable > 0 && !values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64);
    Ok(MiouReport { per_class, mean })
}

/// Evaluation knobs shared by the panoptic and completion metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricSettings {
    /// Minimum IoU (inclusive) for a segment match.
    pub iou_min: f64,
    /// Class ids scored by PRQ.
    pub categories: Vec<ClassId>,
    /// Leave classes absent from both grids out of the mIoU mean.
    pub miou_skip_absent: bool,
    /// Treat ground-truth thing voxels without an instance id (clustering
    /// traces) as unknown.
    pub ignore_unclustered_gt_things: bool,
}

impl Default for MetricSettings {
    fn default() -> Self {
        MetricSettings {
            iou_min: 0.2,
            // car, truck, other-vehicle, road
            categories: vec![1, 4, 5, 9],
            miou_skip_absent: false,
            ignore_unclustered_gt_things: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PanopticEvaluation {
    pub report: SegmentMatchReport,
    pub scores: PanopticScores,
    pub pred_segments: Vec<Segment>,
    pub gt_segments: Vec<Segment>,
}

/// Segment extraction, matching and scoring for one scene.
pub fn evaluate_panoptic(
    pred_sem: &SemanticGrid,
    pred_ids: &InstanceGrid,
    gt_sem: &SemanticGrid,
    gt_ids: &InstanceGrid,
    taxonomy: &ClassTaxonomy,
    settings: &MetricSettings,
) -> Result<PanopticEvaluation> {
    let dims = gt_sem.dims;
    ensure_same_dims(dims, gt_ids.dims)?;
    ensure_same_dims(dims, pred_sem.dims)?;
    ensure_same_dims(dims, pred_ids.dims)?;
    for &c in &settings.categories {
        taxonomy.ensure_known(c)?;
    }
    let mut ignore = unknown_mask(gt_sem, taxonomy);
    if settings.ignore_unclustered_gt_things {
        for i in 0..dims.len() {
            if gt_ids.ids[i] == 0 && taxonomy.is_thing(gt_sem.labels[i]) {
                ignore.set(i, true);
            }
        }
    }
    let pred_segments = extract_segments(pred_sem, pred_ids, taxonomy, &settings.categories)?;
    let gt_segments = extract_segments(gt_sem, gt_ids, taxonomy, &settings.categories)?;
    let report = greedy_match(&pred_segments, &gt_segments, settings.iou_min, Some(&ignore))
        .with_categories(&settings.categories);
    let scores = panoptic_scores(&report);
    Ok(PanopticEvaluation {
        report,
        scores,
        pred_segments,
        gt_segments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridDims;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn seg(class_id: ClassId, key: u32, voxels: std::ops::Range<u32>) -> Segment {
        Segment {
            class_id,
            key,
            voxels: voxels.collect(),
        }
    }

    #[test]
    fn segments_from_constructed_grid() {
        let t = ClassTaxonomy::semantic_kitti();
        let dims = GridDims::cube(4, 4, 2);
        let empty = extract_segments(
            &SemanticGrid::filled(dims, 0),
            &InstanceGrid::zeros(dims),
            &t,
            &[1, 4, 5, 9],
        )
        .unwrap();
        assert!(empty.is_empty());

        let mut sem = SemanticGrid::filled(dims, 0);
        let mut ids = InstanceGrid::zeros(dims);
        for y in 0..4 {
            sem.set(0, y, 0, 9); // road row
        }
        for (x, id) in [(1, 7), (2, 7), (3, 3)] {
            sem.set(x, 0, 1, 1);
            ids.ids[dims.index(x, 0, 1)] = id;
        }
        // car voxel without an instance id, and an unknown voxel
        sem.set(3, 3, 1, 1);
        sem.set(3, 2, 1, 255);
        let segs = extract_segments(&sem, &ids, &t, &[1, 4, 5, 9]).unwrap();
        assert_eq!(segs.len(), 3);
        assert_eq!((segs[0].class_id, segs[0].key, segs[0].voxels.len()), (1, 3, 1));
        assert_eq!((segs[1].class_id, segs[1].key, segs[1].voxels.len()), (1, 7, 2));
        assert_eq!((segs[2].class_id, segs[2].key, segs[2].voxels.len()), (9, 9, 4));
        let total: usize = segs.iter().map(|s| s.voxels.len()).sum();
        let scalar = (0..dims.len())
            .filter(|&i| {
                let l = sem.labels[i];
                l == 9 || (l == 1 && ids.ids[i] != 0)
            })
            .count();
        assert_eq!(total, scalar);
    }

    #[test]
    fn identical_sets_match_fully() {
        let segs = vec![seg(1, 1, 0..10), seg(1, 2, 20..25), seg(9, 9, 30..60)];
        let r = greedy_match(&segs, &segs, 0.2, None);
        let s = panoptic_scores(&r);
        for c in &s.categories {
            assert_eq!((c.prq, c.rsq, c.rrq, c.fp, c.fn_), (1.0, 1.0, 1.0, 0, 0));
        }
    }

    #[test]
    fn below_threshold_is_fp_and_fn() {
        // IoU = 19 / 100
        let p = vec![seg(1, 1, 0..19)];
        let g = vec![seg(1, 1, 0..100)];
        let r = greedy_match(&p, &g, 0.2, None);
        let c = &r.categories[0];
        assert_eq!((c.tp.len(), c.fp.len(), c.fn_.len()), (0, 1, 1));
        // IoU = 20 / 100 sits on the inclusive boundary
        let p = vec![seg(1, 1, 0..20)];
        assert_eq!(greedy_match(&p, &g, 0.2, None).categories[0].tp.len(), 1);
    }

    #[test]
    fn never_matches_across_classes() {
        let p = vec![seg(1, 1, 0..10)];
        let g = vec![seg(4, 1, 0..10)];
        let r = greedy_match(&p, &g, 0.2, None);
        assert_eq!(r.categories.len(), 2);
        assert!(r.categories.iter().all(|c| c.tp.is_empty()));
    }

    #[test]
    fn ignored_voxels_leave_iou() {
        let dims = GridDims::cube(1, 1, 20);
        let ignore = BinaryMask3D::from_fn(dims, |i| i >= 10);
        let p = vec![seg(1, 1, 0..20)];
        let g = vec![seg(1, 1, 0..10)];
        let r = greedy_match(&p, &g, 0.2, Some(&ignore));
        assert_eq!(r.categories[0].tp[0].iou, 1.0);
        // a prediction entirely inside ignored space is not counted
        let p = vec![seg(1, 1, 12..18)];
        let r = greedy_match(&p, &g, 0.2, Some(&ignore));
        assert_eq!(r.categories[0].fp.len(), 0);
        assert_eq!(r.categories[0].fn_.len(), 1);
    }

    #[test]
    fn half_iou_with_one_fp_one_fn() {
        let m = CategoryMatch {
            class_id: 1,
            tp: vec![MatchedPair { pred: 0, gt: 0, iou: 0.5 }],
            fp: vec![1],
            fn_: vec![1],
        };
        let s = category_scores(&m);
        assert!((s.prq - 0.25).abs() < 1e-15);
        assert!((s.rsq - 0.5).abs() < 1e-15);
        assert!((s.rrq - 0.5).abs() < 1e-15);
    }

    #[test]
    fn empty_category_scores_zero() {
        let s = category_scores(&CategoryMatch::empty(4));
        assert_eq!((s.prq, s.rsq, s.rrq, s.present), (0.0, 0.0, 0.0, false));
        let r = SegmentMatchReport { categories: vec![] }.with_categories(&[9, 1]);
        assert_eq!(r.categories[0].class_id, 1);
        assert_eq!(panoptic_scores(&r).mean_prq, 0.0);
    }

    #[test]
    fn ssc_iou_cases() {
        let t = ClassTaxonomy::semantic_kitti();
        let dims = GridDims::cube(4, 4, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pool: [ClassId; 5] = [0, 1, 9, 15, 255];
        let gt = SemanticGrid::from_labels(
            dims,
            (0..64).map(|_| pool[rng.gen_range(0..5)]).collect(),
        )
        .unwrap();
        let pred = SemanticGrid::from_labels(
            dims,
            (0..64).map(|_| pool[rng.gen_range(0..4)]).collect(),
        )
        .unwrap();
        assert_eq!(ssc_iou(&gt, &gt, &t).unwrap(), Some(1.0));
        assert_eq!(ssc_iou(&SemanticGrid::filled(dims, 0), &gt, &t).unwrap(), Some(0.0));

        // per-voxel enumeration oracle
        let (mut i, mut u) = (0, 0);
        for v in 0..64 {
            let g = gt.labels[v];
            if g == 255 {
                continue;
            }
            let po = pred.labels[v] != 0 && pred.labels[v] != 255;
            let go = g != 0;
            i += (po && go) as u32;
            u += (po || go) as u32;
        }
        let got = ssc_iou(&pred, &gt, &t).unwrap().unwrap();
        assert!((got - i as f64 / u as f64).abs() < 1e-15);

        let unknown = SemanticGrid::filled(dims, 255);
        assert_eq!(ssc_iou(&pred, &unknown, &t).unwrap(), None);
        assert!(ssc_iou(&pred, &SemanticGrid::filled(GridDims::cube(4, 4, 2), 0), &t).is_err());
    }

    #[test]
    fn miou_one_class_wrong() {
        let t = ClassTaxonomy::semantic_kitti();
        let dims = GridDims::cube(1, 1, 20);
        // every semantic class 1..=19 once, plus one free voxel
        let gt = SemanticGrid::from_labels(dims, (0..20).collect()).unwrap();
        assert_eq!(ssc_miou(&gt, &gt, &t, false).unwrap().mean, Some(1.0));
        let mut pred = gt.clone();
        pred.labels[5] = 0; // class 5 predicted as free
        let r = ssc_miou(&pred, &gt, &t, false).unwrap();
        assert!((r.mean.unwrap() - 18.0 / 19.0).abs() < 1e-12);
        assert_eq!(r.per_class[4].iou, Some(0.0));
    }

    #[test]
    fn miou_matches_confusion_matrix() {
        let t = ClassTaxonomy::semantic_kitti();
        let dims = GridDims::cube(6, 6, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut draw = |unknown: bool| {
            let labels = (0..dims.len())
                .map(|_| {
                    if unknown && rng.gen_bool(0.1) {
                        255
                    } else {
                        rng.gen_range(0..8) as ClassId
                    }
                })
                .collect();
            SemanticGrid::from_labels(dims, labels).unwrap()
        };
        let gt = draw(true);
        let pred = draw(false);
        let mut conf = vec![vec![0u64; 20]; 20];
        for v in 0..dims.len() {
            if gt.labels[v] == 255 {
                continue;
            }
            conf[gt.labels[v] as usize][pred.labels[v] as usize] += 1;
        }
        let r = ssc_miou(&pred, &gt, &t, true).unwrap();
        for c in &r.per_class {
            let k = c.class_id as usize;
            let tp = conf[k][k];
            let row: u64 = conf[k].iter().sum();
            let col: u64 = conf.iter().map(|r| r[k]).sum();
            let union = row + col - tp;
            let expected = (union > 0).then(|| tp as f64 / union as f64);
            assert_eq!(c.iou, expected, "class {k}");
        }
        let present: Vec<f64> = r.per_class.iter().filter_map(|c| c.iou).collect();
        assert_eq!(present.len(), 7);
        let with_zeros = ssc_miou(&pred, &gt, &t, false).unwrap().mean.unwrap();
        assert!((with_zeros - present.iter().sum::<f64>() / 19.0).abs() < 1e-12);
    }
}
