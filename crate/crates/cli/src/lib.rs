//! Command implementations behind the `voxpan` binary.
//!
//! Every command returns a JSON report that embeds the fully resolved run
//! configuration. Errors map to exit code 2 when an input violates a
//! precondition (shape mismatch, inconsistent contents) and to 1 otherwise.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use voxpan::cluster::euclidean_cluster;
use voxpan::decoder::{forward_stack, random_features, DecoderWeights};
use voxpan::grid::{BinaryMask3D, InstanceGrid, SemanticGrid};
use voxpan::io::{self, MaskSet, RunConfig};
use voxpan::matching::{downsample_majority, hungarian, matching_cost, GtInstance};
use voxpan::merge::{merge, zero_foreground, MergeVerdict};
use voxpan::metrics::{evaluate_panoptic, ssc_iou, ssc_miou};
use voxpan::taxonomy::{ClassId, ClassTaxonomy};

#[derive(Debug, Parser)]
#[command(name = "voxpan", version, about = "Panoptic voxel scene tools")]
pub struct Cli {
    /// JSON run configuration; defaults are used for anything left out.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Write the report here instead of standard output.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Merge instance masks into a background semantic grid.
    Merge(MergeArgs),
    /// Panoptic reconstruction quality of a prediction.
    EvalPanoptic(EvalPanopticArgs),
    /// Occupancy IoU and per-class IoU of a semantic prediction.
    EvalSsc(EvalSscArgs),
    /// Instance ids for a semantic ground truth by Euclidean clustering.
    Cluster(ClusterArgs),
    /// Optimal assignment of predicted masks to ground-truth instances.
    Match(MatchArgs),
    /// Seeded decoder forward pass that writes a mask set.
    DecodeDemo(DecodeDemoArgs),
}

#[derive(Debug, Args)]
pub struct MergeArgs {
    #[arg(long)]
    pub background: PathBuf,
    #[arg(long)]
    pub fov: PathBuf,
    #[arg(long)]
    pub masks: PathBuf,
    #[arg(long)]
    pub out_semantic: PathBuf,
    #[arg(long)]
    pub out_instances: PathBuf,
    /// Reset thing voxels of the background to free before merging.
    #[arg(long)]
    pub zero_foreground: bool,
}

#[derive(Debug, Args)]
pub struct EvalPanopticArgs {
    #[arg(long)]
    pub pred_semantic: PathBuf,
    #[arg(long)]
    pub pred_instances: PathBuf,
    #[arg(long)]
    pub gt_semantic: PathBuf,
    #[arg(long)]
    pub gt_instances: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalSscArgs {
    #[arg(long)]
    pub pred_semantic: PathBuf,
    #[arg(long)]
    pub gt_semantic: PathBuf,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long)]
    pub gt_semantic: PathBuf,
    #[arg(long)]
    pub out_instances: PathBuf,
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    #[arg(long)]
    pub masks: PathBuf,
    #[arg(long)]
    pub gt_semantic: PathBuf,
    #[arg(long)]
    pub gt_instances: PathBuf,
}

#[derive(Debug, Args)]
pub struct DecodeDemoArgs {
    #[arg(long)]
    pub out_masks: PathBuf,
    /// Load decoder weights instead of drawing them from the configured seed.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Also write the weights that were used.
    #[arg(long)]
    pub save_weights: Option<PathBuf>,
    /// Seed for the synthetic voxel features; defaults to the decoder seed.
    #[arg(long)]
    pub features_seed: Option<u64>,
}

/// Exit status for a failed command.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    let precondition = err
        .chain()
        .filter_map(|e| e.downcast_ref::<voxpan::Error>())
        .any(voxpan::Error::is_precondition);
    if precondition {
        2
    } else {
        1
    }
}

pub fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => Ok(RunConfig::load(p)?),
        None => Ok(RunConfig::default()),
    }
}

/// Runs the parsed command and writes its report.
pub fn execute(cli: &Cli) -> Result<Value> {
    let cfg = load_config(cli.config.as_deref())?;
    let report = run(&cli.command, cfg)?;
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    match &cli.out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing report {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(report)
}

pub fn run(command: &Command, cfg: RunConfig) -> Result<Value> {
    match command {
        Command::Merge(a) => cmd_merge(a, &cfg),
        Command::EvalPanoptic(a) => cmd_eval_panoptic(a, &cfg),
        Command::EvalSsc(a) => cmd_eval_ssc(a, &cfg),
        Command::Cluster(a) => cmd_cluster(a, &cfg),
        Command::Match(a) => cmd_match(a, &cfg),
        Command::DecodeDemo(a) => cmd_decode_demo(a, cfg),
    }
}

fn report(command: &str, cfg: &RunConfig, inputs: Value, body: Value) -> Value {
    let mut out = json!({
        "command": command,
        "config": cfg,
        "inputs": inputs,
    });
    if let (Value::Object(o), Value::Object(b)) = (&mut out, body) {
        o.extend(b);
    }
    out
}

fn load_semantic(path: &Path, taxonomy: &ClassTaxonomy) -> Result<SemanticGrid> {
    let grid = io::load_semantic(path)?;
    taxonomy
        .validate_grid(&grid)
        .with_context(|| format!("labels of {}", path.display()))?;
    Ok(grid)
}

fn class_name(taxonomy: &ClassTaxonomy, id: ClassId) -> &str {
    taxonomy.name(id).unwrap_or("")
}

fn cmd_merge(a: &MergeArgs, cfg: &RunConfig) -> Result<Value> {
    let t = &cfg.taxonomy;
    let mut background = load_semantic(&a.background, t)?;
    let fov = io::load_fov(&a.fov)?;
    let masks = io::load_mask_set(&a.masks)?;
    if a.zero_foreground {
        background = zero_foreground(&background, t);
    }
    let outcome = merge(&background, &fov, &masks.predictions, &cfg.merge, t)?;
    let taxonomy_ref = io::read_manifest(&a.background)?.taxonomy;
    io::save_semantic(&a.out_semantic, &outcome.semantic, taxonomy_ref.as_deref())?;
    io::save_instances(&a.out_instances, &outcome.instances)?;

    let mut discarded = BTreeMap::from([("score", 0usize), ("overlap", 0), ("fov", 0)]);
    for d in &outcome.decisions {
        let key = match d.verdict {
            MergeVerdict::Kept { .. } => continue,
            MergeVerdict::Score => "score",
            MergeVerdict::Overlap => "overlap",
            MergeVerdict::Fov => "fov",
        };
        *discarded.get_mut(key).unwrap() += 1;
    }
    Ok(report(
        "merge",
        cfg,
        json!({
            "background": a.background,
            "fov": a.fov,
            "masks": a.masks,
            "zero_foreground": a.zero_foreground,
        }),
        json!({
            "outputs": { "semantic": a.out_semantic, "instances": a.out_instances },
            "predictions": masks.predictions.len(),
            "kept": outcome.kept(),
            "discarded": discarded,
            "decisions": outcome.decisions,
        }),
    ))
}

fn cmd_eval_panoptic(a: &EvalPanopticArgs, cfg: &RunConfig) -> Result<Value> {
    let t = &cfg.taxonomy;
    let pred_sem = load_semantic(&a.pred_semantic, t)?;
    let pred_ids = io::load_instances(&a.pred_instances)?;
    let gt_sem = load_semantic(&a.gt_semantic, t)?;
    let gt_ids = io::load_instances(&a.gt_instances)?;
    let eval = evaluate_panoptic(&pred_sem, &pred_ids, &gt_sem, &gt_ids, t, &cfg.metrics)?;

    let categories: Vec<Value> = eval
        .scores
        .categories
        .iter()
        .zip(&eval.report.categories)
        .map(|(s, m)| {
            let matches: Vec<Value> = m
                .tp
                .iter()
                .map(|p| {
                    json!({
                        "pred_key": eval.pred_segments[p.pred].key,
                        "gt_key": eval.gt_segments[p.gt].key,
                        "iou": p.iou,
                    })
                })
                .collect();
            json!({
                "class_id": s.class_id,
                "name": class_name(t, s.class_id),
                "prq": s.prq,
                "rsq": s.rsq,
                "rrq": s.rrq,
                "tp": s.tp,
                "fp": s.fp,
                "fn": s.fn_,
                "present": s.present,
                "matches": matches,
            })
        })
        .collect();
    Ok(report(
        "eval-panoptic",
        cfg,
        json!({
            "pred_semantic": a.pred_semantic,
            "pred_instances": a.pred_instances,
            "gt_semantic": a.gt_semantic,
            "gt_instances": a.gt_instances,
        }),
        json!({
            "categories": categories,
            "mean": {
                "prq": eval.scores.mean_prq,
                "rsq": eval.scores.mean_rsq,
                "rrq": eval.scores.mean_rrq,
            },
        }),
    ))
}

fn cmd_eval_ssc(a: &EvalSscArgs, cfg: &RunConfig) -> Result<Value> {
    let t = &cfg.taxonomy;
    let pred = load_semantic(&a.pred_semantic, t)?;
    let gt = load_semantic(&a.gt_semantic, t)?;
    let iou = ssc_iou(&pred, &gt, t)?;
    let miou = ssc_miou(&pred, &gt, t, cfg.metrics.miou_skip_absent)?;
    let evaluable = gt.labels.iter().filter(|&&g| !t.is_unknown(g)).count();
    let per_class: Vec<Value> = miou
        .per_class
        .iter()
        .map(|c| json!({ "class_id": c.class_id, "name": class_name(t, c.class_id), "iou": c.iou }))
        .collect();
    Ok(report(
        "eval-ssc",
        cfg,
        json!({ "pred_semantic": a.pred_semantic, "gt_semantic": a.gt_semantic }),
        json!({
            "evaluable_voxels": evaluable,
            "iou": iou,
            "miou": miou.mean,
            "per_class": per_class,
        }),
    ))
}

fn cmd_cluster(a: &ClusterArgs, cfg: &RunConfig) -> Result<Value> {
    let t = &cfg.taxonomy;
    let sem = load_semantic(&a.gt_semantic, t)?;
    let outcome = euclidean_cluster(&sem, t, &cfg.cluster)?;
    io::save_instances(&a.out_instances, &outcome.instances)?;
    let per_class: Vec<Value> = outcome
        .stats
        .iter()
        .map(|(&id, s)| {
            json!({
                "class_id": id,
                "name": class_name(t, id),
                "clusters": s.clusters,
                "dropped_oversize": s.dropped_oversize,
                "dropped_undersize": s.dropped_undersize,
            })
        })
        .collect();
    let clusters: usize = outcome.stats.values().map(|s| s.clusters).sum();
    Ok(report(
        "cluster",
        cfg,
        json!({ "gt_semantic": a.gt_semantic }),
        json!({
            "outputs": { "instances": a.out_instances },
            "clusters": clusters,
            "dropped": outcome.dropped(),
            "per_class": per_class,
        }),
    ))
}

#[derive(Debug, Serialize)]
struct GtSummary {
    index: usize,
    class_id: ClassId,
    instance_id: u32,
    voxels: usize,
    mask_voxels: usize,
}

/// Ground-truth instances keyed by `(class, id)` over thing voxels with a
/// non-zero id, in ascending key order.
fn gt_instances(
    sem: &SemanticGrid,
    ids: &InstanceGrid,
    taxonomy: &ClassTaxonomy,
    masks: &MaskSet,
) -> Result<(Vec<GtInstance>, Vec<GtSummary>)> {
    voxpan::error::ensure_same_dims(sem.dims, ids.dims)?;
    let factor = match sem.dims.scale_from(&masks.dims) {
        Some([a, b, c]) if a == b && b == c => a,
        _ => {
            return Err(voxpan::Error::InvalidInput(format!(
                "ground truth {} is not a uniform integer multiple of the mask grid {}",
                sem.dims, masks.dims
            ))
            .into())
        }
    };
    let mut groups: BTreeMap<(ClassId, u32), Vec<usize>> = BTreeMap::new();
    for (i, (&c, &id)) in sem.labels.iter().zip(&ids.ids).enumerate() {
        if id != 0 && taxonomy.is_thing(c) {
            groups.entry((c, id)).or_default().push(i);
        }
    }
    let mut out = Vec::new();
    let mut summary = Vec::new();
    for (index, ((class_id, instance_id), voxels)) in groups.into_iter().enumerate() {
        let mut full = BinaryMask3D::empty(sem.dims);
        for &i in &voxels {
            full.set(i, true);
        }
        let mask = downsample_majority(&full, factor)?;
        summary.push(GtSummary {
            index,
            class_id,
            instance_id,
            voxels: voxels.len(),
            mask_voxels: mask.count(),
        });
        out.push(GtInstance {
            thing_index: taxonomy.thing_index(class_id).expect("thing class"),
            mask,
        });
    }
    Ok((out, summary))
}

fn cmd_match(a: &MatchArgs, cfg: &RunConfig) -> Result<Value> {
    let t = &cfg.taxonomy;
    let masks = io::load_mask_set(&a.masks)?;
    let sem = load_semantic(&a.gt_semantic, t)?;
    let ids = io::load_instances(&a.gt_instances)?;
    if masks.num_classes != t.thing_ids().len() {
        return Err(voxpan::Error::InvalidInput(format!(
            "mask set scores {} classes, the taxonomy has {} thing classes",
            masks.num_classes,
            t.thing_ids().len()
        ))
        .into());
    }
    let (gts, summary) = gt_instances(&sem, &ids, t, &masks)?;
    if gts.len() > masks.predictions.len() {
        return Err(voxpan::Error::InvalidInput(format!(
            "matching needs at least as many predictions as ground-truth instances, got {} predictions for {} instances",
            masks.predictions.len(),
            gts.len()
        ))
        .into());
    }
    let costs = matching_cost(&masks.predictions, &gts, &cfg.loss)?;
    let assignment = hungarian(&costs)?;
    let pairs: Vec<Value> = assignment
        .row_of_col
        .iter()
        .enumerate()
        .map(|(gt, &pred)| json!({ "gt": gt, "pred": pred, "cost": costs.get(pred, gt) }))
        .collect();
    let matrix: Vec<Vec<f64>> = (0..costs.rows())
        .map(|i| (0..costs.cols()).map(|j| costs.get(i, j)).collect())
        .collect();
    Ok(report(
        "match",
        cfg,
        json!({ "masks": a.masks, "gt_semantic": a.gt_semantic, "gt_instances": a.gt_instances }),
        json!({
            "predictions": masks.predictions.len(),
            "gt_instances": summary,
            "cost_matrix": matrix,
            "assignment": pairs,
            "total_cost": assignment.total,
        }),
    ))
}

fn cmd_decode_demo(a: &DecodeDemoArgs, mut cfg: RunConfig) -> Result<Value> {
    let weights = match &a.weights {
        Some(p) => {
            let (dcfg, w) = io::load_weights(p)?;
            cfg.decoder = dcfg;
            cfg.validate()?;
            w
        }
        None => DecoderWeights::random(&cfg.decoder)?,
    };
    if let Some(p) = &a.save_weights {
        io::save_weights(p, &cfg.decoder, &weights)?;
    }
    let features_seed = a.features_seed.unwrap_or(cfg.decoder.seed);
    let features = random_features(&cfg.decoder, features_seed);
    let layers = forward_stack(&cfg.decoder, &weights, features.view())?;
    let layer_summary: Vec<Value> = layers
        .iter()
        .enumerate()
        .map(|(l, out)| {
            let (lo, hi) = out
                .mask_logits
                .iter()
                .map(|m| m.min_max())
                .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), (c, d)| (a.min(c), b.max(d)));
            json!({
                "layer": l,
                "mask_logit_min": lo,
                "mask_logit_max": hi,
                "mean_class_prob": out.class_probs.mean().unwrap_or(0.0),
            })
        })
        .collect();
    let last = layers.last().expect("at least one layer");
    let set = MaskSet::new(cfg.decoder.voxel_dims, cfg.decoder.num_classes, last.to_predictions())?;
    io::save_mask_set(&a.out_masks, &set)?;
    Ok(report(
        "decode-demo",
        &cfg,
        json!({ "weights": a.weights, "features_seed": features_seed }),
        json!({
            "outputs": { "masks": a.out_masks, "weights": a.save_weights },
            "predictions": set.predictions.len(),
            "layers": layer_summary,
        }),
    ))
}
