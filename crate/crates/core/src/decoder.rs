//! Forward pass of the 3D mask decoder.
//!
//! Queries come from uniformly initialised reference points passed through a
//! sinusoidal positional encoding and a two-layer MLP. Each layer projects
//! keys and values from the voxel features, computes per-head attention
//! logits `A = Q Kᵀ / √d_k`, and refines the queries with `softmax(A) V`.
//! The raw attention logits of all heads are fused linearly into one mask
//! logit per voxel, and a linear head on the refined queries gives per-class
//! sigmoid probabilities.
//!
//! There is no training here: weights are random-seeded or loaded from disk.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridDims, MaskLogits3D};
use crate::merge::MaskPrediction;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderConfig {
    pub num_queries: usize,
    pub num_heads: usize,
    pub num_layers: usize,
    pub embed_dim: usize,
    /// Width of the positional encoding fed to the query MLP; divisible by 6.
    pub pos_dim: usize,
    /// Number of thing classes scored by the classification head.
    pub num_classes: usize,
    /// Quarter-scale voxel grid the attention maps live on.
    pub voxel_dims: GridDims,
    pub seed: u64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            num_queries: 300,
            num_heads: 8,
            num_layers: 3,
            embed_dim: 256,
            pos_dim: 384,
            num_classes: 8,
            voxel_dims: GridDims {
                h: 64,
                w: 64,
                d: 8,
                resolution_m: 0.8,
            },
            seed: 0,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        self.voxel_dims.validate()?;
        if self.num_queries == 0 || self.num_heads == 0 || self.num_layers == 0 || self.num_classes == 0 {
            return Err(Error::invalid(
                "decoder needs at least one query, head, layer and class",
            ));
        }
        if self.embed_dim == 0 || self.embed_dim % self.num_heads != 0 {
            return Err(Error::invalid(format!(
                "embed_dim {} is not divisible by {} heads",
                self.embed_dim, self.num_heads
            )));
        }
        if self.pos_dim == 0 || self.pos_dim % 6 != 0 {
            return Err(Error::invalid(format!(
                "pos_dim {} is not a positive multiple of 6",
                self.pos_dim
            )));
        }
        Ok(())
    }

    /// Per-head key dimension.
    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    pub fn num_voxels(&self) -> usize {
        self.voxel_dims.len()
    }
}

/// Reference points drawn uniformly from `[0, 1)³`, deterministic in `seed`.
pub fn init_reference_points(num_queries: usize, seed: u64) -> Array2<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((num_queries, 3), || rng.gen::<f32>())
}

/// Sinusoidal encoding of 3D points. Each axis gets a block of `dim / 3`
/// values: `sin(ω_k x), cos(ω_k x)` interleaved for `k < dim / 6`, with
/// `ω_k = 2π · 10000^(-k / (dim / 6))`.
pub fn positional_encoding(points: ArrayView2<f32>, dim: usize) -> Result<Array2<f32>> {
    if dim == 0 || dim % 6 != 0 {
        return Err(Error::invalid(format!(
            "encoding width {dim} is not a positive multiple of 6"
        )));
    }
    if points.ncols() != 3 {
        return Err(Error::invalid("points must have three coordinates"));
    }
    let freqs = dim / 6;
    let omega: Vec<f64> = (0..freqs)
        .map(|k| std::f64::consts::TAU * 10000f64.powf(-(k as f64) / freqs as f64))
        .collect();
    let mut out = Array2::zeros((points.nrows(), dim));
    for (mut row, p) in out.outer_iter_mut().zip(points.outer_iter()) {
        for axis in 0..3 {
            let x = p[axis] as f64;
            for (k, w) in omega.iter().enumerate() {
                let base = axis * 2 * freqs + 2 * k;
                row[base] = (w * x).sin() as f32;
                row[base + 1] = (w * x).cos() as f32;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryMlp {
    pub w1: Array2<f32>,
    pub b1: Array1<f32>,
    pub w2: Array2<f32>,
    pub b2: Array1<f32>,
}

impl QueryMlp {
    pub fn forward(&self, x: ArrayView2<f32>) -> Array2<f32> {
        let hidden = (x.dot(&self.w1) + &self.b1).mapv(|v| v.max(0.0));
        hidden.dot(&self.w2) + &self.b2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    /// Key projection, `embed_dim x embed_dim`.
    pub w_k: Array2<f32>,
    /// Value projection, `embed_dim x embed_dim`.
    pub w_v: Array2<f32>,
    /// Head fusion, one weight per head.
    pub fusion_w: Array1<f32>,
    pub fusion_b: f32,
    /// Classification head, `embed_dim x num_classes`.
    pub cls_w: Array2<f32>,
    pub cls_b: Array1<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderWeights {
    /// `num_queries x 3`, in `[0, 1]`.
    pub reference_points: Array2<f32>,
    pub query_mlp: QueryMlp,
    pub layers: Vec<LayerWeights>,
}

fn uniform(rng: &mut ChaCha8Rng, shape: (usize, usize), fan_in: usize) -> Array2<f32> {
    let bound = 1.0 / (fan_in as f32).sqrt();
    Array2::from_shape_simple_fn(shape, || rng.gen_range(-bound..bound))
}

fn uniform1(rng: &mut ChaCha8Rng, len: usize, fan_in: usize) -> Array1<f32> {
    let bound = 1.0 / (fan_in as f32).sqrt();
    Array1::from_shape_simple_fn(len, || rng.gen_range(-bound..bound))
}

impl DecoderWeights {
    /// Seeded weights with uniform `±1/√fan_in` entries.
    pub fn random(cfg: &DecoderConfig) -> Result<Self> {
        cfg.validate()?;
        let reference_points = init_reference_points(cfg.num_queries, cfg.seed);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
        let c = cfg.embed_dim;
        let query_mlp = QueryMlp {
            w1: uniform(&mut rng, (cfg.pos_dim, c), cfg.pos_dim),
            b1: uniform1(&mut rng, c, cfg.pos_dim),
            w2: uniform(&mut rng, (c, c), c),
            b2: uniform1(&mut rng, c, c),
        };
        let layers = (0..cfg.num_layers)
            .map(|_| LayerWeights {
                w_k: uniform(&mut rng, (c, c), c),
                w_v: uniform(&mut rng, (c, c), c),
                fusion_w: uniform1(&mut rng, cfg.num_heads, cfg.num_heads),
                fusion_b: 0.0,
                cls_w: uniform(&mut rng, (c, cfg.num_classes), c),
                cls_b: uniform1(&mut rng, cfg.num_classes, c),
            })
            .collect();
        Ok(DecoderWeights {
            reference_points,
            query_mlp,
            layers,
        })
    }

    pub fn validate(&self, cfg: &DecoderConfig) -> Result<()> {
        cfg.validate()?;
        let c = cfg.embed_dim;
        let mut checks: Vec<(String, Vec<usize>, Vec<usize>)> = vec![
            ("reference_points".into(), self.reference_points.shape().to_vec(), vec![cfg.num_queries, 3]),
            ("query_mlp.w1".into(), self.query_mlp.w1.shape().to_vec(), vec![cfg.pos_dim, c]),
            ("query_mlp.b1".into(), self.query_mlp.b1.shape().to_vec(), vec![c]),
            ("query_mlp.w2".into(), self.query_mlp.w2.shape().to_vec(), vec![c, c]),
            ("query_mlp.b2".into(), self.query_mlp.b2.shape().to_vec(), vec![c]),
        ];
        if self.layers.len() != cfg.num_layers {
            return Err(Error::invalid(format!(
                "{} layer weight sets for {} layers",
                self.layers.len(),
                cfg.num_layers
            )));
        }
        for (l, w) in self.layers.iter().enumerate() {
            checks.push((format!("layers.{l}.w_k"), w.w_k.shape().to_vec(), vec![c, c]));
            checks.push((format!("layers.{l}.w_v"), w.w_v.shape().to_vec(), vec![c, c]));
            checks.push((format!("layers.{l}.fusion_w"), w.fusion_w.shape().to_vec(), vec![cfg.num_heads]));
            checks.push((format!("layers.{l}.cls_w"), w.cls_w.shape().to_vec(), vec![c, cfg.num_classes]));
            checks.push((format!("layers.{l}.cls_b"), w.cls_b.shape().to_vec(), vec![cfg.num_classes]));
        }
        for (name, got, want) in checks {
            if got != want {
                return Err(Error::invalid(format!(
                    "weight {name} has shape {got:?}, expected {want:?}"
                )));
            }
        }
        let finite = |a: &[f32]| a.iter().all(|v| v.is_finite());
        let all_finite = self.tensors().iter().all(|(_, _, data)| finite(data));
        if !all_finite {
            return Err(Error::invalid("decoder weights contain non-finite values"));
        }
        Ok(())
    }

    /// Flattened `(name, shape, data)` triples in a fixed order.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, Vec<f32>)> {
        fn flat2(a: &Array2<f32>) -> Vec<f32> {
            a.iter().copied().collect()
        }
        fn flat1(a: &Array1<f32>) -> Vec<f32> {
            a.to_vec()
        }
        let mut out = vec![
            ("reference_points".to_string(), self.reference_points.shape().to_vec(), flat2(&self.reference_points)),
            ("query_mlp.w1".to_string(), self.query_mlp.w1.shape().to_vec(), flat2(&self.query_mlp.w1)),
            ("query_mlp.b1".to_string(), self.query_mlp.b1.shape().to_vec(), flat1(&self.query_mlp.b1)),
            ("query_mlp.w2".to_string(), self.query_mlp.w2.shape().to_vec(), flat2(&self.query_mlp.w2)),
            ("query_mlp.b2".to_string(), self.query_mlp.b2.shape().to_vec(), flat1(&self.query_mlp.b2)),
        ];
        for (l, w) in self.layers.iter().enumerate() {
            out.push((format!("layers.{l}.w_k"), w.w_k.shape().to_vec(), flat2(&w.w_k)));
            out.push((format!("layers.{l}.w_v"), w.w_v.shape().to_vec(), flat2(&w.w_v)));
            out.push((format!("layers.{l}.fusion_w"), w.fusion_w.shape().to_vec(), flat1(&w.fusion_w)));
            out.push((format!("layers.{l}.fusion_b"), vec![1], vec![w.fusion_b]));
            out.push((format!("layers.{l}.cls_w"), w.cls_w.shape().to_vec(), flat2(&w.cls_w)));
            out.push((format!("layers.{l}.cls_b"), w.cls_b.shape().to_vec(), flat1(&w.cls_b)));
        }
        out
    }

    /// Inverse of [`DecoderWeights::tensors`].
    pub fn from_tensors(
        cfg: &DecoderConfig,
        mut lookup: impl FnMut(&str, &[usize]) -> Result<Vec<f32>>,
    ) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.embed_dim;
        let mut a2 = |name: &str, shape: (usize, usize)| -> Result<Array2<f32>> {
            let data = lookup(name, &[shape.0, shape.1])?;
            Array2::from_shape_vec(shape, data).map_err(|e| Error::invalid(format!("{name}: {e}")))
        };
        let reference_points = a2("reference_points", (cfg.num_queries, 3))?;
        let w1 = a2("query_mlp.w1", (cfg.pos_dim, c))?;
        let w2 = a2("query_mlp.w2", (c, c))?;
        let mut layer_mats = Vec::new();
        for l in 0..cfg.num_layers {
            layer_mats.push((
                a2(&format!("layers.{l}.w_k"), (c, c))?,
                a2(&format!("layers.{l}.w_v"), (c, c))?,
                a2(&format!("layers.{l}.cls_w"), (c, cfg.num_classes))?,
            ));
        }
        drop(a2);
        let mut a1 = |name: &str, len: usize| -> Result<Array1<f32>> {
            Ok(Array1::from_vec(lookup(name, &[len])?))
        };
        let b1 = a1("query_mlp.b1", c)?;
        let b2 = a1("query_mlp.b2", c)?;
        let mut layers = Vec::new();
        for (l, (w_k, w_v, cls_w)) in layer_mats.into_iter().enumerate() {
            layers.push(LayerWeights {
                w_k,
                w_v,
                fusion_w: a1(&format!("layers.{l}.fusion_w"), cfg.num_heads)?,
                fusion_b: a1(&format!("layers.{l}.fusion_b"), 1)?[0],
                cls_w,
                cls_b: a1(&format!("layers.{l}.cls_b"), cfg.num_classes)?,
            });
        }
        let weights = DecoderWeights {
            reference_points,
            query_mlp: QueryMlp { w1, b1, w2, b2 },
            layers,
        };
        weights.validate(cfg)?;
        Ok(weights)
    }
}

/// Seeded voxel features in `[-1, 1)`, `num_voxels x embed_dim`.
pub fn random_features(cfg: &DecoderConfig, seed: u64) -> Array2<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((cfg.num_voxels(), cfg.embed_dim), || rng.gen_range(-1.0..1.0))
}

/// Row-wise softmax. Exponentials are accumulated in f64 so long rows
/// normalise to within f32 rounding of 1.
pub fn softmax_rows(logits: ArrayView2<f32>) -> Array2<f32> {
    let mut out = logits.to_owned();
    for mut row in out.outer_iter_mut() {
        let max = row.fold(f32::NEG_INFINITY, |m, &v| m.max(v));
        let mut sum = 0f64;
        row.mapv_inplace(|v| {
            let e = (v - max).exp();
            sum += e as f64;
            e
        });
        let inv = (1.0 / sum) as f32;
        row.mapv_inplace(|v| v * inv);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    /// Pre-softmax attention logits, `queries x heads x voxels`.
    pub logits: Array3<f32>,
    /// `queries x embed_dim`.
    pub refined: Array2<f32>,
}

/// One attention step: per head `A = Q_h K_hᵀ / √d_k` and
/// `Q_refined_h = softmax(A) V_h`, heads concatenated.
pub fn attention_layer(
    queries: ArrayView2<f32>,
    features: ArrayView2<f32>,
    w_k: ArrayView2<f32>,
    w_v: ArrayView2<f32>,
    num_heads: usize,
) -> Result<AttentionOutput> {
    let c = queries.ncols();
    if num_heads == 0 || c % num_heads != 0 {
        return Err(Error::invalid(format!(
            "embed dim {c} is not divisible by {num_heads} heads"
        )));
    }
    if features.ncols() != c || w_k.shape() != [c, c] || w_v.shape() != [c, c] {
        return Err(Error::invalid(format!(
            "attention shapes disagree: queries {:?}, features {:?}, w_k {:?}, w_v {:?}",
            queries.shape(),
            features.shape(),
            w_k.shape(),
            w_v.shape()
        )));
    }
    let n = queries.nrows();
    let voxels = features.nrows();
    let dk = c / num_heads;
    let scale = 1.0 / (dk as f32).sqrt();
    let keys = features.dot(&w_k);
    let values = features.dot(&w_v);
    let mut logits = Array3::<f32>::zeros((n, num_heads, voxels));
    let mut refined = Array2::<f32>::zeros((n, c));
    for h in 0..num_heads {
        let cols = s![.., h * dk..(h + 1) * dk];
        let mut a = logits.slice_mut(s![.., h, ..]);
        general_mat_mul(scale, &queries.slice(cols), &keys.slice(cols).t(), 0.0, &mut a);
        let weights = softmax_rows(a.view());
        refined.slice_mut(cols).assign(&weights.dot(&values.slice(cols)));
    }
    Ok(AttentionOutput { logits, refined })
}

/// `logit[q, v] = Σ_h w_h · A[q, h, v] + b`, reshaped onto `voxel_dims`.
pub fn fuse_heads(
    attention: &Array3<f32>,
    fusion_w: &[f32],
    fusion_b: f32,
    voxel_dims: GridDims,
) -> Result<Vec<MaskLogits3D>> {
    let (n, heads, voxels) = attention.dim();
    if fusion_w.len() != heads || voxels != voxel_dims.len() {
        return Err(Error::invalid(format!(
            "fusion of {heads} heads over {voxels} voxels got {} weights for grid {voxel_dims}",
            fusion_w.len()
        )));
    }
    let mut out = Vec::with_capacity(n);
    for q in 0..n {
        let mut acc = Array1::<f32>::from_elem(voxels, fusion_b);
        for (h, &w) in fusion_w.iter().enumerate() {
            Zip::from(&mut acc)
                .and(attention.slice(s![q, h, ..]))
                .for_each(|a, &v| *a += w * v);
        }
        out.push(MaskLogits3D::new(voxel_dims, acc.to_vec())?);
    }
    Ok(out)
}

/// Per-class sigmoid probabilities from refined queries.
pub fn classify(refined: ArrayView2<f32>, cls_w: ArrayView2<f32>, cls_b: &Array1<f32>) -> Array2<f32> {
    (refined.dot(&cls_w) + cls_b).mapv(|v| 1.0 / (1.0 + (-v).exp()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerOutput {
    pub attention_maps: Array3<f32>,
    pub refined_queries: Array2<f32>,
    pub mask_logits: Vec<MaskLogits3D>,
    /// `queries x num_classes`, in `(0, 1)`.
    pub class_probs: Array2<f32>,
}

impl LayerOutput {
    pub fn to_predictions(&self) -> Vec<MaskPrediction> {
        self.mask_logits
            .iter()
            .zip(self.class_probs.axis_iter(Axis(0)))
            .map(|(m, p)| MaskPrediction::new(p.to_vec(), m.clone()))
            .collect()
    }
}

/// Initial thing queries: `MLP(PE(reference points))`.
pub fn initial_queries(cfg: &DecoderConfig, weights: &DecoderWeights) -> Result<Array2<f32>> {
    let pe = positional_encoding(weights.reference_points.view(), cfg.pos_dim)?;
    Ok(weights.query_mlp.forward(pe.view()))
}

/// Runs every decoder layer; layer `l` consumes the refined queries of layer
/// `l - 1`.
pub fn forward_stack(
    cfg: &DecoderConfig,
    weights: &DecoderWeights,
    features: ArrayView2<f32>,
) -> Result<Vec<LayerOutput>> {
    weights.validate(cfg)?;
    if features.shape() != [cfg.num_voxels(), cfg.embed_dim] {
        return Err(Error::invalid(format!(
            "voxel features have shape {:?}, expected [{}, {}]",
            features.shape(),
            cfg.num_voxels(),
            cfg.embed_dim
        )));
    }
    let mut queries = initial_queries(cfg, weights)?;
    let mut outputs = Vec::with_capacity(cfg.num_layers);
    for layer in &weights.layers {
        let att = attention_layer(
            queries.view(),
            features,
            layer.w_k.view(),
            layer.w_v.view(),
            cfg.num_heads,
        )?;
        let mask_logits = fuse_heads(
            &att.logits,
            layer.fusion_w.as_slice().expect("contiguous"),
            layer.fusion_b,
            cfg.voxel_dims,
        )?;
        let class_probs = classify(att.refined.view(), layer.cls_w.view(), &layer.cls_b);
        queries = att.refined.clone();
        outputs.push(LayerOutput {
            attention_maps: att.logits,
            refined_queries: att.refined,
            mask_logits,
            class_probs,
        });
    }
    Ok(outputs)
}
