#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use voxpan::grid::{BinaryMask3D, FovMask, GridDims, InstanceGrid, MaskLogits3D, SemanticGrid};
use voxpan::io::{self, MaskSet};
use voxpan::merge::MaskPrediction;
use voxpan::taxonomy::ClassTaxonomy;

pub const ROAD: u16 = 9;
pub const SIDEWALK: u16 = 11;
pub const BUILDING: u16 = 13;
pub const VEGETATION: u16 = 15;
pub const CAR: u16 = 1;
pub const TRUCK: u16 = 4;
pub const UNKNOWN: u16 = 255;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn schema(command: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../docs/schemas")
        .join(format!("{command}.schema.json"))
}

pub fn voxpan(args: &[&dyn AsRef<std::ffi::OsStr>]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_voxpan"))
        .args(args.iter().map(|a| a.as_ref()))
        .output()
        .expect("spawn voxpan")
}

/// Runs a command with `--out <dir>/report.json`, asserting success, and
/// returns the parsed report.
pub fn run_ok(dir: &Path, args: &[&dyn AsRef<std::ffi::OsStr>]) -> Value {
    let report = dir.join("report.json");
    let mut all: Vec<&dyn AsRef<std::ffi::OsStr>> = args.to_vec();
    all.push(&"--out");
    all.push(&report);
    let out = voxpan(&all);
    assert!(
        out.status.success(),
        "voxpan failed with {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap()
}

pub fn validate_schema(command: &str, report: &Value) {
    let schema: Value = serde_json::from_str(&std::fs::read_to_string(schema(command)).unwrap()).unwrap();
    let compiled = jsonschema::JSONSchema::compile(&schema).expect("schema compiles");
    let msgs: Vec<String> = match compiled.validate(report) {
        Ok(()) => return,
        Err(errors) => errors.map(|e| format!("{} at {}", e, e.instance_path)).collect(),
    };
    panic!("{command} report violates schema: {msgs:?}");
}

pub fn kitti() -> ClassTaxonomy {
    ClassTaxonomy::semantic_kitti()
}

/// Outdoor-looking background: road and sidewalk on the ground, a building
/// wall, scattered vegetation and a patch of unknown voxels.
pub fn background(dims: GridDims, rng: &mut ChaCha8Rng) -> SemanticGrid {
    let mut g = SemanticGrid::filled(dims, 0);
    for x in 0..dims.h {
        for y in 0..dims.w {
            g.set(x, y, 0, if y < dims.w * 3 / 4 { ROAD } else { SIDEWALK });
            if y >= dims.w - 2 && dims.d > 2 {
                for z in 1..dims.d / 2 {
                    g.set(x, y, z, BUILDING);
                }
            }
            if dims.d > 3 && rng.gen_bool(0.02) {
                g.set(x, y, 1, VEGETATION);
            }
            if x < 2 && y < 2 {
                for z in 1..dims.d {
                    g.set(x, y, z, UNKNOWN);
                }
            }
        }
    }
    g
}

/// Prediction whose logits are a blob inside a random box and -1 elsewhere.
pub fn blob_prediction(dims: GridDims, classes: usize, max_extent: usize, rng: &mut ChaCha8Rng) -> MaskPrediction {
    let shape = dims.shape();
    let mut lo = [0; 3];
    let mut hi = [0; 3];
    for a in 0..3 {
        let ext = rng.gen_range(1..=max_extent.min(shape[a]));
        lo[a] = rng.gen_range(0..=shape[a] - ext);
        hi[a] = lo[a] + ext;
    }
    let peak: f32 = rng.gen_range(0.3..1.0);
    let mut values = vec![-1.0f32; dims.len()];
    for x in lo[0]..hi[0] {
        for y in lo[1]..hi[1] {
            for z in lo[2]..hi[2] {
                values[dims.index(x, y, z)] = peak * rng.gen_range(0.2..1.0);
            }
        }
    }
    let class_probs = (0..classes).map(|_| rng.gen_range(0.01..0.99)).collect();
    MaskPrediction::new(class_probs, MaskLogits3D::new(dims, values).unwrap())
}

pub struct SceneFiles {
    pub background: PathBuf,
    pub fov: PathBuf,
    pub masks: PathBuf,
}

/// Writes a background, a FOV covering the front 80 % of the grid, and
/// `count` blob masks at quarter scale.
pub fn write_scene(dir: &Path, dims: GridDims, count: usize, seed: u64) -> SceneFiles {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bg = background(dims, &mut rng);
    let fov = FovMask(BinaryMask3D::from_fn(dims, |i| dims.coords(i).0 < dims.h * 4 / 5));
    let quarter = dims.downscaled(4).unwrap();
    let preds: Vec<_> = (0..count)
        .map(|_| blob_prediction(quarter, 8, 6, &mut rng))
        .collect();
    let files = SceneFiles {
        background: dir.join("background.bin"),
        fov: dir.join("fov.bin"),
        masks: dir.join("masks.vpms"),
    };
    io::save_semantic(&files.background, &bg, Some("semantic-kitti")).unwrap();
    io::save_fov(&files.fov, &fov).unwrap();
    io::save_mask_set(&files.masks, &MaskSet::new(quarter, 8, preds).unwrap()).unwrap();
    files
}

/// Panoptic ground truth: background plus `cars` box-shaped car instances.
pub fn panoptic_scene(dims: GridDims, cars: usize, rng: &mut ChaCha8Rng) -> (SemanticGrid, InstanceGrid) {
    let mut sem = background(dims, rng);
    let mut ids = InstanceGrid::zeros(dims);
    for k in 0..cars {
        let class = if k % 3 == 2 { TRUCK } else { CAR };
        let (ex, ey, ez) = (rng.gen_range(2..9), rng.gen_range(2..6), rng.gen_range(1..4));
        let x0 = rng.gen_range(0..dims.h - ex);
        let y0 = rng.gen_range(0..dims.w - ey);
        let z0 = rng.gen_range(1..dims.d - ez);
        for x in x0..x0 + ex {
            for y in y0..y0 + ey {
                for z in z0..z0 + ez {
                    sem.set(x, y, z, class);
                    ids.ids[dims.index(x, y, z)] = k as u32 + 1;
                }
            }
        }
    }
    (sem, ids)
}
