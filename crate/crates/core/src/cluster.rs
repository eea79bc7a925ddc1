//! Instance ground truth from semantic labels by Euclidean clustering.
//!
//! Two voxels of the same thing class belong to the same instance when they
//! are linked by a chain of voxels whose center distances are all within the
//! class search radius. Clusters outside the per-class size bounds are
//! dropped: their voxels keep the semantic label but get instance id 0.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{InstanceGrid, SemanticGrid};
use crate::taxonomy::{ClassId, ClassTaxonomy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassClusterParams {
    pub class_id: ClassId,
    /// Search radius in voxel units.
    pub radius: f64,
    pub max_voxels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterParams {
    pub classes: Vec<ClassClusterParams>,
    /// Radius for thing classes without an entry.
    pub default_radius: f64,
    /// Size cap for thing classes without an entry; `None` means unbounded.
    pub default_max_voxels: Option<usize>,
    pub min_voxels: usize,
}

impl Default for ClusterParams {
    /// SemanticKITTI settings: radius 2 for vehicles and 3 otherwise; caps of
    /// 2000 voxels for cars, 5000 for trucks and other vehicles, 1000 for
    /// people and riders. Bicycles and motorcycles are treated as small
    /// vehicles (radius 2, cap 1000).
    fn default() -> Self {
        let entry = |class_id, radius, max_voxels| ClassClusterParams {
            class_id,
            radius,
            max_voxels,
        };
        ClusterParams {
            classes: vec![
                entry(1, 2.0, 2000),
                entry(2, 2.0, 1000),
                entry(3, 2.0, 1000),
                entry(4, 2.0, 5000),
                entry(5, 2.0, 5000),
                entry(6, 3.0, 1000),
                entry(7, 3.0, 1000),
                entry(8, 3.0, 1000),
            ],
            default_radius: 3.0,
            default_max_voxels: None,
            min_voxels: 1,
        }
    }
}

impl ClusterParams {
    pub fn validate(&self) -> Result<()> {
        if self.min_voxels < 1 {
            return Err(Error::invalid("min_voxels must be at least 1"));
        }
        let radii = self
            .classes
            .iter()
            .map(|c| c.radius)
            .chain([self.default_radius]);
        for r in radii {
            if !(r >= 1.0) || !r.is_finite() {
                return Err(Error::invalid(format!("cluster radius {r} must be >= 1")));
            }
        }
        let caps = self
            .classes
            .iter()
            .map(|c| c.max_voxels)
            .chain(self.default_max_voxels);
        for cap in caps {
            if cap < self.min_voxels {
                return Err(Error::invalid(format!(
                    "cluster cap {cap} is below min_voxels {}",
                    self.min_voxels
                )));
            }
        }
        Ok(())
    }

    /// `(radius, max_voxels)` for a class.
    pub fn for_class(&self, class_id: ClassId) -> (f64, usize) {
        match self.classes.iter().find(|c| c.class_id == class_id) {
            Some(c) => (c.radius, c.max_voxels),
            None => (
                self.default_radius,
                self.default_max_voxels.unwrap_or(usize::MAX),
            ),
        }
    }
}

/// Integer offsets within Euclidean distance `radius` of the origin,
/// excluding the origin itself.
pub fn offset_ball(radius: f64) -> Vec<[i32; 3]> {
    let r = radius.floor() as i32;
    let r2 = radius * radius;
    let mut out = Vec::new();
    for dx in -r..=r {
        for dy in -r..=r {
            for dz in -r..=r {
                let n = (dx * dx + dy * dy + dz * dz) as f64;
                if n > 0.0 && n <= r2 {
                    out.push([dx, dy, dz]);
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassClusterStats {
    pub clusters: usize,
    /// Clusters above the size cap (traces).
    pub dropped_oversize: usize,
    pub dropped_undersize: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterOutcome {
    pub instances: InstanceGrid,
    pub stats: BTreeMap<ClassId, ClassClusterStats>,
}

impl ClusterOutcome {
    pub fn dropped(&self) -> usize {
        self.stats
            .values()
            .map(|s| s.dropped_oversize + s.dropped_undersize)
            .sum()
    }
}

/// Clusters every thing class of `sem` independently.
///
/// Grid voxels are scanned in flat-index order; each unvisited thing voxel
/// seeds a breadth-first search over its class. Surviving clusters get ids
/// `1..=K` in seed order.
pub fn euclidean_cluster(
    sem: &SemanticGrid,
    taxonomy: &ClassTaxonomy,
    params: &ClusterParams,
) -> Result<ClusterOutcome> {
    params.validate()?;
    let dims = sem.dims;
    let mut stats: BTreeMap<ClassId, ClassClusterStats> = taxonomy
        .thing_ids()
        .iter()
        .map(|&c| (c, ClassClusterStats::default()))
        .collect();
    let balls: BTreeMap<ClassId, (Vec<[i32; 3]>, usize)> = taxonomy
        .thing_ids()
        .iter()
        .map(|&c| {
            let (radius, cap) = params.for_class(c);
            (c, (offset_ball(radius), cap))
        })
        .collect();

    let mut ids = vec![0u32; dims.len()];
    let mut visited = vec![false; dims.len()];
    let mut queue = VecDeque::new();
    let mut component = Vec::new();
    let mut next_id = 1u32;
    let (h, w, d) = (dims.h as i64, dims.w as i64, dims.d as i64);

    for seed in 0..dims.len() {
        let class = sem.labels[seed];
        if visited[seed] || !taxonomy.is_thing(class) {
            continue;
        }
        let (ball, cap) = &balls[&class];
        visited[seed] = true;
        queue.push_back(seed);
        component.clear();
        while let Some(v) = queue.pop_front() {
            component.push(v);
            let (x, y, z) = dims.coords(v);
            for [dx, dy, dz] in ball {
                let (nx, ny, nz) = (x as i64 + *dx as i64, y as i64 + *dy as i64, z as i64 + *dz as i64);
                if nx < 0 || ny < 0 || nz < 0 || nx >= h || ny >= w || nz >= d {
                    continue;
                }
                let n = dims.index(nx as usize, ny as usize, nz as usize);
                if !visited[n] && sem.labels[n] == class {
                    visited[n] = true;
                    queue.push_back(n);
                }
            }
        }
        let entry = stats.get_mut(&class).expect("thing class");
        if component.len() > *cap {
            entry.dropped_oversize += 1;
        } else if component.len() < params.min_voxels {
            entry.dropped_undersize += 1;
        } else {
            entry.clusters += 1;
            for &v in &component {
                ids[v] = next_id;
            }
            next_id += 1;
        }
    }
    Ok(ClusterOutcome {
        instances: InstanceGrid { dims, ids },
        stats,
    })
}
