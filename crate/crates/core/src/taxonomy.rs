//! Class table: ids, names and the thing/stuff/free/unknown split.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::SemanticGrid;

pub type ClassId = u16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassKind {
    /// Countable objects that receive instance ids.
    Thing,
    /// Amorphous background.
    Stuff,
    /// Empty space.
    Free,
    /// Unobserved voxels, ignored by evaluation.
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassEntry {
    pub id: ClassId,
    pub name: String,
    pub kind: ClassKind,
}

/// Validated class table.
///
/// Thing classes are ordered by ascending id; that order defines the layout
/// of per-class probability vectors everywhere in the crate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TaxonomyRepr", into = "TaxonomyRepr")]
pub struct ClassTaxonomy {
    entries: Vec<ClassEntry>,
    kinds: Vec<Option<ClassKind>>,
    things: Vec<ClassId>,
    semantic: Vec<ClassId>,
    free: ClassId,
    unknown: Option<ClassId>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaxonomyRepr {
    classes: Vec<ClassEntry>,
}

impl TryFrom<TaxonomyRepr> for ClassTaxonomy {
    type Error = Error;
    fn try_from(r: TaxonomyRepr) -> Result<Self> {
        ClassTaxonomy::new(r.classes)
    }
}

impl From<ClassTaxonomy> for TaxonomyRepr {
    fn from(t: ClassTaxonomy) -> Self {
        TaxonomyRepr { classes: t.entries }
    }
}

impl ClassTaxonomy {
    pub fn new(mut entries: Vec<ClassEntry>) -> Result<Self> {
        entries.sort_by_key(|e| e.id);
        let mut seen = BTreeSet::new();
        for e in &entries {
            if !seen.insert(e.id) {
                return Err(Error::invalid(format!("duplicate class id {}", e.id)));
            }
        }
        let of_kind = |k: ClassKind| -> Vec<ClassId> {
            entries.iter().filter(|e| e.kind == k).map(|e| e.id).collect()
        };
        let free = match of_kind(ClassKind::Free).as_slice() {
            [id] => *id,
            other => {
                return Err(Error::invalid(format!(
                    "taxonomy needs exactly one free class, found {}",
                    other.len()
                )))
            }
        };
        let unknown = match of_kind(ClassKind::Unknown).as_slice() {
            [] => None,
            [id] => Some(*id),
            other => {
                return Err(Error::invalid(format!(
                    "taxonomy allows at most one unknown class, found {}",
                    other.len()
                )))
            }
        };
        let max_id = entries.last().map(|e| e.id as usize).unwrap_or(0);
        let mut kinds = vec![None; max_id + 1];
        for e in &entries {
            kinds[e.id as usize] = Some(e.kind);
        }
        let things = of_kind(ClassKind::Thing);
        let semantic = entries
            .iter()
            .filter(|e| matches!(e.kind, ClassKind::Thing | ClassKind::Stuff))
            .map(|e| e.id)
            .collect();
        Ok(ClassTaxonomy {
            entries,
            kinds,
            things,
            semantic,
            free,
            unknown,
        })
    }

    /// The 20 SemanticKITTI completion classes plus unknown (255). Ids 1-8 are
    /// things, 9-19 stuff.
    pub fn semantic_kitti() -> Self {
        const NAMES: [&str; 20] = [
            "empty",
            "car",
            "bicycle",
            "motorcycle",
            "truck",
            "other-vehicle",
            "person",
            "bicyclist",
            "motorcyclist",
            "road",
            "parking",
            "sidewalk",
            "other-ground",
            "building",
            "fence",
            "vegetation",
            "trunk",
            "terrain",
            "pole",
            "traffic-sign",
        ];
        let mut entries: Vec<ClassEntry> = NAMES
            .iter()
            .enumerate()
            .map(|(i, name)| ClassEntry {
                id: i as ClassId,
                name: name.to_string(),
                kind: match i {
                    0 => ClassKind::Free,
                    1..=8 => ClassKind::Thing,
                    _ => ClassKind::Stuff,
                },
            })
            .collect();
        entries.push(ClassEntry {
            id: 255,
            name: "unknown".into(),
            kind: ClassKind::Unknown,
        });
        Self::new(entries).expect("built-in taxonomy is valid")
    }

    pub fn entries(&self) -> &[ClassEntry] {
        &self.entries
    }

    pub fn kind(&self, id: ClassId) -> Option<ClassKind> {
        self.kinds.get(id as usize).copied().flatten()
    }

    pub fn contains(&self, id: ClassId) -> bool {
        self.kind(id).is_some()
    }

    pub fn is_thing(&self, id: ClassId) -> bool {
        self.kind(id) == Some(ClassKind::Thing)
    }

    pub fn is_stuff(&self, id: ClassId) -> bool {
        self.kind(id) == Some(ClassKind::Stuff)
    }

    /// Occupied means a thing or stuff label.
    pub fn is_occupied(&self, id: ClassId) -> bool {
        matches!(self.kind(id), Some(ClassKind::Thing | ClassKind::Stuff))
    }

    pub fn free_id(&self) -> ClassId {
        self.free
    }

    pub fn unknown_id(&self) -> Option<ClassId> {
        self.unknown
    }

    pub fn is_unknown(&self, id: ClassId) -> bool {
        self.unknown == Some(id)
    }

    /// Thing class ids in ascending order.
    pub fn thing_ids(&self) -> &[ClassId] {
        &self.things
    }

    /// Position of a thing class inside per-class probability vectors.
    pub fn thing_index(&self, id: ClassId) -> Option<usize> {
        self.things.binary_search(&id).ok()
    }

    /// Thing and stuff ids in ascending order (the semantic classes scored by mIoU).
    pub fn semantic_ids(&self) -> &[ClassId] {
        &self.semantic
    }

    /// Free plus semantic classes, ascending: the score layout for voxelwise
    /// classification.
    pub fn voxel_class_ids(&self) -> Vec<ClassId> {
        self.entries
            .iter()
            .filter(|e| e.kind != ClassKind::Unknown)
            .map(|e| e.id)
            .collect()
    }

    pub fn name(&self, id: ClassId) -> Option<&str> {
        self.entries
            .binary_search_by_key(&id, |e| e.id)
            .ok()
            .map(|i| self.entries[i].name.as_str())
    }

    pub fn id_by_name(&self, name: &str) -> Option<ClassId> {
        self.entries.iter().find(|e| e.name == name).map(|e| e.id)
    }

    pub fn ensure_known(&self, id: ClassId) -> Result<()> {
        if self.contains(id) {
            Ok(())
        } else {
            Err(Error::invalid(format!("class id {id} is not in the taxonomy")))
        }
    }

    /// Checks that every label stored in `grid` is a known class.
    pub fn validate_grid(&self, grid: &SemanticGrid) -> Result<()> {
        match grid.labels.iter().position(|&l| !self.contains(l)) {
            None => Ok(()),
            Some(i) => Err(Error::invalid(format!(
                "voxel {:?} has label {} outside the taxonomy",
                grid.dims.coords(i),
                grid.labels[i]
            ))),
        }
    }
}

impl Default for ClassTaxonomy {
    fn default() -> Self {
        Self::semantic_kitti()
    }
}
