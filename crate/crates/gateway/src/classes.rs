//! Class metadata for the class-search view, loaded from `classes.json`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassInfo {
    pub index: u32,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wnid: Option<String>,
    /// Labelling-guide text shown next to the examples.
    #[serde(default)]
    pub guide: String,
    /// Validation image ids to page through.
    #[serde(default)]
    pub example_ids: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct ClassCatalog {
    by_index: BTreeMap<u32, ClassInfo>,
}

impl ClassCatalog {
    /// Checks that indices are unique and below `class_count`, and that
    /// wnids, where given, name one class each.
    pub fn new(classes: Vec<ClassInfo>, class_count: Option<u32>) -> anyhow::Result<Self> {
        let mut by_index = BTreeMap::new();
        let mut wnids = BTreeSet::new();
        for c in classes {
            if let Some(n) = class_count {
                if c.index >= n {
                    bail!("class index {} out of range for {n} classes", c.index);
                }
            }
            if let Some(w) = &c.wnid {
                if !wnids.insert(w.clone()) {
                    bail!("wnid {w} names more than one class");
                }
            }
            let index = c.index;
            if by_index.insert(index, c).is_some() {
                bail!("class index {index} listed twice");
            }
        }
        Ok(ClassCatalog { by_index })
    }

    pub fn load(path: &Path, class_count: Option<u32>) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let classes: Vec<ClassInfo> =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        Self::new(classes, class_count)
    }

    pub fn get(&self, index: u32) -> Option<&ClassInfo> {
        self.by_index.get(&index)
    }

    pub fn name(&self, index: u32) -> Option<&str> {
        self.get(index).map(|c| c.name.as_str())
    }

    pub fn len(&self) -> usize {
        self.by_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_index.is_empty()
    }
}
