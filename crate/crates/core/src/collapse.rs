//! Directional class-equivalence edges.
//!
//! An edge `a -> b` reads "an image labelled `a` also shows a `b`": a
//! prediction of `b` is credited on images whose correct set contains `a`,
//! never the other way round unless the reverse edge exists too. Edges are
//! closed transitively at load time so [`CollapseMapping::expand`] is a
//! single lookup per label.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{jsonl, ClassId, Error, LabelSet, Result};

const IMAGENET_COLLAPSE: &str = include_str!("../data/imagenet_collapse.json");

/// On-disk form: `{"edges": {"<src>": [dst, ...]}}`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingFile {
    pub edges: BTreeMap<String, Vec<u32>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CollapseMapping {
    closure: BTreeMap<ClassId, LabelSet>,
}

impl CollapseMapping {
    /// The identity mapping.
    pub fn empty() -> Self {
        CollapseMapping::default()
    }

    /// The shipped ImageNet-1k mapping (eleven groups).
    pub fn imagenet() -> Self {
        Self::from_json(IMAGENET_COLLAPSE, Some(1000)).expect("shipped mapping is valid")
    }

    /// Raw text of the shipped mapping file.
    pub fn imagenet_json() -> &'static str {
        IMAGENET_COLLAPSE
    }

    pub fn from_json(text: &str, class_count: Option<u32>) -> Result<Self> {
        let file: MappingFile =
            serde_json::from_str(text).map_err(|e| Error::json("collapse mapping", e))?;
        Self::from_file(file, class_count)
    }

    pub fn from_file(file: MappingFile, class_count: Option<u32>) -> Result<Self> {
        let mut edges = BTreeMap::new();
        for (src, dsts) in file.edges {
            let src: u32 = src.trim().parse().map_err(|_| Error::InvalidArgument(format!(
                "mapping key {src:?} is not a class index"
            )))?;
            edges.insert(ClassId(src), dsts.into_iter().map(ClassId).collect::<LabelSet>());
        }
        Self::from_edges(edges, class_count)
    }

    /// Validates direct edges and closes them transitively.
    pub fn from_edges(edges: BTreeMap<ClassId, LabelSet>, class_count: Option<u32>) -> Result<Self> {
        for (src, dsts) in &edges {
            if dsts.contains(src) {
                return Err(Error::Invariant {
                    invariant: "no self-edges",
                    subject: format!("class {src}"),
                    detail: "mapping lists a class as its own target".into(),
                });
            }
            if let Some(count) = class_count {
                for class in std::iter::once(src).chain(dsts) {
                    if class.0 >= count {
                        return Err(Error::ClassOutOfRange {
                            index: class.0,
                            class_count: count,
                        });
                    }
                }
            }
        }
        let mut closure = BTreeMap::new();
        for &src in edges.keys() {
            let mut seen = LabelSet::new();
            let mut queue: VecDeque<ClassId> = VecDeque::from([src]);
            while let Some(node) = queue.pop_front() {
                for &next in edges.get(&node).into_iter().flatten() {
                    if next != src && seen.insert(next) {
                        queue.push_back(next);
                    }
                }
            }
            if !seen.is_empty() {
                closure.insert(src, seen);
            }
        }
        Ok(CollapseMapping { closure })
    }

    /// Classes implied by `class` (transitively), excluding `class` itself.
    pub fn targets(&self, class: ClassId) -> Option<&LabelSet> {
        self.closure.get(&class)
    }

    /// `labels` plus everything they imply.
    pub fn expand(&self, labels: &LabelSet) -> LabelSet {
        let mut out = labels.clone();
        for label in labels {
            if let Some(extra) = self.closure.get(label) {
                out.extend(extra.iter().copied());
            }
        }
        out
    }

    /// True when a prediction of `class` is credited by `correct`.
    pub fn credits(&self, correct: &LabelSet, class: ClassId) -> bool {
        correct.contains(&class)
            || correct
                .iter()
                .any(|l| self.closure.get(l).is_some_and(|t| t.contains(&class)))
    }

    /// Closed edges in source order.
    pub fn edges(&self) -> impl Iterator<Item = (ClassId, &LabelSet)> {
        self.closure.iter().map(|(k, v)| (*k, v))
    }

    pub fn is_empty(&self) -> bool {
        self.closure.is_empty()
    }
}

pub fn load_mapping(path: &Path, class_count: Option<u32>) -> Result<CollapseMapping> {
    CollapseMapping::from_file(jsonl::read_json(path)?, class_count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels;

    #[test]
    fn shipped_mapping_edges() {
        let m = CollapseMapping::imagenet();
        assert_eq!(m.targets(ClassId(250)), Some(&labels([248])));
        assert_eq!(m.targets(ClassId(249)), Some(&labels([248])));
        assert_eq!(m.targets(ClassId(836)), Some(&labels([837])));
        assert_eq!(m.targets(ClassId(837)), Some(&labels([836])));
        assert_eq!(m.targets(ClassId(356)), Some(&labels([357, 358, 359])));
        assert_eq!(m.targets(ClassId(359)), Some(&labels([356, 357, 358])));
        assert_eq!(m.targets(ClassId(248)), None);
    }

    #[test]
    fn expansion_is_directional() {
        let m = CollapseMapping::imagenet();
        assert_eq!(m.expand(&LabelSet::new()), LabelSet::new());
        assert_eq!(m.expand(&labels([250])), labels([248, 250]));
        assert_eq!(m.expand(&labels([248])), labels([248]));
        assert_eq!(m.expand(&labels([504])), labels([504, 968]));
        assert!(m.credits(&labels([385]), ClassId(101)));
        assert!(!m.credits(&labels([101]), ClassId(385)));
    }

    #[test]
    fn chains_are_closed() {
        let edges = BTreeMap::from([(ClassId(1), labels([2])), (ClassId(2), labels([3]))]);
        let m = CollapseMapping::from_edges(edges, None).unwrap();
        assert_eq!(m.expand(&labels([1])), labels([1, 2, 3]));
        assert_eq!(m.expand(&labels([2])), labels([2, 3]));
    }

    #[test]
    fn rejects_self_edges_and_range() {
        assert!(matches!(
            CollapseMapping::from_json(r#"{"edges":{"3":[3]}}"#, None),
            Err(Error::Invariant { .. })
        ));
        assert!(matches!(
            CollapseMapping::from_json(r#"{"edges":{"3":[10]}}"#, Some(10)),
            Err(Error::ClassOutOfRange { index: 10, .. })
        ));
        assert!(CollapseMapping::from_json("{\"edges\": [", None).is_err());
    }
}
