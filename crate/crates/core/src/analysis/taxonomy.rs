use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::Path;

use crate::{jsonl, ClassId, Error, Result};

/// A class hypernym DAG: child → parents, plus the node of every class.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Taxonomy {
    nodes: BTreeSet<String>,
    parents: BTreeMap<String, BTreeSet<String>>,
    leaf_map: BTreeMap<ClassId, String>,
}

impl Taxonomy {
    /// Builds a taxonomy from `(child, parent)` edges and the class → node map.
    pub fn new<I>(edges: I, leaf_map: BTreeMap<ClassId, String>) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut nodes = BTreeSet::new();
        let mut parents: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for (child, parent) in edges {
            if child == parent {
                return Err(Error::Invariant {
                    invariant: "acyclic",
                    subject: child,
                    detail: "node is its own parent".into(),
                });
            }
            nodes.insert(child.clone());
            nodes.insert(parent.clone());
            parents.entry(child).or_default().insert(parent);
        }
        let mut owners: BTreeMap<&str, ClassId> = BTreeMap::new();
        for (class, node) in &leaf_map {
            if let Some(other) = owners.insert(node, *class) {
                return Err(Error::Invariant {
                    invariant: "class to node map is injective",
                    subject: node.clone(),
                    detail: format!("classes {other} and {class} share the node"),
                });
            }
        }
        for node in leaf_map.values() {
            nodes.insert(node.clone());
        }
        let tax = Taxonomy {
            nodes,
            parents,
            leaf_map,
        };
        tax.check_acyclic()?;
        Ok(tax)
    }

    /// Reads `taxonomy.tsv` (`child<TAB>parent`) and `leafmap.json`.
    pub fn load(tsv: &Path, leafmap: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(tsv).map_err(|e| Error::io(tsv, e))?;
        let mut edges = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split('\t');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(child), Some(parent), None) if !child.is_empty() && !parent.is_empty() => {
                    edges.push((child.to_owned(), parent.to_owned()));
                }
                _ => {
                    return Err(Error::Parse {
                        path: tsv.to_path_buf(),
                        line: i + 1,
                        message: "expected child<TAB>parent".into(),
                    })
                }
            }
        }
        let raw: BTreeMap<ClassId, String> = jsonl::read_json(leafmap)?;
        Taxonomy::new(edges, raw)
    }

    fn check_acyclic(&self) -> Result<()> {
        // 0 = unvisited, 1 = on stack, 2 = done
        let mut state: BTreeMap<&str, u8> = BTreeMap::new();
        for start in &self.nodes {
            if state.get(start.as_str()).copied().unwrap_or(0) != 0 {
                continue;
            }
            let mut stack: Vec<(&str, Vec<&str>)> = vec![(start, self.parent_list(start))];
            state.insert(start, 1);
            while let Some((node, pending)) = stack.last_mut() {
                match pending.pop() {
                    Some(next) => match state.get(next).copied().unwrap_or(0) {
                        0 => {
                            state.insert(next, 1);
                            let ps = self.parent_list(next);
                            stack.push((next, ps));
                        }
                        1 => {
                            return Err(Error::Invariant {
                                invariant: "acyclic",
                                subject: next.to_owned(),
                                detail: "cycle through parent edges".into(),
                            })
                        }
                        _ => {}
                    },
                    None => {
                        state.insert(node, 2);
                        stack.pop();
                    }
                }
            }
        }
        Ok(())
    }

    fn parent_list(&self, node: &str) -> Vec<&str> {
        self.parents
            .get(node)
            .map(|ps| ps.iter().map(String::as_str).collect())
            .unwrap_or_default()
    }

    pub fn node_of(&self, class: ClassId) -> Option<&str> {
        self.leaf_map.get(&class).map(String::as_str)
    }

    pub fn parents(&self, node: &str) -> impl Iterator<Item = &str> {
        self.parents.get(node).into_iter().flatten().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Fewest parent edges from `node` to each of its ancestors (itself at 0).
    pub fn ancestor_hops(&self, node: &str) -> BTreeMap<&str, u32> {
        let mut hops = BTreeMap::new();
        let Some(start) = self.nodes.get(node) else {
            return hops;
        };
        hops.insert(start.as_str(), 0);
        let mut queue = VecDeque::from([start.as_str()]);
        while let Some(n) = queue.pop_front() {
            let d = hops[n];
            for p in self.parents(n) {
                if !hops.contains_key(p) {
                    hops.insert(p, d + 1);
                    queue.push_back(p);
                }
            }
        }
        hops
    }
}

/// Taxonomy proximity: over common ancestors, the smallest
/// `max(hops from a, hops from b)`. Siblings are at 1, cousins at 2.
pub fn hierarchy_distance(a: ClassId, b: ClassId, tax: &Taxonomy) -> Result<u32> {
    let na = tax.node_of(a).ok_or(Error::UnmappedClass(a))?;
    let nb = tax.node_of(b).ok_or(Error::UnmappedClass(b))?;
    if a == b {
        return Ok(0);
    }
    let ha = tax.ancestor_hops(na);
    let hb = tax.ancestor_hops(nb);
    ha.iter()
        .filter_map(|(node, &da)| hb.get(node).map(|&db| da.max(db)))
        .min()
        .ok_or(Error::NoCommonAncestor(a, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn edges(list: &[(&str, &str)]) -> Vec<(String, String)> {
        list.iter().map(|(c, p)| (c.to_string(), p.to_string())).collect()
    }

    fn leaves(list: &[(u32, &str)]) -> BTreeMap<ClassId, String> {
        list.iter().map(|(c, n)| (ClassId(*c), n.to_string())).collect()
    }

    #[test]
    fn siblings_and_cousins() {
        let tax = Taxonomy::new(
            edges(&[("a", "p"), ("b", "p"), ("c", "q"), ("p", "g"), ("q", "g"), ("d", "g")]),
            leaves(&[(0, "a"), (1, "b"), (2, "c"), (3, "d")]),
        )
        .unwrap();
        assert_eq!(hierarchy_distance(ClassId(0), ClassId(0), &tax).unwrap(), 0);
        assert_eq!(hierarchy_distance(ClassId(0), ClassId(1), &tax).unwrap(), 1);
        assert_eq!(hierarchy_distance(ClassId(0), ClassId(2), &tax).unwrap(), 2);
        // uneven depths: d hangs directly off g
        assert_eq!(hierarchy_distance(ClassId(3), ClassId(0), &tax).unwrap(), 2);
        assert!(matches!(
            hierarchy_distance(ClassId(0), ClassId(9), &tax),
            Err(Error::UnmappedClass(_))
        ));
    }

    #[test]
    fn multiple_parents_take_nearest() {
        let tax = Taxonomy::new(
            edges(&[("a", "x"), ("a", "far"), ("far", "top"), ("x", "top"), ("b", "x")]),
            leaves(&[(0, "a"), (1, "b")]),
        )
        .unwrap();
        assert_eq!(hierarchy_distance(ClassId(0), ClassId(1), &tax).unwrap(), 1);
    }

    #[test]
    fn disconnected_and_cyclic() {
        let tax = Taxonomy::new(edges(&[("a", "r1"), ("b", "r2")]), leaves(&[(0, "a"), (1, "b")])).unwrap();
        assert!(matches!(
            hierarchy_distance(ClassId(0), ClassId(1), &tax),
            Err(Error::NoCommonAncestor(..))
        ));
        assert!(Taxonomy::new(edges(&[("a", "b"), ("b", "c"), ("c", "a")]), BTreeMap::new()).is_err());
        assert!(Taxonomy::new(edges(&[("a", "r")]), leaves(&[(0, "a"), (1, "a")])).is_err());
    }
}
