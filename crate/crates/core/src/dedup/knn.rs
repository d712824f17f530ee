use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::EmbeddingMatrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// Euclidean distance.
    #[default]
    L2,
    /// `1 - cos(q, c)`; 1 when either vector is zero.
    Cosine,
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l2" => Ok(Metric::L2),
            "cosine" => Ok(Metric::Cosine),
            other => Err(Error::InvalidArgument(format!("unknown metric {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KnnConfig {
    pub k: usize,
    pub metric: Metric,
    /// Corpus rows scanned per block.
    pub block_size: usize,
    /// Queries sharing one pass over a corpus block.
    pub query_block: usize,
    /// Worker threads; `None` uses the global rayon pool.
    pub threads: Option<usize>,
}

impl Default for KnnConfig {
    fn default() -> Self {
        KnnConfig {
            k: 10,
            metric: Metric::L2,
            block_size: 4096,
            query_block: 64,
            threads: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    /// Row of the corpus matrix.
    pub index: usize,
    pub id: String,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborList {
    pub query_id: String,
    pub neighbors: Vec<Neighbor>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    distance: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn sq_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum()
}

fn l2(q: &[f32], c: &[f32]) -> f64 {
    q.iter()
        .zip(c)
        .map(|(&a, &b)| {
            let d = f64::from(a) - f64::from(b);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

fn cosine(q: &[f32], q_norm: f64, c: &[f32], c_norm: f64) -> f64 {
    if q_norm == 0.0 || c_norm == 0.0 {
        return 1.0;
    }
    let dot: f64 = q.iter().zip(c).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum();
    1.0 - dot / (q_norm * c_norm)
}

/// Exact top-`k` neighbours of every query, ties broken by corpus index.
///
/// The corpus is traversed in blocks of `block_size` rows for groups of
/// `query_block` queries; each query keeps a bounded max-heap. Every
/// distance is computed independently of the blocking, so results do not
/// depend on block sizes or thread count.
pub fn knn_search(
    queries: &EmbeddingMatrix,
    corpus: &EmbeddingMatrix,
    config: &KnnConfig,
) -> Result<Vec<NeighborList>> {
    if queries.dim() != corpus.dim() {
        return Err(Error::DimensionMismatch(queries.dim(), corpus.dim()));
    }
    if config.k == 0 || config.block_size == 0 || config.query_block == 0 {
        return Err(Error::InvalidArgument(
            "k, block_size and query_block must be positive".into(),
        ));
    }
    match config.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?
            .install(|| search(queries, corpus, config)),
        None => search(queries, corpus, config),
    }
}

fn search(queries: &EmbeddingMatrix, corpus: &EmbeddingMatrix, config: &KnnConfig) -> Result<Vec<NeighborList>> {
    let k = config.k.min(corpus.len());
    let corpus_norms: Vec<f64> = match config.metric {
        Metric::Cosine => (0..corpus.len()).map(|i| sq_norm(corpus.row(i)).sqrt()).collect(),
        Metric::L2 => Vec::new(),
    };
    let query_ids: Vec<usize> = (0..queries.len()).collect();
    let heaps: Vec<Vec<Candidate>> = query_ids
        .par_chunks(config.query_block)
        .flat_map_iter(|group| {
            let q_norms: Vec<f64> = match config.metric {
                Metric::Cosine => group.iter().map(|&q| sq_norm(queries.row(q)).sqrt()).collect(),
                Metric::L2 => Vec::new(),
            };
            let mut heaps: Vec<BinaryHeap<Candidate>> =
                group.iter().map(|_| BinaryHeap::with_capacity(k + 1)).collect();
            if k > 0 {
                for start in (0..corpus.len()).step_by(config.block_size) {
                    let end = (start + config.block_size).min(corpus.len());
                    for (slot, &q) in group.iter().enumerate() {
                        let qv = queries.row(q);
                        let heap = &mut heaps[slot];
                        for c in start..end {
                            let distance = match config.metric {
                                Metric::L2 => l2(qv, corpus.row(c)),
                                Metric::Cosine => cosine(qv, q_norms[slot], corpus.row(c), corpus_norms[c]),
                            };
                            let cand = Candidate { distance, index: c };
                            if heap.len() < k {
                                heap.push(cand);
                            } else if cand < *heap.peek().expect("heap is full") {
                                heap.pop();
                                heap.push(cand);
                            }
                        }
                    }
                }
            }
            heaps.into_iter().map(BinaryHeap::into_sorted_vec)
        })
        .collect();

    Ok(heaps
        .into_iter()
        .enumerate()
        .map(|(q, sorted)| NeighborList {
            query_id: queries.ids()[q].clone(),
            neighbors: sorted
                .into_iter()
                .map(|c| Neighbor {
                    index: c.index,
                    id: corpus.ids()[c.index].clone(),
                    distance: c.distance,
                })
                .collect(),
        })
        .collect())
}

/// A query/corpus pair close enough to need a human look.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearDuplicate {
    pub query_id: String,
    pub corpus_id: String,
    pub distance: f64,
}

/// Neighbours at or below `threshold`, closest first.
pub fn near_duplicate_candidates(lists: &[NeighborList], threshold: f64) -> Vec<NearDuplicate> {
    let mut out: Vec<NearDuplicate> = lists
        .iter()
        .flat_map(|l| {
            l.neighbors
                .iter()
                .filter(|n| n.distance <= threshold)
                .map(|n| NearDuplicate {
                    query_id: l.query_id.clone(),
                    corpus_id: n.id.clone(),
                    distance: n.distance,
                })
        })
        .collect();
    out.sort_by(|a, b| {
        a.distance
            .total_cmp(&b.distance)
            .then_with(|| a.query_id.cmp(&b.query_id))
            .then_with(|| a.corpus_id.cmp(&b.corpus_id))
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[[f32; 2]]) -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn cfg(k: usize) -> KnnConfig {
        KnnConfig { k, ..KnnConfig::default() }
    }

    #[test]
    fn small_l2_example() {
        let out = knn_search(&m(&[[0.9, 0.0]]), &m(&[[0.0, 0.0], [1.0, 0.0], [3.0, 0.0]]), &cfg(2)).unwrap();
        let n = &out[0].neighbors;
        assert_eq!(n.iter().map(|x| x.index).collect::<Vec<_>>(), vec![1, 0]);
        assert!((n[0].distance - 0.1).abs() < 1e-6);
        assert!((n[1].distance - 0.9).abs() < 1e-6);
    }

    #[test]
    fn k_beyond_corpus_and_ties() {
        let out = knn_search(&m(&[[2.0, 0.0]]), &m(&[[3.0, 0.0], [1.0, 0.0]]), &cfg(5)).unwrap();
        let idx: Vec<_> = out[0].neighbors.iter().map(|x| x.index).collect();
        assert_eq!(idx, vec![0, 1]);
    }

    #[test]
    fn cosine_distance() {
        let cfg = KnnConfig { k: 3, metric: Metric::Cosine, ..KnnConfig::default() };
        let out = knn_search(&m(&[[1.0, 0.0]]), &m(&[[0.0, 2.0], [5.0, 0.0], [0.0, 0.0]]), &cfg).unwrap();
        let n = &out[0].neighbors;
        assert_eq!(n[0].index, 1);
        assert!(n[0].distance.abs() < 1e-12);
        // orthogonal and zero vectors both sit at 1; index breaks the tie
        assert_eq!((n[1].index, n[2].index), (0, 2));
    }

    #[test]
    fn errors() {
        let a = m(&[[1.0, 0.0]]);
        let b = EmbeddingMatrix::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        assert!(matches!(knn_search(&a, &b, &cfg(1)), Err(Error::DimensionMismatch(2, 3))));
        assert!(knn_search(&a, &a, &cfg(0)).is_err());
    }

    #[test]
    fn candidates_below_threshold() {
        let out = knn_search(&m(&[[0.0, 0.0], [5.0, 5.0]]), &m(&[[0.0, 0.1], [5.0, 5.0], [9.0, 9.0]]), &cfg(2)).unwrap();
        let c = near_duplicate_candidates(&out, 0.5);
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].query_id, "1");
        assert_eq!(c[0].distance, 0.0);
    }
}
