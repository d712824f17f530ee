//! Train/validation leakage detection.
//!
//! Exact duplicates are found by digesting each image's canonical RGB8
//! decode ([`digest`]); near duplicates are surfaced by exact k-nearest
//! neighbour search over embeddings ([`knn`]) for human confirmation.

mod digest;
mod embeddings;
mod knn;

pub use digest::{
    decode_canonical, digest_file, digest_rgb, exact_duplicates, leak_manifest, scan_images, DuplicatePair,
    LeakReport, PixelDigest, ScannedImage,
};
pub use embeddings::{read_embeddings, read_ids, write_embeddings, EmbeddingMatrix, EMBEDDING_MAGIC};
pub use knn::{knn_search, near_duplicate_candidates, KnnConfig, Metric, Neighbor, NeighborList, NearDuplicate};
