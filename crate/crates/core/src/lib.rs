//! Tooling for keeping a multi-label image classification benchmark honest.
//!
//! The crate covers the whole maintenance loop around a multi-label
//! evaluation set:
//!
//! * [`annotations`]: versioned per-image ground truth (correct, unclear and
//!   wrong label sets) and the merge path for review outcomes.
//! * [`collapse`]: directional class-equivalence edges applied to ground
//!   truth before scoring.
//! * [`evaluator`]: top-1 and multi-label accuracy, group slices and subset
//!   restriction.
//! * [`triage`]: novel-prediction detection and panel vote adjudication.
//! * [`analysis`]: confusion pairs, taxonomy distance, chi-square tests and
//!   Clopper-Pearson intervals.
//! * [`dedup`]: exact pixel duplicates and exact k-nearest-neighbour search
//!   for train/validation leakage.
//! * [`slicer`]: "major mistakes" evaluation slices and prediction audits.
//!
//! ```
//! use labelshed::{AnnotationRecord, AnnotationSet, ClassId, CollapseMapping};
//! use labelshed::evaluator::{classify_prediction, PredictionRow, Verdict};
//!
//! let mapping = CollapseMapping::imagenet();
//! let mut record = AnnotationRecord::new("val_00001");
//! record.correct.insert(ClassId(250)); // siberian husky
//!
//! // every husky is also an eskimo dog
//! let pred = PredictionRow::new("val_00001", "model", 248, 0.71);
//! assert_eq!(classify_prediction(&pred, &record, &mapping).unwrap(), Verdict::Correct);
//! ```

pub mod analysis;
pub mod annotations;
pub mod collapse;
pub mod dedup;
mod error;
pub mod evaluator;
pub(crate) mod jsonl;
pub mod slicer;
pub mod triage;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use annotations::{AnnotationRecord, AnnotationSet, VersionDiff};
pub use collapse::CollapseMapping;
pub use error::{Error, Result};

/// Index of a benchmark class, in `[0, class_count)`.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct ClassId(pub u32);

impl ClassId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl From<u32> for ClassId {
    fn from(index: u32) -> Self {
        ClassId(index)
    }
}

/// Ordered set of classes. Ordering keeps every serialized artifact stable.
pub type LabelSet = BTreeSet<ClassId>;

/// Builds a [`LabelSet`] from raw indices.
pub fn labels<I: IntoIterator<Item = u32>>(indices: I) -> LabelSet {
    indices.into_iter().map(ClassId).collect()
}

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/annotations.md")]
    mod annotations {}
    #[doc = include_str!("../../../book/src/collapse.md")]
    mod collapse {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/triage.md")]
    mod triage {}
    #[doc = include_str!("../../../book/src/review.md")]
    mod review {}
    #[doc = include_str!("../../../book/src/statistics.md")]
    mod statistics {}
    #[doc = include_str!("../../../book/src/leakage.md")]
    mod leakage {}
    #[doc = include_str!("../../../book/src/slices.md")]
    mod slices {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
