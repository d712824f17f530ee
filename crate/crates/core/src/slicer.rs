//! "Major mistakes" evaluation slices.
//!
//! A slice keeps the images on which at least `k` of a panel of models make a
//! major mistake, together with a snapshot of their annotation records, so
//! it can be scored without the parent annotation set.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::{clopper_pearson, BinomialInterval};
use crate::evaluator::{index_single_model, verdict_for, PredictionRow, Verdict};
use crate::triage::{ItemStatus, MistakeRecord, ReviewItem, Severity};
use crate::{jsonl, AnnotationRecord, AnnotationSet, CollapseMapping, Error, Result};

/// Confidence level used for slice score intervals.
pub const SLICE_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SliceDefinition {
    pub name: String,
    pub threshold_k: usize,
    pub source_models: Vec<String>,
    /// Snapshot of the annotation records, keyed by image id.
    pub records: BTreeMap<String, AnnotationRecord>,
}

#[derive(Serialize, Deserialize)]
struct SliceFile {
    name: String,
    threshold_k: usize,
    source_models: Vec<String>,
    records: Vec<AnnotationRecord>,
}

impl SliceDefinition {
    pub fn image_ids(&self) -> impl Iterator<Item = &str> {
        self.records.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records that look unreviewed: no wrong labels and absent from
    /// `reviewed`.
    pub fn unreviewed<'a>(&'a self, reviewed: &'a BTreeSet<String>) -> impl Iterator<Item = &'a str> {
        self.records
            .values()
            .filter(move |r| r.wrong.is_empty() && !reviewed.contains(&r.image_id))
            .map(|r| r.image_id.as_str())
    }

    /// Writes `slice.json`, refusing when any record still needs a labelling
    /// pass (see [`SliceDefinition::unreviewed`]).
    pub fn export(&self, path: &Path, reviewed: &BTreeSet<String>) -> Result<()> {
        let pending: Vec<&str> = self.unreviewed(reviewed).collect();
        if !pending.is_empty() {
            return Err(Error::Invariant {
                invariant: "slice comprehensively labelled",
                subject: self.name.clone(),
                detail: format!(
                    "{} record(s) have no wrong labels and no review history, first {:?}",
                    pending.len(),
                    pending[0]
                ),
            });
        }
        jsonl::write_json(path, &self.to_file())
    }

    fn to_file(&self) -> SliceFile {
        SliceFile {
            name: self.name.clone(),
            threshold_k: self.threshold_k,
            source_models: self.source_models.clone(),
            records: self.records.values().cloned().collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&self.to_file()).map_err(|e| Error::json("slice", e))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: SliceFile = serde_json::from_str(text).map_err(|e| Error::json("slice", e))?;
        Self::from_file(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_file(jsonl::read_json(path)?)
    }

    fn from_file(file: SliceFile) -> Result<Self> {
        if file.threshold_k > file.source_models.len() {
            return Err(Error::InvalidArgument(format!(
                "threshold {} exceeds {} source models",
                file.threshold_k,
                file.source_models.len()
            )));
        }
        let mut records = BTreeMap::new();
        for r in file.records {
            r.validate(u32::MAX)?;
            if let Some(prev) = records.insert(r.image_id.clone(), r) {
                return Err(Error::DuplicateImage(prev.image_id));
            }
        }
        Ok(SliceDefinition {
            name: file.name,
            threshold_k: file.threshold_k,
            source_models: file.source_models,
            records,
        })
    }
}

/// Selects images where at least `k` distinct source models have a major
/// mistake, skipping problematic records.
pub fn build_major_slice(
    mistakes: &BTreeMap<String, Vec<MistakeRecord>>,
    source_models: &[String],
    anns: &AnnotationSet,
    k: usize,
    name: &str,
) -> Result<SliceDefinition> {
    if k == 0 {
        return Err(Error::InvalidArgument("threshold k must be at least 1".into()));
    }
    if k > source_models.len() {
        return Err(Error::InvalidArgument(format!(
            "threshold {k} exceeds {} source models",
            source_models.len()
        )));
    }
    let mut marks: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for model in source_models {
        let list = mistakes
            .get(model)
            .ok_or_else(|| Error::InvalidArgument(format!("no mistake list for model {model:?}")))?;
        for m in list {
            if m.severity == Severity::Major {
                marks.entry(&m.image_id).or_default().insert(model);
            }
        }
    }
    let mut records = BTreeMap::new();
    for (image_id, models) in marks {
        if models.len() < k {
            continue;
        }
        let record = anns
            .get(image_id)
            .ok_or_else(|| Error::UnknownImage(image_id.to_owned()))?;
        if record.problematic {
            continue;
        }
        records.insert(image_id.to_owned(), record.clone());
    }
    let mut models = source_models.to_vec();
    models.sort();
    models.dedup();
    Ok(SliceDefinition {
        name: name.to_owned(),
        threshold_k: k,
        source_models: models,
        records,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceAudit {
    pub model_id: String,
    pub score: u64,
    pub n: u64,
    pub interval: BinomialInterval,
    /// Novel predictions to send through review.
    pub novel: Vec<ReviewItem>,
}

/// Scores one model on a slice. Predictions for images outside the slice are
/// ignored.
pub fn audit_slice_predictions(
    preds: &[PredictionRow],
    slice: &SliceDefinition,
    mapping: &CollapseMapping,
) -> Result<SliceAudit> {
    let by_image = index_single_model(preds)?;
    let model_id = preds.first().map(|p| p.model_id.clone()).unwrap_or_default();
    if slice.is_empty() {
        return Err(Error::InvalidArgument(format!("slice {:?} is empty", slice.name)));
    }
    let mut score = 0u64;
    let mut novel = Vec::new();
    for record in slice.records.values() {
        let pred = by_image
            .get(record.image_id.as_str())
            .ok_or_else(|| Error::MissingPrediction {
                image_id: record.image_id.clone(),
                model_id: model_id.clone(),
            })?;
        match verdict_for(pred.label, record, mapping) {
            Verdict::Correct => score += 1,
            Verdict::Novel => novel.push(ReviewItem {
                image_id: record.image_id.clone(),
                predicted_class: pred.label,
                score: pred.score,
                ground_truth: record.correct.clone(),
                prior_wrong: record.wrong.clone(),
                model_ids: vec![model_id.clone()],
                status: ItemStatus::Open,
                round: 1,
                votes: BTreeMap::new(),
            }),
            _ => {}
        }
    }
    let n = slice.len() as u64;
    Ok(SliceAudit {
        model_id,
        score,
        n,
        interval: clopper_pearson(score, n, SLICE_ALPHA)?,
        novel,
    })
}
