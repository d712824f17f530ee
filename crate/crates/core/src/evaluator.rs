//! Top-1 and multi-label accuracy.
//!
//! Per-image verdicts come from [`classify_prediction`]; aggregation only
//! counts integers and forms ratios once at the end, so reports do not
//! depend on input row order.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{jsonl, AnnotationRecord, AnnotationSet, ClassId, CollapseMapping, Error, Result};

/// One model's top-1 prediction for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub image_id: String,
    pub model_id: String,
    pub label: ClassId,
    pub score: f64,
}

impl PredictionRow {
    pub fn new(image_id: impl Into<String>, model_id: impl Into<String>, label: u32, score: f64) -> Self {
        PredictionRow {
            image_id: image_id.into(),
            model_id: model_id.into(),
            label: ClassId(label),
            score,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Correct,
    Wrong,
    Unclear,
    /// Not in any adjudicated set; needs review.
    Novel,
    /// The record is problematic and takes no part in scoring.
    Excluded,
}

/// How predictions landing in the unclear set are scored.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnclearPolicy {
    /// Drop from numerator and denominator.
    #[default]
    Exclude,
    CountWrong,
    CountCorrect,
}

impl std::str::FromStr for UnclearPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exclude" => Ok(UnclearPolicy::Exclude),
            "count-wrong" => Ok(UnclearPolicy::CountWrong),
            "count-correct" => Ok(UnclearPolicy::CountCorrect),
            other => Err(Error::InvalidArgument(format!(
                "unclear policy {other:?} (expected exclude, count-wrong or count-correct)"
            ))),
        }
    }
}

/// Named disjoint class groups, e.g. organisms and objects.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroupPartition {
    pub groups: BTreeMap<String, BTreeSet<ClassId>>,
}

impl GroupPartition {
    pub fn new(groups: BTreeMap<String, BTreeSet<ClassId>>) -> Result<Self> {
        let mut owner: BTreeMap<ClassId, &str> = BTreeMap::new();
        for (name, classes) in &groups {
            for class in classes {
                if let Some(prev) = owner.insert(*class, name) {
                    return Err(Error::Invariant {
                        invariant: "groups disjoint",
                        subject: format!("class {class}"),
                        detail: format!("in both {prev:?} and {name:?}"),
                    });
                }
            }
        }
        Ok(GroupPartition { groups })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw: BTreeMap<String, BTreeSet<ClassId>> = jsonl::read_json(path)?;
        GroupPartition::new(raw)
    }

    pub fn group_of(&self, class: ClassId) -> Option<&str> {
        self.groups
            .iter()
            .find(|(_, classes)| classes.contains(&class))
            .map(|(name, _)| name.as_str())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub n: u64,
    pub n_correct: u64,
    pub mla: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_id: String,
    pub n_evaluated: u64,
    pub n_correct: u64,
    pub n_unclear_excluded: u64,
    pub n_novel: u64,
    pub n_problematic: u64,
    pub mla: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top1: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub per_group: BTreeMap<String, GroupStats>,
}

/// Optional inputs to [`multi_label_accuracy`].
#[derive(Debug, Clone, Copy, Default)]
pub struct EvalOptions<'a> {
    pub unclear_policy: UnclearPolicy,
    pub subset: Option<&'a BTreeSet<String>>,
    pub groups: Option<&'a GroupPartition>,
    /// Original single ground-truth label per image; enables `top1` and
    /// group attribution.
    pub single_labels: Option<&'a BTreeMap<String, ClassId>>,
}

pub fn classify_prediction(
    pred: &PredictionRow,
    record: &AnnotationRecord,
    mapping: &CollapseMapping,
) -> Result<Verdict> {
    if pred.image_id != record.image_id {
        return Err(Error::ImageMismatch {
            prediction: pred.image_id.clone(),
            record: record.image_id.clone(),
        });
    }
    Ok(verdict_for(pred.label, record, mapping))
}

pub(crate) fn verdict_for(label: ClassId, record: &AnnotationRecord, mapping: &CollapseMapping) -> Verdict {
    if record.problematic {
        Verdict::Excluded
    } else if mapping.credits(&record.correct, label) {
        Verdict::Correct
    } else if record.unclear.contains(&label) {
        Verdict::Unclear
    } else if record.wrong.contains(&label) {
        Verdict::Wrong
    } else {
        Verdict::Novel
    }
}

/// Indexes one model's rows by image id, rejecting duplicates and mixed models.
pub(crate) fn index_single_model(preds: &[PredictionRow]) -> Result<BTreeMap<&str, &PredictionRow>> {
    let mut by_image = BTreeMap::new();
    let mut model: Option<&str> = None;
    for row in preds {
        match model {
            None => model = Some(&row.model_id),
            Some(m) if m != row.model_id => {
                return Err(Error::MixedModels(m.to_owned(), row.model_id.clone()))
            }
            _ => {}
        }
        if by_image.insert(row.image_id.as_str(), row).is_some() {
            return Err(Error::DuplicatePrediction {
                image_id: row.image_id.clone(),
                model_id: row.model_id.clone(),
            });
        }
    }
    Ok(by_image)
}

pub fn multi_label_accuracy(
    preds: &[PredictionRow],
    anns: &AnnotationSet,
    mapping: &CollapseMapping,
    options: &EvalOptions<'_>,
) -> Result<EvalReport> {
    let by_image = index_single_model(preds)?;
    let model_id = preds.first().map(|p| p.model_id.clone()).unwrap_or_default();

    let scope: Vec<&AnnotationRecord> = match options.subset {
        Some(subset) => subset
            .iter()
            .map(|id| anns.get(id).ok_or_else(|| Error::UnknownImage(id.clone())))
            .collect::<Result<_>>()?,
        None => anns.records().collect(),
    };

    let mut report = EvalReport {
        model_id: model_id.clone(),
        n_evaluated: 0,
        n_correct: 0,
        n_unclear_excluded: 0,
        n_novel: 0,
        n_problematic: 0,
        mla: 0.0,
        top1: None,
        per_group: BTreeMap::new(),
    };
    if let Some(groups) = options.groups {
        for name in groups.groups.keys() {
            report.per_group.insert(name.clone(), GroupStats::default());
        }
    }
    let mut top1_hits = 0u64;

    for record in &scope {
        let pred = by_image.get(record.image_id.as_str()).ok_or_else(|| Error::MissingPrediction {
            image_id: record.image_id.clone(),
            model_id: model_id.clone(),
        })?;
        let single = match options.single_labels {
            Some(labels) => Some(
                *labels
                    .get(&record.image_id)
                    .ok_or_else(|| Error::MissingLabel(record.image_id.clone()))?,
            ),
            None => None,
        };
        if single == Some(pred.label) {
            top1_hits += 1;
        }

        let counted = match verdict_for(pred.label, record, mapping) {
            Verdict::Excluded => {
                report.n_problematic += 1;
                None
            }
            Verdict::Correct => Some(true),
            Verdict::Wrong => Some(false),
            Verdict::Novel => {
                report.n_novel += 1;
                Some(false)
            }
            Verdict::Unclear => match options.unclear_policy {
                UnclearPolicy::Exclude => {
                    report.n_unclear_excluded += 1;
                    None
                }
                UnclearPolicy::CountWrong => Some(false),
                UnclearPolicy::CountCorrect => Some(true),
            },
        };
        let Some(correct) = counted else { continue };
        report.n_evaluated += 1;
        report.n_correct += u64::from(correct);

        if let Some(groups) = options.groups {
            let label = single.ok_or_else(|| {
                Error::InvalidArgument("group statistics need single ground-truth labels".into())
            })?;
            if let Some(name) = groups.group_of(label) {
                let stats = report.per_group.get_mut(name).expect("groups pre-seeded");
                stats.n += 1;
                stats.n_correct += u64::from(correct);
            }
        }
    }

    report.mla = ratio(report.n_correct, report.n_evaluated);
    for stats in report.per_group.values_mut() {
        stats.mla = ratio(stats.n_correct, stats.n);
    }
    if options.single_labels.is_some() {
        report.top1 = Some(ratio(top1_hits, scope.len() as u64));
    }
    Ok(report)
}

/// [`multi_label_accuracy`] restricted to `manifest`.
pub fn evaluate_subset(
    preds: &[PredictionRow],
    anns: &AnnotationSet,
    mapping: &CollapseMapping,
    manifest: &BTreeSet<String>,
    unclear_policy: UnclearPolicy,
) -> Result<EvalReport> {
    let options = EvalOptions {
        unclear_policy,
        subset: Some(manifest),
        ..EvalOptions::default()
    };
    multi_label_accuracy(preds, anns, mapping, &options)
}

/// Exact-match accuracy against single labels; no collapse.
pub fn top1_accuracy(
    preds: &[PredictionRow],
    single_labels: &BTreeMap<String, ClassId>,
    subset: Option<&BTreeSet<String>>,
) -> Result<f64> {
    let by_image = index_single_model(preds)?;
    let model_id = preds.first().map(|p| p.model_id.as_str()).unwrap_or_default();
    let ids: Vec<&String> = match subset {
        Some(s) => s.iter().collect(),
        None => single_labels.keys().collect(),
    };
    let mut hits = 0u64;
    for id in &ids {
        let label = single_labels
            .get(*id)
            .ok_or_else(|| Error::MissingLabel((*id).clone()))?;
        let pred = by_image.get(id.as_str()).ok_or_else(|| Error::MissingPrediction {
            image_id: (*id).clone(),
            model_id: model_id.to_owned(),
        })?;
        hits += u64::from(pred.label == *label);
    }
    Ok(ratio(hits, ids.len() as u64))
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Splits rows by model id (sorted).
pub fn group_by_model(preds: Vec<PredictionRow>) -> BTreeMap<String, Vec<PredictionRow>> {
    let mut out: BTreeMap<String, Vec<PredictionRow>> = BTreeMap::new();
    for row in preds {
        out.entry(row.model_id.clone()).or_default().push(row);
    }
    out
}

/// Reads `predictions.jsonl`, checking scores lie in `[0, 1]`.
pub fn load_predictions(path: &Path) -> Result<Vec<PredictionRow>> {
    let rows: Vec<PredictionRow> = jsonl::read(path)?;
    for row in &rows {
        if !(0.0..=1.0).contains(&row.score) {
            return Err(Error::Invariant {
                invariant: "score in [0, 1]",
                subject: format!("{}/{}", row.model_id, row.image_id),
                detail: format!("score {}", row.score),
            });
        }
    }
    Ok(rows)
}

pub fn save_predictions(path: &Path, rows: &[PredictionRow]) -> Result<()> {
    jsonl::write(path, rows)
}

/// Reads `single_labels.json`: `{"<image_id>": class}`.
pub fn load_single_labels(path: &Path) -> Result<BTreeMap<String, ClassId>> {
    jsonl::read_json(path)
}
