//! Versioned multi-label ground truth.
//!
//! An [`AnnotationSet`] maps image ids to [`AnnotationRecord`]s. Records are
//! immutable once loaded: review outcomes are folded in by
//! [`merge_review_outcomes`], which returns a new set with a new version tag.
//! [`diff_versions`] and [`VersionDiff::apply`] give a field-exact delta
//! between two versions.
//!
//! On disk a set is a JSON-lines file (one record per line, sorted by image
//! id) plus a `meta.json` sidecar carrying the version tag and class count.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::triage::{ReviewDecision, ReviewVerdict, Severity};
use crate::{jsonl, ClassId, Error, LabelSet, Result};

/// Ground truth for one image.
///
/// `correct`, `unclear` and `wrong` are pairwise disjoint. `minor_wrong`
/// marks the subset of `wrong` whose mistakes were graded minor; it is
/// optional and an empty set means "no severity recorded".
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub image_id: String,
    #[serde(default)]
    pub correct: LabelSet,
    #[serde(default)]
    pub unclear: LabelSet,
    #[serde(default)]
    pub wrong: LabelSet,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub minor_wrong: LabelSet,
    #[serde(default)]
    pub problematic: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
}

/// The label sets of a record, used to name the set a class lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelKind {
    Correct,
    Unclear,
    Wrong,
}

impl LabelKind {
    pub fn name(self) -> &'static str {
        match self {
            LabelKind::Correct => "correct",
            LabelKind::Unclear => "unclear",
            LabelKind::Wrong => "wrong",
        }
    }
}

impl AnnotationRecord {
    pub fn new(image_id: impl Into<String>) -> Self {
        AnnotationRecord {
            image_id: image_id.into(),
            correct: LabelSet::new(),
            unclear: LabelSet::new(),
            wrong: LabelSet::new(),
            minor_wrong: LabelSet::new(),
            problematic: false,
            notes: None,
        }
    }

    /// Which adjudicated set holds `class`, if any.
    pub fn kind_of(&self, class: ClassId) -> Option<LabelKind> {
        if self.correct.contains(&class) {
            Some(LabelKind::Correct)
        } else if self.unclear.contains(&class) {
            Some(LabelKind::Unclear)
        } else if self.wrong.contains(&class) {
            Some(LabelKind::Wrong)
        } else {
            None
        }
    }

    fn set_mut(&mut self, kind: LabelKind) -> &mut LabelSet {
        match kind {
            LabelKind::Correct => &mut self.correct,
            LabelKind::Unclear => &mut self.unclear,
            LabelKind::Wrong => &mut self.wrong,
        }
    }

    /// Checks the disjointness and range invariants.
    pub fn validate(&self, class_count: u32) -> Result<()> {
        let pairs = [
            ("correct", &self.correct, "unclear", &self.unclear),
            ("correct", &self.correct, "wrong", &self.wrong),
            ("unclear", &self.unclear, "wrong", &self.wrong),
        ];
        for (a_name, a, b_name, b) in pairs {
            if let Some(class) = a.intersection(b).next() {
                return Err(Error::Invariant {
                    invariant: "disjointness",
                    subject: self.image_id.clone(),
                    detail: format!("class {class} is in both {a_name} and {b_name}"),
                });
            }
        }
        if let Some(class) = self.minor_wrong.difference(&self.wrong).next() {
            return Err(Error::Invariant {
                invariant: "minor_wrong within wrong",
                subject: self.image_id.clone(),
                detail: format!("class {class} is minor_wrong but not wrong"),
            });
        }
        let all = self
            .correct
            .iter()
            .chain(&self.unclear)
            .chain(&self.wrong);
        for class in all {
            if class.0 >= class_count {
                return Err(Error::ClassOutOfRange {
                    index: class.0,
                    class_count,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationMeta {
    pub version: String,
    pub class_count: u32,
}

/// A versioned collection of records keyed by image id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationSet {
    version: String,
    class_count: u32,
    records: BTreeMap<String, AnnotationRecord>,
}

impl AnnotationSet {
    pub fn new(version: impl Into<String>, class_count: u32) -> Self {
        AnnotationSet {
            version: version.into(),
            class_count,
            records: BTreeMap::new(),
        }
    }

    /// Builds a set from records, validating every invariant.
    pub fn from_records<I>(version: impl Into<String>, class_count: u32, records: I) -> Result<Self>
    where
        I: IntoIterator<Item = AnnotationRecord>,
    {
        let mut set = AnnotationSet::new(version, class_count);
        for record in records {
            set.insert(record)?;
        }
        Ok(set)
    }

    pub fn insert(&mut self, record: AnnotationRecord) -> Result<()> {
        record.validate(self.class_count)?;
        if self.records.contains_key(&record.image_id) {
            return Err(Error::DuplicateImage(record.image_id));
        }
        self.records.insert(record.image_id.clone(), record);
        Ok(())
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn class_count(&self) -> u32 {
        self.class_count
    }

    pub fn meta(&self) -> AnnotationMeta {
        AnnotationMeta {
            version: self.version.clone(),
            class_count: self.class_count,
        }
    }

    pub fn get(&self, image_id: &str) -> Option<&AnnotationRecord> {
        self.records.get(image_id)
    }

    pub fn contains(&self, image_id: &str) -> bool {
        self.records.contains_key(image_id)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records in image-id order.
    pub fn records(&self) -> impl Iterator<Item = &AnnotationRecord> {
        self.records.values()
    }

    pub fn image_ids(&self) -> impl Iterator<Item = &str> {
        self.records.keys().map(String::as_str)
    }

    /// Returns a copy carrying a different version tag.
    pub fn with_version(mut self, version: impl Into<String>) -> Self {
        self.version = version.into();
        self
    }
}

/// Location of the sidecar for an annotations file: `<file>.meta.json` when it
/// exists, otherwise `meta.json` in the same directory.
pub fn meta_path_for(path: &Path) -> PathBuf {
    let mut specific = path.as_os_str().to_owned();
    specific.push(".meta.json");
    let specific = PathBuf::from(specific);
    if specific.exists() {
        return specific;
    }
    path.parent()
        .map(|dir| dir.join("meta.json"))
        .unwrap_or_else(|| PathBuf::from("meta.json"))
}

/// Loads `annotations.jsonl` and its sidecar.
pub fn load_annotations(path: &Path) -> Result<AnnotationSet> {
    let meta: AnnotationMeta = jsonl::read_json(&meta_path_for(path))?;
    load_annotations_with_meta(path, meta)
}

/// Loads records from `path`, taking version and class count from `meta`.
pub fn load_annotations_with_meta(path: &Path, meta: AnnotationMeta) -> Result<AnnotationSet> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(std::io::BufReader::new(file), path, meta)
}

pub fn parse_annotations<R: std::io::BufRead>(
    reader: R,
    path: &Path,
    meta: AnnotationMeta,
) -> Result<AnnotationSet> {
    let mut set = AnnotationSet::new(meta.version, meta.class_count);
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: AnnotationRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        set.insert(record)?;
    }
    Ok(set)
}

/// Writes the records sorted by image id, and `meta.json` next to them.
pub fn save_annotations(set: &AnnotationSet, path: &Path) -> Result<()> {
    jsonl::write(path, set.records())?;
    let meta = path
        .parent()
        .map(|dir| dir.join("meta.json"))
        .unwrap_or_else(|| PathBuf::from("meta.json"));
    jsonl::write_json(&meta, &set.meta())
}

/// Increments a trailing integer in a version tag (`v3` → `v4`), or appends
/// `.1` when there is none.
pub fn next_version(tag: &str) -> String {
    let digits = tag.len() - tag.trim_end_matches(|c: char| c.is_ascii_digit()).len();
    if digits == 0 {
        return format!("{tag}.1");
    }
    let (head, tail) = tag.split_at(tag.len() - digits);
    match tail.parse::<u64>() {
        Ok(n) => format!("{head}{}", n + 1),
        Err(_) => format!("{tag}.1"),
    }
}

#[derive(Debug, Clone, Default)]
pub struct MergeOptions {
    /// Move a class out of a conflicting set instead of failing.
    pub allow_override: bool,
    /// Version tag of the result; defaults to [`next_version`] of the base.
    pub version: Option<String>,
}

/// Folds finalized review decisions into a new annotation version.
///
/// `Correct`, `Unclear` and `Wrong` verdicts add the predicted class to the
/// matching set (`Wrong` with minor severity also marks it `minor_wrong`);
/// `Problematic` flags the whole record.
pub fn merge_review_outcomes(
    base: &AnnotationSet,
    decisions: &[ReviewDecision],
    options: &MergeOptions,
) -> Result<AnnotationSet> {
    let mut records = base.records.clone();
    for decision in decisions {
        let record = records
            .get_mut(&decision.image_id)
            .ok_or_else(|| Error::UnknownImage(decision.image_id.clone()))?;
        let class = decision.predicted_class;
        if class.0 >= base.class_count {
            return Err(Error::ClassOutOfRange {
                index: class.0,
                class_count: base.class_count,
            });
        }
        let target = match decision.verdict {
            ReviewVerdict::Problematic => {
                record.problematic = true;
                continue;
            }
            ReviewVerdict::Correct => LabelKind::Correct,
            ReviewVerdict::Unclear => LabelKind::Unclear,
            ReviewVerdict::Wrong => LabelKind::Wrong,
        };
        if let Some(existing) = record.kind_of(class) {
            if existing != target {
                if !options.allow_override {
                    return Err(Error::MergeConflict {
                        image_id: record.image_id.clone(),
                        class,
                        existing: existing.name(),
                        requested: target.name(),
                    });
                }
                record.set_mut(existing).remove(&class);
                record.minor_wrong.remove(&class);
            }
        }
        record.set_mut(target).insert(class);
        if target == LabelKind::Wrong {
            match decision.severity {
                Some(Severity::Minor) => {
                    record.minor_wrong.insert(class);
                }
                _ => {
                    record.minor_wrong.remove(&class);
                }
            }
        }
    }
    let version = options
        .version
        .clone()
        .unwrap_or_else(|| next_version(&base.version));
    Ok(AnnotationSet {
        version,
        class_count: base.class_count,
        records,
    })
}

/// Per-image label additions and removals between two versions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VersionDiff {
    pub old_version: String,
    pub new_version: String,
    pub class_count: u32,
    pub added_correct: BTreeMap<String, LabelSet>,
    pub added_unclear: BTreeMap<String, LabelSet>,
    pub added_wrong: BTreeMap<String, LabelSet>,
    pub added_minor_wrong: BTreeMap<String, LabelSet>,
    pub removed_correct: BTreeMap<String, LabelSet>,
    pub removed_unclear: BTreeMap<String, LabelSet>,
    pub removed_wrong: BTreeMap<String, LabelSet>,
    pub removed_minor_wrong: BTreeMap<String, LabelSet>,
    pub newly_problematic: BTreeSet<String>,
    pub cleared_problematic: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub notes: BTreeMap<String, Option<String>>,
}

impl VersionDiff {
    /// True when the two versions carry identical records.
    pub fn is_empty(&self) -> bool {
        self.added_correct.is_empty()
            && self.added_unclear.is_empty()
            && self.added_wrong.is_empty()
            && self.added_minor_wrong.is_empty()
            && self.removed_correct.is_empty()
            && self.removed_unclear.is_empty()
            && self.removed_wrong.is_empty()
            && self.removed_minor_wrong.is_empty()
            && self.newly_problematic.is_empty()
            && self.cleared_problematic.is_empty()
            && self.notes.is_empty()
    }

    /// Replays the diff on `old`.
    pub fn apply(&self, old: &AnnotationSet) -> Result<AnnotationSet> {
        let mut records = old.records.clone();
        fn lookup<'a>(
            records: &'a mut BTreeMap<String, AnnotationRecord>,
            id: &str,
        ) -> Result<&'a mut AnnotationRecord> {
            records
                .get_mut(id)
                .ok_or_else(|| Error::UnknownImage(id.to_owned()))
        }
        // Removals first so a class moved between sets lands in its new home.
        let removals: [(&BTreeMap<String, LabelSet>, fn(&mut AnnotationRecord) -> &mut LabelSet); 4] = [
            (&self.removed_correct, |r| &mut r.correct),
            (&self.removed_unclear, |r| &mut r.unclear),
            (&self.removed_wrong, |r| &mut r.wrong),
            (&self.removed_minor_wrong, |r| &mut r.minor_wrong),
        ];
        for (map, field) in removals {
            for (id, classes) in map {
                let set = field(lookup(&mut records, id)?);
                for class in classes {
                    set.remove(class);
                }
            }
        }
        let additions: [(&BTreeMap<String, LabelSet>, fn(&mut AnnotationRecord) -> &mut LabelSet); 4] = [
            (&self.added_correct, |r| &mut r.correct),
            (&self.added_unclear, |r| &mut r.unclear),
            (&self.added_wrong, |r| &mut r.wrong),
            (&self.added_minor_wrong, |r| &mut r.minor_wrong),
        ];
        for (map, field) in additions {
            for (id, classes) in map {
                field(lookup(&mut records, id)?).extend(classes.iter().copied());
            }
        }
        for id in &self.newly_problematic {
            lookup(&mut records, id)?.problematic = true;
        }
        for id in &self.cleared_problematic {
            lookup(&mut records, id)?.problematic = false;
        }
        for (id, notes) in &self.notes {
            lookup(&mut records, id)?.notes = notes.clone();
        }
        AnnotationSet::from_records(
            self.new_version.clone(),
            self.class_count,
            records.into_values(),
        )
    }
}

/// Computes the delta turning `old` into `new`. Both must cover the same ids.
pub fn diff_versions(old: &AnnotationSet, new: &AnnotationSet) -> Result<VersionDiff> {
    let only_old: Vec<&String> = old
        .records
        .keys()
        .filter(|k| !new.records.contains_key(*k))
        .collect();
    let only_new: Vec<&String> = new
        .records
        .keys()
        .filter(|k| !old.records.contains_key(*k))
        .collect();
    if !only_old.is_empty() || !only_new.is_empty() {
        let first = only_old
            .first()
            .or(only_new.first())
            .map(|s| s.to_string())
            .unwrap_or_default();
        return Err(Error::KeySetMismatch {
            only_old: only_old.len(),
            only_new: only_new.len(),
            first,
        });
    }

    let mut diff = VersionDiff {
        old_version: old.version.clone(),
        new_version: new.version.clone(),
        class_count: new.class_count,
        ..VersionDiff::default()
    };
    fn delta(
        id: &str,
        before: &LabelSet,
        after: &LabelSet,
        added: &mut BTreeMap<String, LabelSet>,
        removed: &mut BTreeMap<String, LabelSet>,
    ) {
        let plus: LabelSet = after.difference(before).copied().collect();
        let minus: LabelSet = before.difference(after).copied().collect();
        if !plus.is_empty() {
            added.insert(id.to_owned(), plus);
        }
        if !minus.is_empty() {
            removed.insert(id.to_owned(), minus);
        }
    }
    for (id, a) in &old.records {
        let b = &new.records[id];
        delta(id, &a.correct, &b.correct, &mut diff.added_correct, &mut diff.removed_correct);
        delta(id, &a.unclear, &b.unclear, &mut diff.added_unclear, &mut diff.removed_unclear);
        delta(id, &a.wrong, &b.wrong, &mut diff.added_wrong, &mut diff.removed_wrong);
        delta(
            id,
            &a.minor_wrong,
            &b.minor_wrong,
            &mut diff.added_minor_wrong,
            &mut diff.removed_minor_wrong,
        );
        match (a.problematic, b.problematic) {
            (false, true) => {
                diff.newly_problematic.insert(id.clone());
            }
            (true, false) => {
                diff.cleared_problematic.insert(id.clone());
            }
            _ => {}
        }
        if a.notes != b.notes {
            diff.notes.insert(id.clone(), b.notes.clone());
        }
    }
    Ok(diff)
}
