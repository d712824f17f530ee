//! Novel-prediction triage and panel adjudication.
//!
//! A [`ReviewItem`] is keyed by `(image_id, predicted_class)`. Panelists vote
//! in rounds; a complete first round that is not unanimous moves the item
//! to [`ItemStatus::AwaitingDiscussion`] and opens a second round in which
//! every panelist locks a final vote. The plurality of the latest complete
//! round wins, and a tie for the top count yields `Unclear`.
//!
//! Category and severity are supplied once, at finalization, by the session
//! lead.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::evaluator::{verdict_for, PredictionRow, Verdict};
use crate::{jsonl, AnnotationSet, ClassId, CollapseMapping, Error, LabelSet, Result};

/// Default number of voting rounds (initial vote, post-discussion vote).
pub const DEFAULT_MAX_ROUNDS: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReviewVerdict {
    Correct,
    Wrong,
    Unclear,
    Problematic,
}

impl ReviewVerdict {
    pub const ALL: [ReviewVerdict; 4] = [
        ReviewVerdict::Correct,
        ReviewVerdict::Wrong,
        ReviewVerdict::Unclear,
        ReviewVerdict::Problematic,
    ];
}

impl std::str::FromStr for ReviewVerdict {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "correct" => Ok(ReviewVerdict::Correct),
            "wrong" => Ok(ReviewVerdict::Wrong),
            "unclear" => Ok(ReviewVerdict::Unclear),
            "problematic" => Ok(ReviewVerdict::Problematic),
            other => Err(Error::InvalidVote(format!("unknown verdict {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MistakeCategory {
    FineGrained,
    /// Fine-grained confusion with an object outside the label vocabulary.
    FineGrainedOov,
    Spurious,
    NonPrototypical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Major,
    Minor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemStatus {
    Open,
    AwaitingDiscussion,
    Finalized,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vote {
    pub reviewer_id: String,
    pub verdict: ReviewVerdict,
    pub round: u32,
    /// Milliseconds since the Unix epoch.
    #[serde(default)]
    pub timestamp: u64,
}

impl Vote {
    pub fn new(reviewer_id: impl Into<String>, verdict: ReviewVerdict, round: u32) -> Self {
        Vote {
            reviewer_id: reviewer_id.into(),
            verdict,
            round,
            timestamp: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Aggregate {
    pub verdict: ReviewVerdict,
    pub needs_discussion: bool,
}

/// Combines one complete round of votes.
///
/// The verdict is the strict plurality; any tie for the top count gives
/// `Unclear`. Discussion is needed when a first-round vote is split.
pub fn aggregate_votes(votes: &[Vote], panel_size: usize) -> Result<Aggregate> {
    aggregate_votes_with(votes, panel_size, DEFAULT_MAX_ROUNDS)
}

/// [`aggregate_votes`] for a session allowing `max_rounds` rounds: a split
/// vote asks for discussion in every round before the last.
pub fn aggregate_votes_with(votes: &[Vote], panel_size: usize, max_rounds: u32) -> Result<Aggregate> {
    if votes.len() != panel_size || panel_size == 0 {
        return Err(Error::InvalidVote(format!(
            "{} vote(s) for a panel of {panel_size}",
            votes.len()
        )));
    }
    let mut reviewers = BTreeSet::new();
    for v in votes {
        if !reviewers.insert(v.reviewer_id.as_str()) {
            return Err(Error::InvalidVote(format!(
                "reviewer {:?} voted twice in one round",
                v.reviewer_id
            )));
        }
    }
    let round = votes[0].round;
    if votes.iter().any(|v| v.round != round) {
        return Err(Error::InvalidVote("votes span more than one round".into()));
    }

    let mut counts: BTreeMap<ReviewVerdict, usize> = BTreeMap::new();
    for v in votes {
        *counts.entry(v.verdict).or_default() += 1;
    }
    let top = counts.values().copied().max().unwrap_or(0);
    let leaders: Vec<ReviewVerdict> = counts
        .iter()
        .filter(|(_, &c)| c == top)
        .map(|(&v, _)| v)
        .collect();
    let verdict = if leaders.len() == 1 {
        leaders[0]
    } else {
        ReviewVerdict::Unclear
    };
    let unanimous = counts.len() == 1;
    Ok(Aggregate {
        verdict,
        needs_discussion: !unanimous && round < max_rounds,
    })
}

/// A novel prediction under panel review.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub image_id: String,
    pub predicted_class: ClassId,
    /// Highest top-1 score among the models making this prediction.
    pub score: f64,
    pub ground_truth: LabelSet,
    pub prior_wrong: LabelSet,
    #[serde(default)]
    pub model_ids: Vec<String>,
    pub status: ItemStatus,
    #[serde(default = "first_round")]
    pub round: u32,
    /// Latest vote per reviewer.
    #[serde(default)]
    pub votes: BTreeMap<String, Vote>,
}

fn first_round() -> u32 {
    1
}

impl ReviewItem {
    pub fn key(&self) -> (&str, ClassId) {
        (&self.image_id, self.predicted_class)
    }

    /// Votes cast in the current round.
    pub fn current_votes(&self) -> Vec<Vote> {
        self.votes
            .values()
            .filter(|v| v.round == self.round)
            .cloned()
            .collect()
    }

    pub fn round_complete(&self, panel: &[String]) -> bool {
        panel
            .iter()
            .all(|r| self.votes.get(r).is_some_and(|v| v.round == self.round))
    }

    /// Whether `reviewer` still owes a vote on this item.
    pub fn awaits(&self, reviewer: &str) -> bool {
        self.status != ItemStatus::Finalized
            && !self.votes.get(reviewer).is_some_and(|v| v.round == self.round)
    }

    /// Aggregate of the current round, once every panelist has voted in it.
    pub fn tally(&self, panel: &[String], max_rounds: u32) -> Option<Aggregate> {
        if !self.round_complete(panel) {
            return None;
        }
        aggregate_votes_with(&self.current_votes(), panel.len(), max_rounds).ok()
    }

    /// The verdict the panel has locked in, if voting is finished.
    pub fn ready_verdict(&self, panel: &[String], max_rounds: u32) -> Option<ReviewVerdict> {
        self.tally(panel, max_rounds)
            .filter(|a| !a.needs_discussion)
            .map(|a| a.verdict)
    }

    /// Records a vote (last write wins per reviewer and round) and advances
    /// the item to discussion when a complete round is split.
    pub fn cast_vote(&mut self, vote: Vote, panel: &[String], max_rounds: u32) -> Result<Option<Aggregate>> {
        if self.status == ItemStatus::Finalized {
            return Err(Error::AlreadyFinalized {
                image_id: self.image_id.clone(),
                class: self.predicted_class,
            });
        }
        if !panel.contains(&vote.reviewer_id) {
            return Err(Error::InvalidVote(format!(
                "{:?} is not on the panel",
                vote.reviewer_id
            )));
        }
        if vote.round != self.round {
            return Err(Error::InvalidVote(format!(
                "round {} is not open (current round {})",
                vote.round, self.round
            )));
        }
        self.votes.insert(vote.reviewer_id.clone(), vote);
        let tally = self.tally(panel, max_rounds);
        if let Some(agg) = tally {
            if agg.needs_discussion {
                self.status = ItemStatus::AwaitingDiscussion;
                self.round += 1;
            }
        }
        Ok(tally)
    }
}

/// A finalized panel outcome; the `reviews.jsonl` row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewDecision {
    pub image_id: String,
    pub predicted_class: ClassId,
    pub verdict: ReviewVerdict,
    pub category: Option<MistakeCategory>,
    pub severity: Option<Severity>,
    pub panel_size: u32,
}

impl ReviewDecision {
    pub fn validate(&self) -> Result<()> {
        if self.panel_size == 0 {
            return Err(Error::InvalidDecision("panel size must be at least 1".into()));
        }
        let labelled = (self.category.is_some(), self.severity.is_some());
        match (self.verdict, labelled) {
            (ReviewVerdict::Wrong, (true, true)) => Ok(()),
            (ReviewVerdict::Wrong, _) => Err(Error::InvalidDecision(
                "a wrong verdict needs both category and severity".into(),
            )),
            (_, (false, false)) => Ok(()),
            (v, _) => Err(Error::InvalidDecision(format!(
                "category/severity only apply to wrong verdicts, got {v:?}"
            ))),
        }
    }
}

/// A categorized mistake of one model.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MistakeRecord {
    pub image_id: String,
    pub model_id: String,
    pub predicted_class: ClassId,
    pub category: MistakeCategory,
    pub severity: Severity,
    pub dataset_tag: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Finalized {
    pub decision: ReviewDecision,
    pub mistake: Option<MistakeRecord>,
}

/// Closes review of `item` with the lead's verdict and, for wrong verdicts,
/// the mistake category and severity.
pub fn finalize_item(
    item: &mut ReviewItem,
    verdict: ReviewVerdict,
    category: Option<MistakeCategory>,
    severity: Option<Severity>,
    panel_size: u32,
    dataset_tag: &str,
) -> Result<Finalized> {
    if item.status == ItemStatus::Finalized {
        return Err(Error::AlreadyFinalized {
            image_id: item.image_id.clone(),
            class: item.predicted_class,
        });
    }
    let decision = ReviewDecision {
        image_id: item.image_id.clone(),
        predicted_class: item.predicted_class,
        verdict,
        category,
        severity,
        panel_size,
    };
    decision.validate()?;
    let mistake = match (verdict, category, severity) {
        (ReviewVerdict::Wrong, Some(category), Some(severity)) => Some(MistakeRecord {
            image_id: item.image_id.clone(),
            model_id: item.model_ids.first().cloned().unwrap_or_default(),
            predicted_class: item.predicted_class,
            category,
            severity,
            dataset_tag: dataset_tag.to_owned(),
        }),
        _ => None,
    };
    item.status = ItemStatus::Finalized;
    Ok(Finalized { decision, mistake })
}

/// Open review items for every prediction not covered by an adjudicated
/// set, deduplicated across models by `(image_id, class)`.
///
/// Rows whose image has no annotation record are skipped.
pub fn find_novel_predictions(
    preds: &[PredictionRow],
    anns: &AnnotationSet,
    mapping: &CollapseMapping,
) -> Result<Vec<ReviewItem>> {
    let mut seen: BTreeSet<(&str, &str)> = BTreeSet::new();
    let mut items: BTreeMap<(String, ClassId), ReviewItem> = BTreeMap::new();
    for row in preds {
        if !seen.insert((&row.model_id, &row.image_id)) {
            return Err(Error::DuplicatePrediction {
                image_id: row.image_id.clone(),
                model_id: row.model_id.clone(),
            });
        }
        let Some(record) = anns.get(&row.image_id) else {
            continue;
        };
        if verdict_for(row.label, record, mapping) != Verdict::Novel {
            continue;
        }
        let item = items
            .entry((row.image_id.clone(), row.label))
            .or_insert_with(|| ReviewItem {
                image_id: row.image_id.clone(),
                predicted_class: row.label,
                score: row.score,
                ground_truth: record.correct.clone(),
                prior_wrong: record.wrong.clone(),
                model_ids: Vec::new(),
                status: ItemStatus::Open,
                round: 1,
                votes: BTreeMap::new(),
            });
        item.score = item.score.max(row.score);
        item.model_ids.push(row.model_id.clone());
    }
    Ok(items
        .into_values()
        .map(|mut item| {
            item.model_ids.sort();
            item
        })
        .collect())
}

/// Expands a mistake ledger to every model whose top-1 prediction hits an
/// adjudicated `(image, class)`.
///
/// Severity and category belong to the prediction, not the model that first
/// surfaced it, so all models predicting the same class share the record.
pub fn attribute_mistakes(
    ledger: &[MistakeRecord],
    preds: &[PredictionRow],
) -> BTreeMap<String, Vec<MistakeRecord>> {
    let by_key: BTreeMap<(&str, ClassId), &MistakeRecord> = ledger
        .iter()
        .map(|m| ((m.image_id.as_str(), m.predicted_class), m))
        .collect();
    let mut out: BTreeMap<String, Vec<MistakeRecord>> = BTreeMap::new();
    for row in preds {
        out.entry(row.model_id.clone()).or_default();
        if let Some(m) = by_key.get(&(row.image_id.as_str(), row.label)) {
            out.get_mut(&row.model_id).expect("seeded").push(MistakeRecord {
                model_id: row.model_id.clone(),
                ..(*m).clone()
            });
        }
    }
    for list in out.values_mut() {
        list.sort();
    }
    out
}

pub fn load_items(path: &Path) -> Result<Vec<ReviewItem>> {
    jsonl::read(path)
}

pub fn save_items(path: &Path, items: &[ReviewItem]) -> Result<()> {
    jsonl::write(path, items)
}

pub fn load_decisions(path: &Path) -> Result<Vec<ReviewDecision>> {
    let decisions: Vec<ReviewDecision> = jsonl::read(path)?;
    for d in &decisions {
        d.validate()?;
    }
    Ok(decisions)
}

pub fn save_decisions(path: &Path, decisions: &[ReviewDecision]) -> Result<()> {
    jsonl::write(path, decisions)
}

pub fn load_mistakes(path: &Path) -> Result<Vec<MistakeRecord>> {
    jsonl::read(path)
}

pub fn save_mistakes(path: &Path, mistakes: &[MistakeRecord]) -> Result<()> {
    jsonl::write(path, mistakes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{labels, AnnotationRecord};
    use ReviewVerdict::*;

    fn votes(verdicts: &[ReviewVerdict], round: u32) -> Vec<Vote> {
        verdicts
            .iter()
            .enumerate()
            .map(|(i, &v)| Vote::new(format!("r{i}"), v, round))
            .collect()
    }

    fn panel(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("r{i}")).collect()
    }

    #[test]
    fn aggregation_examples() {
        let a = aggregate_votes(&votes(&[Correct, Correct, Correct, Wrong, Wrong], 1), 5).unwrap();
        assert_eq!(a, Aggregate { verdict: Correct, needs_discussion: true });
        let a = aggregate_votes(&votes(&[Correct, Correct, Wrong, Wrong, Unclear], 1), 5).unwrap();
        assert_eq!(a, Aggregate { verdict: Unclear, needs_discussion: true });
        let a = aggregate_votes(&votes(&[Problematic; 5], 1), 5).unwrap();
        assert_eq!(a, Aggregate { verdict: Problematic, needs_discussion: false });
        let a = aggregate_votes(&votes(&[Correct, Correct, Correct, Wrong, Wrong], 2), 5).unwrap();
        assert!(!a.needs_discussion);
    }

    #[test]
    fn aggregation_errors() {
        assert!(aggregate_votes(&votes(&[Correct; 4], 1), 5).is_err());
        let mut v = votes(&[Correct; 5], 1);
        v[4].reviewer_id = "r0".into();
        assert!(aggregate_votes(&v, 5).is_err());
        let mut v = votes(&[Correct; 5], 1);
        v[4].round = 2;
        assert!(aggregate_votes(&v, 5).is_err());
    }

    fn item() -> ReviewItem {
        ReviewItem {
            image_id: "a".into(),
            predicted_class: ClassId(7),
            score: 0.4,
            ground_truth: labels([1]),
            prior_wrong: labels([]),
            model_ids: vec!["m2".into(), "m1".into()],
            status: ItemStatus::Open,
            round: 1,
            votes: BTreeMap::new(),
        }
    }

    #[test]
    fn split_round_opens_discussion() {
        let p = panel(5);
        let mut it = item();
        for v in votes(&[Correct, Correct, Correct, Wrong], 1) {
            assert_eq!(it.cast_vote(v, &p, 2).unwrap(), None);
        }
        let agg = it.cast_vote(Vote::new("r4", Wrong, 1), &p, 2).unwrap().unwrap();
        assert!(agg.needs_discussion);
        assert_eq!(it.status, ItemStatus::AwaitingDiscussion);
        assert_eq!(it.round, 2);
        assert_eq!(it.ready_verdict(&p, 2), None);
        assert!(it.awaits("r0"));

        // stale round rejected
        assert!(it.cast_vote(Vote::new("r0", Wrong, 1), &p, 2).is_err());
        for v in votes(&[Wrong, Wrong, Wrong, Wrong, Correct], 2) {
            it.cast_vote(v, &p, 2).unwrap();
        }
        assert_eq!(it.ready_verdict(&p, 2), Some(Wrong));
    }

    #[test]
    fn unanimous_round_is_ready() {
        let p = panel(3);
        let mut it = item();
        for v in votes(&[Correct; 3], 1) {
            it.cast_vote(v, &p, 2).unwrap();
        }
        assert_eq!(it.status, ItemStatus::Open);
        assert_eq!(it.ready_verdict(&p, 2), Some(Correct));
        assert!(it.cast_vote(Vote::new("stranger", Correct, 1), &p, 2).is_err());
    }

    #[test]
    fn finalization() {
        let mut it = item();
        let f = finalize_item(&mut it, Correct, None, None, 5, "imagenet").unwrap();
        assert_eq!(f.decision.category, None);
        assert!(f.mistake.is_none());
        assert_eq!(it.status, ItemStatus::Finalized);
        assert!(matches!(
            finalize_item(&mut it, Correct, None, None, 5, "imagenet"),
            Err(Error::AlreadyFinalized { .. })
        ));
        assert!(it.cast_vote(Vote::new("r0", Wrong, 1), &panel(5), 2).is_err());

        let mut it = item();
        let f = finalize_item(
            &mut it,
            Wrong,
            Some(MistakeCategory::Spurious),
            Some(Severity::Major),
            5,
            "imagenet",
        )
        .unwrap();
        let m = f.mistake.unwrap();
        assert_eq!((m.category, m.severity), (MistakeCategory::Spurious, Severity::Major));
        assert_eq!(m.model_id, "m2");

        let mut it = item();
        assert!(matches!(
            finalize_item(&mut it, Wrong, Some(MistakeCategory::Spurious), None, 5, "x"),
            Err(Error::InvalidDecision(_))
        ));
        assert_eq!(it.status, ItemStatus::Open);
        assert!(finalize_item(&mut it, Correct, None, Some(Severity::Minor), 5, "x").is_err());
    }

    #[test]
    fn novel_detection_dedups() {
        let mut r = AnnotationRecord::new("a");
        r.correct = labels([250]);
        r.wrong = labels([3]);
        let anns = AnnotationSet::from_records("v1", 1000, [r]).unwrap();
        let m = CollapseMapping::imagenet();
        let preds = vec![
            PredictionRow::new("a", "m1", 7, 0.3),
            PredictionRow::new("a", "m2", 7, 0.6),
            PredictionRow::new("a", "m3", 3, 0.9),
            PredictionRow::new("a", "m4", 248, 0.9),
            PredictionRow::new("unlabelled", "m1", 7, 0.9),
        ];
        let items = find_novel_predictions(&preds, &anns, &m).unwrap();
        assert_eq!(items.len(), 1);
        assert_eq!(items[0].predicted_class, ClassId(7));
        assert_eq!(items[0].score, 0.6);
        assert_eq!(items[0].model_ids, vec!["m1".to_string(), "m2".into()]);
        assert_eq!(items[0].prior_wrong, labels([3]));

        let dup = vec![preds[0].clone(), preds[0].clone()];
        assert!(find_novel_predictions(&dup, &anns, &m).is_err());
    }

    #[test]
    fn attribution_shares_records() {
        let ledger = vec![MistakeRecord {
            image_id: "a".into(),
            model_id: "m1".into(),
            predicted_class: ClassId(7),
            category: MistakeCategory::FineGrained,
            severity: Severity::Major,
            dataset_tag: "v1".into(),
        }];
        let preds = vec![
            PredictionRow::new("a", "m1", 7, 0.3),
            PredictionRow::new("a", "m2", 7, 0.6),
            PredictionRow::new("a", "m3", 8, 0.6),
        ];
        let by_model = attribute_mistakes(&ledger, &preds);
        assert_eq!(by_model["m2"][0].model_id, "m2");
        assert!(by_model["m3"].is_empty());
    }

    #[test]
    fn decision_wire_format() {
        let d = ReviewDecision {
            image_id: "a".into(),
            predicted_class: ClassId(3),
            verdict: Wrong,
            category: Some(MistakeCategory::FineGrainedOov),
            severity: Some(Severity::Minor),
            panel_size: 5,
        };
        assert_eq!(
            serde_json::to_string(&d).unwrap(),
            r#"{"image_id":"a","predicted_class":3,"verdict":"wrong","category":"fine_grained_oov","severity":"minor","panel_size":5}"#
        );
    }
}
