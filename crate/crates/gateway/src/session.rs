//! Review session state and its append-only event log.
//!
//! Every mutation is staged against the current state, appended to the log,
//! and only then committed, so replaying the log rebuilds the same state.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use labelshed::annotations::{merge_review_outcomes, next_version, save_annotations, MergeOptions};
use labelshed::triage::{
    finalize_item, save_decisions, save_mistakes, Aggregate, Finalized, ItemStatus, MistakeCategory, MistakeRecord,
    ReviewDecision, ReviewItem, ReviewVerdict, Severity, Vote,
};
use labelshed::{AnnotationSet, ClassId};

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("unknown item {0}")]
    UnknownItem(String),
    #[error("unknown session {0:?}")]
    UnknownSession(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    NotFound(String),
    #[error(transparent)]
    Core(#[from] labelshed::Error),
    #[error("vote log {path}: {source}")]
    Log {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// One line of `votes.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogEvent {
    Vote {
        item: usize,
        image_id: String,
        predicted_class: ClassId,
        #[serde(flatten)]
        vote: Vote,
    },
    Finalize {
        item: usize,
        image_id: String,
        predicted_class: ClassId,
        verdict: ReviewVerdict,
        category: Option<MistakeCategory>,
        severity: Option<Severity>,
    },
}

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub session_id: String,
    pub panel: Vec<String>,
    pub max_rounds: u32,
    pub dataset_tag: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionState {
    pub session_id: String,
    pub panel: Vec<String>,
    pub max_rounds: u32,
    pub dataset_tag: String,
    pub queue: Vec<ReviewItem>,
    /// Per reviewer, the first queue position still awaiting their vote;
    /// `queue.len()` once they are done.
    pub cursors: BTreeMap<String, usize>,
    /// Annotations with every finalized decision merged in.
    pub annotations: AnnotationSet,
    pub decisions: Vec<ReviewDecision>,
    pub mistakes: Vec<MistakeRecord>,
}

/// A validated mutation waiting to be logged and committed.
pub struct Staged {
    pub event: LogEvent,
    index: usize,
    item: ReviewItem,
    pub aggregate: Option<Aggregate>,
    finalized: Option<(Finalized, AnnotationSet)>,
}

impl SessionState {
    pub fn new(config: SessionConfig, annotations: AnnotationSet, queue: Vec<ReviewItem>) -> Result<Self, SessionError> {
        if config.panel.is_empty() {
            return Err(SessionError::BadRequest("panel must have at least one reviewer".into()));
        }
        let unique: BTreeSet<&String> = config.panel.iter().collect();
        if unique.len() != config.panel.len() {
            return Err(SessionError::BadRequest("panel lists a reviewer twice".into()));
        }
        if config.max_rounds == 0 {
            return Err(SessionError::BadRequest("max rounds must be at least 1".into()));
        }
        let mut keys = BTreeSet::new();
        for item in &queue {
            if !annotations.contains(&item.image_id) {
                return Err(labelshed::Error::UnknownImage(item.image_id.clone()).into());
            }
            if !keys.insert(item.key()) {
                return Err(SessionError::BadRequest(format!(
                    "item ({}, {}) queued twice",
                    item.image_id, item.predicted_class
                )));
            }
        }
        let version = next_version(annotations.version());
        let mut state = SessionState {
            session_id: config.session_id,
            panel: config.panel,
            max_rounds: config.max_rounds,
            dataset_tag: config.dataset_tag,
            queue,
            cursors: BTreeMap::new(),
            annotations: annotations.with_version(version),
            decisions: Vec::new(),
            mistakes: Vec::new(),
        };
        state.refresh_cursors();
        Ok(state)
    }

    fn refresh_cursors(&mut self) {
        for reviewer in &self.panel {
            let pos = self
                .queue
                .iter()
                .position(|item| item.awaits(reviewer))
                .unwrap_or(self.queue.len());
            self.cursors.insert(reviewer.clone(), pos);
        }
    }

    pub fn item(&self, index: usize) -> Result<&ReviewItem, SessionError> {
        self.queue
            .get(index)
            .ok_or_else(|| SessionError::UnknownItem(index.to_string()))
    }

    /// Next item owed by `reviewer`, if any.
    pub fn next_for(&self, reviewer: &str) -> Result<Option<usize>, SessionError> {
        let cursor = *self
            .cursors
            .get(reviewer)
            .ok_or_else(|| SessionError::BadRequest(format!("{reviewer:?} is not on the panel")))?;
        Ok((cursor < self.queue.len()).then_some(cursor))
    }

    /// The highest round open on any unfinalized item.
    pub fn round(&self) -> u32 {
        self.queue
            .iter()
            .filter(|i| i.status != ItemStatus::Finalized)
            .map(|i| i.round)
            .max()
            .unwrap_or(1)
    }

    pub fn tally(&self, item: &ReviewItem) -> Option<Aggregate> {
        item.tally(&self.panel, self.max_rounds)
    }

    pub fn stage_vote(
        &self,
        index: usize,
        reviewer: &str,
        verdict: ReviewVerdict,
        round: u32,
        timestamp: u64,
    ) -> Result<Staged, SessionError> {
        let item = self.item(index)?;
        let vote = Vote {
            reviewer_id: reviewer.to_owned(),
            verdict,
            round,
            timestamp,
        };
        self.stage(LogEvent::Vote {
            item: index,
            image_id: item.image_id.clone(),
            predicted_class: item.predicted_class,
            vote,
        })
    }

    pub fn stage_finalize(
        &self,
        index: usize,
        verdict: Option<ReviewVerdict>,
        category: Option<MistakeCategory>,
        severity: Option<Severity>,
    ) -> Result<Staged, SessionError> {
        let item = self.item(index)?;
        if item.status == ItemStatus::Finalized {
            return Err(labelshed::Error::AlreadyFinalized {
                image_id: item.image_id.clone(),
                class: item.predicted_class,
            }
            .into());
        }
        let ready = item
            .ready_verdict(&self.panel, self.max_rounds)
            .ok_or_else(|| SessionError::Conflict(format!("item {index} still has voting rounds to complete")))?;
        self.stage(LogEvent::Finalize {
            item: index,
            image_id: item.image_id.clone(),
            predicted_class: item.predicted_class,
            verdict: verdict.unwrap_or(ready),
            category,
            severity,
        })
    }

    /// Validates `event` against the current state without changing it.
    pub fn stage(&self, event: LogEvent) -> Result<Staged, SessionError> {
        let (index, image_id, class) = match &event {
            LogEvent::Vote {
                item,
                image_id,
                predicted_class,
                ..
            }
            | LogEvent::Finalize {
                item,
                image_id,
                predicted_class,
                ..
            } => (*item, image_id, *predicted_class),
        };
        let mut item = self.item(index)?.clone();
        if item.image_id != *image_id || item.predicted_class != class {
            return Err(SessionError::BadRequest(format!(
                "event for ({image_id}, {class}) does not match queue item {index}"
            )));
        }
        match &event {
            LogEvent::Vote { vote, .. } => {
                let aggregate = item.cast_vote(vote.clone(), &self.panel, self.max_rounds)?;
                Ok(Staged {
                    event,
                    index,
                    item,
                    aggregate,
                    finalized: None,
                })
            }
            LogEvent::Finalize {
                verdict,
                category,
                severity,
                ..
            } => {
                let ready = item
                    .ready_verdict(&self.panel, self.max_rounds)
                    .ok_or_else(|| SessionError::Conflict(format!("item {index} still has voting rounds to complete")))?;
                if *verdict != ready {
                    return Err(SessionError::BadRequest(format!(
                        "verdict {verdict:?} differs from the panel outcome {ready:?}"
                    )));
                }
                let aggregate = self.tally(&item);
                let done = finalize_item(
                    &mut item,
                    *verdict,
                    *category,
                    *severity,
                    self.panel.len() as u32,
                    &self.dataset_tag,
                )?;
                let options = MergeOptions {
                    allow_override: false,
                    version: Some(self.annotations.version().to_owned()),
                };
                let merged = merge_review_outcomes(&self.annotations, std::slice::from_ref(&done.decision), &options)?;
                Ok(Staged {
                    event,
                    index,
                    item,
                    aggregate,
                    finalized: Some((done, merged)),
                })
            }
        }
    }

    pub fn commit(&mut self, staged: Staged) {
        self.queue[staged.index] = staged.item;
        if let Some((done, merged)) = staged.finalized {
            self.decisions.push(done.decision);
            self.mistakes.extend(done.mistake);
            self.annotations = merged;
        }
        self.refresh_cursors();
    }

    /// Writes `reviews.jsonl`, `mistakes.jsonl` and the merged annotation
    /// snapshot (`annotations.jsonl` plus `meta.json`) into `dir`.
    pub fn export(&self, dir: &Path) -> labelshed::Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| labelshed::Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
        save_decisions(&dir.join("reviews.jsonl"), &self.decisions)?;
        save_mistakes(&dir.join("mistakes.jsonl"), &self.mistakes)?;
        save_annotations(&self.annotations, &dir.join("annotations.jsonl"))
    }

    pub fn verdict_counts(&self) -> BTreeMap<ReviewVerdict, usize> {
        let mut counts: BTreeMap<ReviewVerdict, usize> = ReviewVerdict::ALL.iter().map(|&v| (v, 0)).collect();
        for d in &self.decisions {
            *counts.entry(d.verdict).or_default() += 1;
        }
        counts
    }
}

pub fn read_log(path: &Path) -> Result<Vec<LogEvent>, SessionError> {
    let log_err = |source| SessionError::Log {
        path: path.to_path_buf(),
        source,
    };
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(log_err(e)),
    };
    let mut events = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(log_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let event = serde_json::from_str(&line).map_err(|e| {
            log_err(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("line {}: {e}", i + 1),
            ))
        })?;
        events.push(event);
    }
    Ok(events)
}

/// A session backed by its vote log, with optional exports after each
/// finalization.
pub struct Session {
    pub state: SessionState,
    log: File,
    log_path: PathBuf,
    out_dir: Option<PathBuf>,
}

impl Session {
    /// Builds the state, replays any existing log, and opens the log for
    /// appending.
    pub fn open(
        config: SessionConfig,
        annotations: AnnotationSet,
        queue: Vec<ReviewItem>,
        log_path: &Path,
        out_dir: Option<PathBuf>,
    ) -> Result<Self, SessionError> {
        let state = replay(SessionState::new(config, annotations, queue)?, &read_log(log_path)?)?;
        if let Some(parent) = log_path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|source| SessionError::Log {
                path: log_path.to_path_buf(),
                source,
            })?;
        }
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(log_path)
            .map_err(|source| SessionError::Log {
                path: log_path.to_path_buf(),
                source,
            })?;
        Ok(Session {
            state,
            log,
            log_path: log_path.to_path_buf(),
            out_dir,
        })
    }

    /// Appends the staged event to the log, then commits it.
    pub fn apply(&mut self, staged: Staged) -> Result<Option<Aggregate>, SessionError> {
        let mut line = serde_json::to_string(&staged.event).expect("log events serialize");
        line.push('\n');
        let log_err = |source| SessionError::Log {
            path: self.log_path.clone(),
            source,
        };
        self.log.write_all(line.as_bytes()).map_err(log_err)?;
        self.log.sync_data().map_err(log_err)?;
        let finalized = staged.finalized.is_some();
        let aggregate = staged.aggregate;
        self.state.commit(staged);
        if finalized {
            if let Some(dir) = &self.out_dir {
                self.state.export(dir)?;
            }
        }
        Ok(aggregate)
    }
}

/// Applies logged events in order.
pub fn replay(mut state: SessionState, events: &[LogEvent]) -> Result<SessionState, SessionError> {
    for event in events {
        let staged = state.stage(event.clone())?;
        state.commit(staged);
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use labelshed::{labels, AnnotationRecord};

    fn fixture() -> (SessionConfig, AnnotationSet, Vec<ReviewItem>) {
        let anns = AnnotationSet::from_records(
            "v1",
            10,
            (0..2).map(|i| {
                let mut r = AnnotationRecord::new(format!("img{i}"));
                r.correct = labels([0]);
                r
            }),
        )
        .unwrap();
        let items = (0..2)
            .map(|i| ReviewItem {
                image_id: format!("img{i}"),
                predicted_class: ClassId(3),
                score: 0.5,
                ground_truth: labels([0]),
                prior_wrong: Default::default(),
                model_ids: vec!["m".into()],
                status: ItemStatus::Open,
                round: 1,
                votes: BTreeMap::new(),
            })
            .collect();
        let config = SessionConfig {
            session_id: "s".into(),
            panel: vec!["a".into(), "b".into()],
            max_rounds: 2,
            dataset_tag: "t".into(),
        };
        (config, anns, items)
    }

    #[test]
    fn cursors_follow_votes() {
        let (config, anns, items) = fixture();
        let mut s = SessionState::new(config, anns, items).unwrap();
        assert_eq!(s.next_for("a").unwrap(), Some(0));
        let staged = s.stage_vote(0, "a", ReviewVerdict::Correct, 1, 0).unwrap();
        s.commit(staged);
        assert_eq!(s.next_for("a").unwrap(), Some(1));
        assert_eq!(s.next_for("b").unwrap(), Some(0));
        assert!(s.next_for("zed").is_err());
    }

    #[test]
    fn staging_leaves_state_untouched() {
        let (config, anns, items) = fixture();
        let s = SessionState::new(config, anns, items).unwrap();
        let before = s.clone();
        s.stage_vote(0, "a", ReviewVerdict::Correct, 1, 0).unwrap();
        assert!(s.stage_vote(0, "a", ReviewVerdict::Correct, 2, 0).is_err());
        assert!(s.stage_finalize(0, None, None, None).is_err());
        assert_eq!(s, before);
    }

    #[test]
    fn log_events_round_trip() {
        let event = LogEvent::Vote {
            item: 1,
            image_id: "img1".into(),
            predicted_class: ClassId(3),
            vote: Vote::new("a", ReviewVerdict::Wrong, 1),
        };
        let text = serde_json::to_string(&event).unwrap();
        assert!(text.starts_with(r#"{"event":"vote","item":1,"#), "{text}");
        assert_eq!(serde_json::from_str::<LogEvent>(&text).unwrap(), event);
    }
}
