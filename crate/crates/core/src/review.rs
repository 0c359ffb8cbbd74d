//! Review queue for flagged alignments, persisted as an append-only event
//! log (`review/events.ndjson` in the run directory) and rebuilt by replay.
//!
//! Every mutation is appended and synced before the in-memory state
//! changes, so a crash never loses an acknowledged decision. A torn final
//! line left by a crash mid-write is ignored on replay.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alignment::{transition, AlignmentOutcome, AlignmentStatus, Decision, InvalidTransition, PropertyAlignment};
use crate::index::Hit;

pub const EVENT_LOG: &str = "review/events.ndjson";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub seq: u64,
    pub timestamp: String,
    pub action: String,
    pub actor: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraint: Option<String>,
    pub status: AlignmentStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub id: String,
    pub property: String,
    pub candidates: Vec<Hit>,
    pub alignment: PropertyAlignment,
    #[serde(default)]
    pub flag_reasons: Vec<String>,
    pub codec_preview: String,
    pub flagged_at: String,
    pub history: Vec<HistoryEntry>,
}

impl ReviewItem {
    pub fn status(&self) -> AlignmentStatus {
        self.alignment.status
    }

    /// All constraints submitted so far, oldest first.
    pub fn constraints(&self) -> Vec<String> {
        self.history.iter().filter_map(|h| h.constraint.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewSummary {
    pub id: String,
    pub property: String,
    pub status: AlignmentStatus,
    pub mapping_kind: crate::alignment::MappingKind,
    pub signals: Vec<String>,
    pub confidence: f64,
    pub top_similarity: Option<f64>,
    pub flagged_at: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Page<T> {
    pub items: Vec<T>,
    pub total: usize,
    pub offset: usize,
    pub limit: usize,
}

/// Snapshot of a regenerated alignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regeneration {
    pub outcome: AlignmentOutcome,
    pub codec_preview: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum Event {
    Flagged {
        seq: u64,
        timestamp: String,
        actor: String,
        outcome: AlignmentOutcome,
        codec_preview: String,
    },
    Decision {
        seq: u64,
        timestamp: String,
        id: String,
        action: Decision,
        actor: String,
    },
    Regenerated {
        seq: u64,
        timestamp: String,
        id: String,
        actor: String,
        constraint: String,
        regeneration: Regeneration,
    },
}

impl Event {
    fn seq(&self) -> u64 {
        match self {
            Event::Flagged { seq, .. } | Event::Decision { seq, .. } | Event::Regenerated { seq, .. } => *seq,
        }
    }
}

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error("unknown review item `{0}`")]
    UnknownItem(String),
    #[error(transparent)]
    InvalidTransition(#[from] InvalidTransition),
    #[error("{0}")]
    Validation(String),
    #[error("review item `{0}` already exists")]
    Duplicate(String),
    #[error("event log {path}: {message}")]
    Store { path: PathBuf, message: String },
    #[error("regeneration failed: {0}")]
    Provider(String),
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// The review queue of one run. Callers serialize mutations (one writer).
pub struct ReviewStore {
    path: PathBuf,
    file: File,
    items: BTreeMap<String, ReviewItem>,
    next_seq: u64,
}

impl ReviewStore {
    /// Open (creating if needed) the store under `run_dir` and replay it.
    pub fn open(run_dir: &Path) -> Result<ReviewStore, ReviewError> {
        let path = run_dir.join(EVENT_LOG);
        let store_err = |e: std::io::Error| ReviewError::Store {
            path: path.clone(),
            message: e.to_string(),
        };
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(store_err)?;
        }
        let mut events = Vec::new();
        let mut valid_len = 0u64;
        if path.exists() {
            let mut reader = BufReader::new(File::open(&path).map_err(store_err)?);
            let mut line = String::new();
            loop {
                line.clear();
                let n = reader.read_line(&mut line).map_err(store_err)?;
                if n == 0 || !line.ends_with('\n') {
                    break;
                }
                match serde_json::from_str::<Event>(line.trim_end()) {
                    Ok(e) => events.push(e),
                    Err(e) => {
                        return Err(ReviewError::Store {
                            path: path.clone(),
                            message: format!("corrupt event after seq {}: {e}", events.len()),
                        })
                    }
                }
                valid_len += n as u64;
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(store_err)?;
        if file.metadata().map_err(store_err)?.len() != valid_len {
            file.set_len(valid_len).map_err(store_err)?;
        }
        let mut store = ReviewStore {
            path,
            file,
            items: BTreeMap::new(),
            next_seq: 1,
        };
        for e in events {
            store.next_seq = store.next_seq.max(e.seq() + 1);
            store.apply(e);
        }
        Ok(store)
    }

    fn apply(&mut self, e: Event) {
        match e {
            Event::Flagged {
                seq,
                timestamp,
                actor,
                outcome,
                codec_preview,
            } => {
                let id = outcome.alignment.property.clone();
                self.items.insert(
                    id.clone(),
                    ReviewItem {
                        property: id.clone(),
                        id,
                        candidates: outcome.candidates,
                        history: vec![HistoryEntry {
                            seq,
                            timestamp: timestamp.clone(),
                            action: "flagged".into(),
                            actor,
                            constraint: None,
                            status: outcome.alignment.status,
                        }],
                        alignment: outcome.alignment,
                        flag_reasons: outcome.flag_reasons,
                        codec_preview,
                        flagged_at: timestamp,
                    },
                );
            }
            Event::Decision {
                seq,
                timestamp,
                id,
                action,
                actor,
            } => {
                if let Some(item) = self.items.get_mut(&id) {
                    if let Ok(next) = transition(item.alignment.status, action) {
                        item.alignment.status = next;
                        item.history.push(HistoryEntry {
                            seq,
                            timestamp,
                            action: match action {
                                Decision::Approve => "approve".into(),
                                Decision::Reject => "reject".into(),
                            },
                            actor,
                            constraint: None,
                            status: next,
                        });
                    }
                }
            }
            Event::Regenerated {
                seq,
                timestamp,
                id,
                actor,
                constraint,
                regeneration,
            } => {
                if let Some(item) = self.items.get_mut(&id) {
                    item.history.push(HistoryEntry {
                        seq,
                        timestamp,
                        action: "regenerate".into(),
                        actor,
                        constraint: Some(constraint),
                        status: regeneration.outcome.alignment.status,
                    });
                    item.alignment = regeneration.outcome.alignment;
                    item.candidates = regeneration.outcome.candidates;
                    item.flag_reasons = regeneration.outcome.flag_reasons;
                    item.codec_preview = regeneration.codec_preview;
                }
            }
        }
    }

    fn commit(&mut self, e: Event) -> Result<(), ReviewError> {
        let mut line = serde_json::to_string(&e).expect("event serializes");
        line.push('\n');
        let store_err = |err: std::io::Error| ReviewError::Store {
            path: self.path.clone(),
            message: err.to_string(),
        };
        self.file.write_all(line.as_bytes()).map_err(store_err)?;
        self.file.sync_data().map_err(store_err)?;
        self.next_seq = e.seq() + 1;
        self.apply(e);
        Ok(())
    }

    /// Enqueue flagged alignments. All items in one batch share a flag time.
    pub fn flag(&mut self, outcomes: Vec<(AlignmentOutcome, String)>, actor: &str) -> Result<(), ReviewError> {
        let timestamp = now();
        for (outcome, codec_preview) in outcomes {
            if self.items.contains_key(&outcome.alignment.property) {
                return Err(ReviewError::Duplicate(outcome.alignment.property));
            }
            let seq = self.next_seq;
            self.commit(Event::Flagged {
                seq,
                timestamp: timestamp.clone(),
                actor: actor.to_string(),
                outcome,
                codec_preview,
            })?;
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<&ReviewItem, ReviewError> {
        self.items.get(id).ok_or_else(|| ReviewError::UnknownItem(id.to_string()))
    }

    pub fn items(&self) -> impl Iterator<Item = &ReviewItem> {
        self.items.values()
    }

    /// Items ordered by flag time then property, optionally filtered.
    pub fn list(&self, status: Option<AlignmentStatus>, offset: usize, limit: usize) -> Page<ReviewSummary> {
        let mut matching: Vec<&ReviewItem> = self
            .items
            .values()
            .filter(|i| status.is_none_or(|s| i.alignment.status == s))
            .collect();
        matching.sort_by(|a, b| (&a.flagged_at, &a.property).cmp(&(&b.flagged_at, &b.property)));
        let total = matching.len();
        let items = matching
            .into_iter()
            .skip(offset)
            .take(limit)
            .map(|i| ReviewSummary {
                id: i.id.clone(),
                property: i.property.clone(),
                status: i.alignment.status,
                mapping_kind: i.alignment.mapping_kind,
                signals: i.alignment.signals.clone(),
                confidence: i.alignment.confidence,
                top_similarity: i.candidates.first().map(|h| h.similarity),
                flagged_at: i.flagged_at.clone(),
            })
            .collect();
        Page {
            items,
            total,
            offset,
            limit,
        }
    }

    pub fn decide(&mut self, id: &str, action: Decision, actor: &str) -> Result<ReviewItem, ReviewError> {
        let item = self.get(id)?;
        transition(item.alignment.status, action)?;
        let seq = self.next_seq;
        self.commit(Event::Decision {
            seq,
            timestamp: now(),
            id: id.to_string(),
            action,
            actor: actor.to_string(),
        })?;
        Ok(self.items[id].clone())
    }

    /// Recompute an alignment with an added constraint. `realign` receives
    /// every constraint submitted so far, the new one last.
    pub fn regenerate(
        &mut self,
        id: &str,
        constraint: &str,
        actor: &str,
        realign: impl FnOnce(&ReviewItem, &[String]) -> Result<Regeneration, String>,
    ) -> Result<ReviewItem, ReviewError> {
        let constraint = constraint.trim();
        if constraint.is_empty() {
            return Err(ReviewError::Validation("constraint must not be empty".into()));
        }
        let item = self.get(id)?;
        let mut constraints = item.constraints();
        constraints.push(constraint.to_string());
        let mut regeneration = realign(item, &constraints).map_err(ReviewError::Provider)?;
        if regeneration.outcome.alignment.status == AlignmentStatus::AutoAccepted && !regeneration.outcome.flag_reasons.is_empty() {
            regeneration.outcome.alignment.status = AlignmentStatus::Flagged;
        }
        let seq = self.next_seq;
        self.commit(Event::Regenerated {
            seq,
            timestamp: now(),
            id: id.to_string(),
            actor: actor.to_string(),
            constraint: constraint.to_string(),
            regeneration,
        })?;
        Ok(self.items[id].clone())
    }

    /// Latest alignment of every reviewed property.
    pub fn latest_alignments(&self) -> BTreeMap<String, PropertyAlignment> {
        self.items.iter().map(|(k, v)| (k.clone(), v.alignment.clone())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::MappingKind;

    fn outcome(name: &str) -> AlignmentOutcome {
        AlignmentOutcome {
            alignment: PropertyAlignment {
                property: name.into(),
                mapping_kind: MappingKind::Direct,
                signals: vec!["S".into()],
                value_map: None,
                enum_correspondence: None,
                unit_conversion: None,
                confidence: 0.5,
                status: AlignmentStatus::Flagged,
            },
            candidates: vec![Hit { signal: "S".into(), similarity: 0.5 }],
            flag_reasons: vec!["low similarity".into()],
        }
    }

    fn seeded(dir: &Path) -> ReviewStore {
        let mut s = ReviewStore::open(dir).unwrap();
        s.flag(["c", "a", "b"].map(|n| (outcome(n), String::new())).to_vec(), "pipeline").unwrap();
        s
    }

    #[test]
    fn list_filter_and_order() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = seeded(dir.path());
        let page = s.list(Some(AlignmentStatus::Flagged), 0, 50);
        assert_eq!(page.items.iter().map(|i| i.id.as_str()).collect::<Vec<_>>(), ["a", "b", "c"]);
        assert!(s.list(Some(AlignmentStatus::Approved), 0, 50).items.is_empty());
        let item = s.decide("b", Decision::Approve, "ana").unwrap();
        assert_eq!(item.status(), AlignmentStatus::Approved);
        assert_eq!(item.history.len(), 2);
        assert_eq!(s.list(Some(AlignmentStatus::Flagged), 0, 50).total, 2);
        assert!(matches!(s.decide("b", Decision::Approve, "ana"), Err(ReviewError::InvalidTransition(_))));
        assert!(matches!(s.decide("zz", Decision::Approve, "ana"), Err(ReviewError::UnknownItem(_))));
    }

    #[test]
    fn replay_recovers_state_and_drops_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut s = seeded(dir.path());
            s.decide("a", Decision::Reject, "ana").unwrap();
            s.regenerate("c", "mapping-kind composed", "ana", |item, c| {
                assert_eq!(c, ["mapping-kind composed"]);
                let mut o = outcome(&item.property);
                o.alignment.mapping_kind = MappingKind::Composed;
                o.alignment.signals = vec!["M".into(), "S".into()];
                Ok(Regeneration { outcome: o, codec_preview: "def read_X(frame): ...".into() })
            })
            .unwrap();
        }
        let log = dir.path().join(EVENT_LOG);
        let mut f = OpenOptions::new().append(true).open(&log).unwrap();
        f.write_all(b"{\"event\":\"decision\",\"seq\":9").unwrap();
        drop(f);
        let s = ReviewStore::open(dir.path()).unwrap();
        assert_eq!(s.get("a").unwrap().status(), AlignmentStatus::Rejected);
        let c = s.get("c").unwrap();
        assert_eq!(c.alignment.mapping_kind, MappingKind::Composed);
        assert_eq!(c.history.last().unwrap().constraint.as_deref(), Some("mapping-kind composed"));
        assert_eq!(c.history.len(), 2);
        let text = std::fs::read_to_string(&log).unwrap();
        assert!(text.ends_with('\n'));
    }

    #[test]
    fn empty_constraint_is_rejected_without_change() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = seeded(dir.path());
        let before = s.get("a").unwrap().clone();
        let r = s.regenerate("a", "  ", "ana", |_, _| unreachable!());
        assert!(matches!(r, Err(ReviewError::Validation(_))));
        assert_eq!(s.get("a").unwrap(), &before);
    }
}
