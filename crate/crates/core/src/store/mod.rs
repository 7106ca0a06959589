//! Durable service state: sessions keyed by url, cached verdicts, label
//! assignments with their count state, and the published model history.
//!
//! On disk a store is a directory holding `snapshot.txt` (a compacted,
//! checksummed image of the whole state) and `ops.log` (mutations applied
//! since that snapshot). Opening a store restores the snapshot and replays
//! the log.
//!
//! All mutations go through a single writer (`&mut Store`). Readers obtain
//! immutable [`Snapshot`]s of the current (model, counts) pair through a
//! [`SnapshotReader`], which never blocks on the writer.

mod oplog;
mod snapshot;

pub use oplog::OpLog;
pub use snapshot::{persist, restore, restore_from_str, snapshot_to_string};

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use arc_swap::ArcSwap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::Model;
use crate::corpus::{Label, QASession, SessionInvalid};
use crate::features::FeatureVector;
use crate::role::Role;
use crate::textstats::{CountState, Sign, StatsError};

pub const SNAPSHOT_FILE: &str = "snapshot.txt";
pub const LOG_FILE: &str = "ops.log";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("url `{0}` already stored with different content")]
    ConflictingContent(String),
    #[error("url `{0}` not found")]
    NotFound(String),
    #[error("role `{0}` may not perform this operation")]
    Unauthorized(Role),
    #[error("invalid session: {0}")]
    InvalidSession(#[from] SessionInvalid),
    #[error("model version {got} does not follow {last}")]
    VersionOrder { last: u64, got: u64 },
    #[error("model has non-finite coefficients")]
    NonFiniteModel,
    #[error("corrupt snapshot: {0}")]
    CorruptSnapshot(String),
    #[error("corrupt operation log: {0}")]
    CorruptLog(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Cached verdict for a url.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CachedVerdict {
    pub score: f64,
    pub label: Label,
    pub model_version: u64,
    pub features: FeatureVector,
}

/// One logged mutation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Op {
    Upsert { session: QASession },
    Label { url: String, label: Label },
    Unlabel { url: String },
    Verdict { url: String, verdict: CachedVerdict },
    Model { model: Model, consumed_labels: u64 },
}

/// Point-in-time view used for scoring.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub model: Arc<Model>,
    pub counts: Arc<CountState>,
    /// Number of label changes folded into `counts`.
    pub label_ops: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StoreState {
    sessions: HashMap<String, QASession>,
    verdicts: HashMap<String, CachedVerdict>,
    counts: Arc<CountState>,
    models: Vec<Model>,
    pending_labels: u64,
    label_ops: u64,
    /// bumped by every compaction; ties the log to the snapshot it extends
    epoch: u64,
}

impl Default for StoreState {
    fn default() -> Self {
        StoreState {
            sessions: HashMap::new(),
            verdicts: HashMap::new(),
            counts: Arc::new(CountState::new()),
            models: Vec::new(),
            pending_labels: 0,
            label_ops: 0,
            epoch: 0,
        }
    }
}

impl StoreState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn session(&self, url: &str) -> Option<&QASession> {
        self.sessions.get(url)
    }

    pub fn sessions(&self) -> impl Iterator<Item = &QASession> {
        self.sessions.values()
    }

    pub fn session_count(&self) -> usize {
        self.sessions.len()
    }

    /// Cached verdict, or `None` if the url was never scored.
    pub fn find_by_url(&self, url: &str) -> Option<&CachedVerdict> {
        self.verdicts.get(url)
    }

    pub fn verdicts(&self) -> impl Iterator<Item = (&String, &CachedVerdict)> {
        self.verdicts.iter()
    }

    pub fn counts(&self) -> &CountState {
        &self.counts
    }

    pub fn models(&self) -> &[Model] {
        &self.models
    }

    pub fn model(&self, version: u64) -> Option<&Model> {
        if version == 0 {
            return None;
        }
        self.models.iter().find(|m| m.version == version)
    }

    /// Latest published model, or the cold model if none exists.
    pub fn current_model(&self) -> Model {
        self.models.last().cloned().unwrap_or_else(Model::cold)
    }

    pub fn latest_version(&self) -> u64 {
        self.models.last().map_or(0, |m| m.version)
    }

    /// Label changes since the last published model.
    pub fn pending_labels(&self) -> u64 {
        self.pending_labels
    }

    pub fn label_ops(&self) -> u64 {
        self.label_ops
    }

    /// Labeled sessions in close-time order (ties by url).
    pub fn labeled_sessions(&self) -> Vec<QASession> {
        let mut out: Vec<QASession> = self
            .sessions
            .values()
            .filter(|s| s.label.is_some())
            .cloned()
            .collect();
        crate::corpus::sort_by_close_time(&mut out);
        out
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            model: Arc::new(self.current_model()),
            counts: Arc::clone(&self.counts),
            label_ops: self.label_ops,
        }
    }

    /// Validates `op` against the current state. `Ok(false)` means the op
    /// is a no-op.
    pub fn check(&self, op: &Op) -> Result<bool, StoreError> {
        match op {
            Op::Upsert { session } => {
                session.validate()?;
                match self.sessions.get(&session.url) {
                    None => Ok(true),
                    Some(existing) if existing.same_content(session) => Ok(false),
                    Some(_) => Err(StoreError::ConflictingContent(session.url.clone())),
                }
            }
            Op::Label { url, label } => {
                let s = self.sessions.get(url).ok_or_else(|| StoreError::NotFound(url.clone()))?;
                Ok(s.label != Some(*label))
            }
            Op::Unlabel { url } => {
                let s = self.sessions.get(url).ok_or_else(|| StoreError::NotFound(url.clone()))?;
                Ok(s.label.is_some())
            }
            Op::Verdict { url, .. } => {
                if self.sessions.contains_key(url) {
                    Ok(true)
                } else {
                    Err(StoreError::NotFound(url.clone()))
                }
            }
            Op::Model { model, .. } => {
                let last = self.latest_version();
                if model.version <= last {
                    return Err(StoreError::VersionOrder { last, got: model.version });
                }
                if !model.theta.iter().all(|t| t.is_finite()) || !model.neutral_sgtext.is_finite() {
                    return Err(StoreError::NonFiniteModel);
                }
                Ok(true)
            }
        }
    }

    /// Applies a checked op.
    fn apply_checked(&mut self, op: Op) -> Result<(), StoreError> {
        match op {
            Op::Upsert { mut session } => {
                session.label = None;
                self.sessions.insert(session.url.clone(), session);
            }
            Op::Label { url, label } => {
                let session = self.sessions.get_mut(&url).expect("checked");
                let counts = Arc::make_mut(&mut self.counts);
                if let Some(old) = session.label {
                    counts.apply_label(session, old, Sign::Remove)?;
                }
                counts.apply_label(session, label, Sign::Add)?;
                session.label = Some(label);
                self.pending_labels += 1;
                self.label_ops += 1;
            }
            Op::Unlabel { url } => {
                let session = self.sessions.get_mut(&url).expect("checked");
                let old = session.label.expect("checked");
                Arc::make_mut(&mut self.counts).apply_label(session, old, Sign::Remove)?;
                session.label = None;
                self.pending_labels += 1;
                self.label_ops += 1;
            }
            Op::Verdict { url, verdict } => {
                self.verdicts.insert(url, verdict);
            }
            Op::Model { model, consumed_labels } => {
                self.models.push(model);
                self.pending_labels = self.pending_labels.saturating_sub(consumed_labels);
            }
        }
        Ok(())
    }

    /// Checks and applies `op`; returns whether anything changed.
    pub fn apply(&mut self, op: Op) -> Result<bool, StoreError> {
        if !self.check(&op)? {
            return Ok(false);
        }
        self.apply_checked(op)?;
        Ok(true)
    }

    /// Whether the count state equals a rebuild over the labeled sessions.
    pub fn counts_consistent(&self) -> bool {
        *self.counts == CountState::rebuild(self.sessions.values())
    }
}

/// Cheap, cloneable handle for reading the latest published snapshot.
#[derive(Clone)]
pub struct SnapshotReader {
    published: Arc<ArcSwap<Snapshot>>,
}

impl SnapshotReader {
    pub fn load(&self) -> Arc<Snapshot> {
        self.published.load_full()
    }
}

/// Single-writer store with optional on-disk durability.
pub struct Store {
    state: StoreState,
    dir: Option<PathBuf>,
    log: Option<OpLog>,
    published: Arc<ArcSwap<Snapshot>>,
}

impl Default for Store {
    fn default() -> Self {
        Store::in_memory()
    }
}

impl Store {
    pub fn in_memory() -> Self {
        Store::from_state(StoreState::new())
    }

    pub fn from_state(state: StoreState) -> Self {
        let published = Arc::new(ArcSwap::from_pointee(state.snapshot()));
        Store {
            state,
            dir: None,
            log: None,
            published,
        }
    }

    /// Opens or creates a store directory.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let snap_path = dir.join(SNAPSHOT_FILE);
        let mut state = if snap_path.exists() {
            restore(&snap_path)?
        } else {
            StoreState::new()
        };
        let (log, ops) = OpLog::open(dir.join(LOG_FILE), state.epoch)?;
        for (i, op) in ops.into_iter().enumerate() {
            state
                .apply(op)
                .map_err(|e| StoreError::CorruptLog(format!("record {i}: {e}")))?;
        }
        let mut store = Store::from_state(state);
        store.dir = Some(dir);
        store.log = Some(log);
        Ok(store)
    }

    pub fn state(&self) -> &StoreState {
        &self.state
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn reader(&self) -> SnapshotReader {
        SnapshotReader {
            published: Arc::clone(&self.published),
        }
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.published.load_full()
    }

    fn commit(&mut self, op: Op) -> Result<bool, StoreError> {
        if !self.state.check(&op)? {
            return Ok(false);
        }
        if let Some(log) = self.log.as_mut() {
            log.append(&op)?;
        }
        let republish = matches!(op, Op::Label { .. } | Op::Unlabel { .. } | Op::Model { .. });
        self.state.apply_checked(op)?;
        if republish {
            self.published.store(Arc::new(self.state.snapshot()));
        }
        Ok(true)
    }

    /// Stores a session (its label, if any, is ignored). Returns false when
    /// an identical session was already stored.
    pub fn upsert_session(&mut self, session: &QASession) -> Result<bool, StoreError> {
        self.commit(Op::Upsert {
            session: session.unlabeled(),
        })
    }

    pub fn find_by_url(&self, url: &str) -> Option<&CachedVerdict> {
        self.state.find_by_url(url)
    }

    /// Assigns a label, replacing any previous one. Returns false when the
    /// session already carried this label.
    pub fn set_label(&mut self, url: &str, label: Label, role: Role) -> Result<bool, StoreError> {
        if !role.can_annotate() {
            return Err(StoreError::Unauthorized(role));
        }
        self.commit(Op::Label {
            url: url.to_string(),
            label,
        })
    }

    pub fn remove_label(&mut self, url: &str, role: Role) -> Result<bool, StoreError> {
        if !role.can_annotate() {
            return Err(StoreError::Unauthorized(role));
        }
        self.commit(Op::Unlabel { url: url.to_string() })
    }

    pub fn record_verdict(&mut self, url: &str, verdict: CachedVerdict) -> Result<(), StoreError> {
        self.commit(Op::Verdict {
            url: url.to_string(),
            verdict,
        })
        .map(|_| ())
    }

    /// Publishes a new model; `consumed_labels` pending label changes are
    /// considered incorporated.
    pub fn publish_model(&mut self, model: Model, consumed_labels: u64) -> Result<(), StoreError> {
        self.commit(Op::Model {
            model,
            consumed_labels,
        })
        .map(|_| ())
    }

    /// Writes a fresh snapshot and empties the log.
    pub fn compact(&mut self) -> Result<(), StoreError> {
        let Some(dir) = self.dir.clone() else {
            return Ok(());
        };
        let tmp = dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        self.state.epoch += 1;
        let written = persist(&self.state, &tmp).and_then(|()| Ok(fs::rename(&tmp, dir.join(SNAPSHOT_FILE))?));
        if let Err(e) = written {
            self.state.epoch -= 1;
            return Err(e);
        }
        fs::File::open(&dir)?.sync_all()?;
        // a crash before this point leaves a log of the previous epoch, which
        // open() discards because the new snapshot already contains it
        if let Some(log) = self.log.as_mut() {
            log.reset(self.state.epoch)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::fixtures::session;

    fn verdict(v: u64) -> CachedVerdict {
        CachedVerdict {
            score: 0.25,
            label: Label::Normal,
            model_version: v,
            features: FeatureVector { sgqid: 0.5, sgaid: 0.5, sgtext: 0.0 },
        }
    }

    #[test]
    fn upsert_is_idempotent_and_detects_conflicts() {
        let mut st = Store::in_memory();
        let s = session("u1", "q", "a", "hello world", None);
        assert!(st.upsert_session(&s).unwrap());
        assert_eq!(st.state().session("u1"), Some(&s));
        assert!(!st.upsert_session(&s).unwrap());
        assert_eq!(st.state().session_count(), 1);
        let mut other = s.clone();
        other.answer_text = "different".into();
        assert!(matches!(st.upsert_session(&other), Err(StoreError::ConflictingContent(_))));
    }

    #[test]
    fn verdict_lookup_distinguishes_states() {
        let mut st = Store::in_memory();
        assert!(st.find_by_url("nope").is_none());
        st.upsert_session(&session("u1", "q", "a", "x", None)).unwrap();
        assert!(st.find_by_url("u1").is_none());
        st.record_verdict("u1", verdict(0)).unwrap();
        assert_eq!(st.find_by_url("u1"), Some(&verdict(0)));
        assert!(matches!(st.record_verdict("zz", verdict(0)), Err(StoreError::NotFound(_))));
    }

    #[test]
    fn labeling_updates_counts_once() {
        let mut st = Store::in_memory();
        st.upsert_session(&session("u1", "q", "a", "x y", None)).unwrap();
        assert!(st.set_label("u1", Label::Campaign, Role::Helper).unwrap());
        let c = st.state().counts();
        assert_eq!(c.words.campaign_sessions, 1);
        assert_eq!(c.words.get("x").campaign, 1);
        assert_eq!(c.users.get("q").q1, 1);
        assert_eq!(c.users.get("a").a1, 1);
        // relabel with the same label is a no-op
        assert!(!st.set_label("u1", Label::Campaign, Role::Admin).unwrap());
        assert_eq!(st.state().pending_labels(), 1);
    }

    #[test]
    fn flip_equals_direct_label() {
        let mut flipped = Store::in_memory();
        let mut direct = Store::in_memory();
        let s = session("u1", "q", "a", "x y", None);
        for st in [&mut flipped, &mut direct] {
            st.upsert_session(&s).unwrap();
        }
        flipped.set_label("u1", Label::Campaign, Role::Helper).unwrap();
        flipped.set_label("u1", Label::Normal, Role::Helper).unwrap();
        direct.set_label("u1", Label::Normal, Role::Helper).unwrap();
        assert_eq!(flipped.state().counts(), direct.state().counts());
        assert!(flipped.state().counts_consistent());
    }

    #[test]
    fn regular_role_cannot_label() {
        let mut st = Store::in_memory();
        st.upsert_session(&session("u1", "q", "a", "x", None)).unwrap();
        assert!(matches!(
            st.set_label("u1", Label::Campaign, Role::Regular),
            Err(StoreError::Unauthorized(Role::Regular))
        ));
        assert!(matches!(
            st.set_label("missing", Label::Campaign, Role::Helper),
            Err(StoreError::NotFound(_))
        ));
        assert_eq!(st.state().counts(), &CountState::new());
    }

    #[test]
    fn model_versions_must_increase() {
        let mut st = Store::in_memory();
        let mut m = Model::cold();
        m.version = 1;
        st.publish_model(m.clone(), 0).unwrap();
        assert!(matches!(st.publish_model(m.clone(), 0), Err(StoreError::VersionOrder { .. })));
        m.version = 2;
        m.theta[0] = f64::NAN;
        assert!(matches!(st.publish_model(m, 0), Err(StoreError::NonFiniteModel)));
        assert_eq!(st.state().latest_version(), 1);
    }

    #[test]
    fn reader_sees_published_pairs() {
        let mut st = Store::in_memory();
        let reader = st.reader();
        assert_eq!(reader.load().model.version, 0);
        st.upsert_session(&session("u1", "q", "a", "x", None)).unwrap();
        st.set_label("u1", Label::Normal, Role::Helper).unwrap();
        assert_eq!(reader.load().label_ops, 1);
        assert_eq!(reader.load().counts.words.normal_sessions, 1);
        let mut m = Model::cold();
        m.version = 1;
        st.publish_model(m, 1).unwrap();
        assert_eq!(reader.load().model.version, 1);
        assert_eq!(st.state().pending_labels(), 0);
    }

    #[test]
    fn durable_store_replays_log_and_compacts() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut st = Store::open(dir.path()).unwrap();
            st.upsert_session(&session("u1", "q", "a", "x", None)).unwrap();
            st.upsert_session(&session("u2", "q", "b", "y", None)).unwrap();
            st.set_label("u1", Label::Campaign, Role::Helper).unwrap();
            st.record_verdict("u2", verdict(0)).unwrap();
        }
        let snapshot_state = {
            let mut st = Store::open(dir.path()).unwrap();
            assert_eq!(st.state().session_count(), 2);
            assert_eq!(st.state().session("u1").unwrap().label, Some(Label::Campaign));
            assert_eq!(st.find_by_url("u2"), Some(&verdict(0)));
            st.compact().unwrap();
            st.set_label("u2", Label::Normal, Role::Admin).unwrap();
            st.state().clone()
        };
        assert!(dir.path().join(SNAPSHOT_FILE).exists());
        let reopened = Store::open(dir.path()).unwrap();
        assert_eq!(reopened.state(), &snapshot_state);
    }

    #[test]
    fn torn_log_tail_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut st = Store::open(dir.path()).unwrap();
            st.upsert_session(&session("u1", "q", "a", "x", None)).unwrap();
            st.upsert_session(&session("u2", "q", "a", "x", None)).unwrap();
        }
        let log = dir.path().join(LOG_FILE);
        let len = fs::metadata(&log).unwrap().len();
        let f = fs::OpenOptions::new().write(true).open(&log).unwrap();
        f.set_len(len - 5).unwrap();
        drop(f);
        let st = Store::open(dir.path()).unwrap();
        assert_eq!(st.state().session_count(), 1);
    }
}
