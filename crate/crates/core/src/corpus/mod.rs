//! Q&A session data model and the JSON-lines corpus format.
//!
//! A corpus file holds one session per line. Each line is a flat JSON object
//! whose keys are exactly the [`QASession`] field names; `category`, `rating`
//! and `label` may be omitted. Timestamps are integer Unix seconds and
//! `label` is `1` (campaign) or `0` (normal).

mod diag;
mod synth;

pub use diag::{
    empirical_cdf, interval_post_time, ks_statistic, class_diagnostics, CdfTable, Diagnostic,
    DiagnosticFeature, Separation, NON_SEPARATING_KS,
};
pub use synth::{generate_synthetic, SyntheticConfig};

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Ground-truth class of a session.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Label {
    Normal = 0,
    Campaign = 1,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn is_campaign(self) -> bool {
        self == Label::Campaign
    }

    pub fn from_bool(campaign: bool) -> Self {
        if campaign {
            Label::Campaign
        } else {
            Label::Normal
        }
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l as u8
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            0 => Ok(Label::Normal),
            1 => Ok(Label::Campaign),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_u8())
    }
}

/// One closed Q&A session: a question and its selected best answer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QASession {
    pub url: String,
    pub title: String,
    pub question_text: String,
    pub answer_text: String,
    pub questioner_id: String,
    pub answerer_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    pub ask_time: i64,
    pub answer_time: i64,
    pub likes: u64,
    pub other_answers: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rating: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SessionInvalid {
    #[error("field `{0}` must be non-empty")]
    EmptyField(&'static str),
    #[error("answer_time {answer_time} precedes ask_time {ask_time}")]
    TimeOrder { ask_time: i64, answer_time: i64 },
}

impl QASession {
    pub fn validate(&self) -> Result<(), SessionInvalid> {
        for (name, value) in [
            ("url", &self.url),
            ("questioner_id", &self.questioner_id),
            ("answerer_id", &self.answerer_id),
        ] {
            if value.is_empty() {
                return Err(SessionInvalid::EmptyField(name));
            }
        }
        if self.answer_time < self.ask_time {
            return Err(SessionInvalid::TimeOrder {
                ask_time: self.ask_time,
                answer_time: self.answer_time,
            });
        }
        Ok(())
    }

    /// Close timestamp of the session. The best-answer time is the latest
    /// event recorded per session, so it stands in for the close time.
    pub fn close_time(&self) -> i64 {
        self.answer_time
    }

    /// Same session with the label stripped.
    pub fn unlabeled(&self) -> QASession {
        QASession {
            label: None,
            ..self.clone()
        }
    }

    /// Equality of everything except the label.
    pub fn same_content(&self, other: &QASession) -> bool {
        let mut a = self.clone();
        a.label = other.label;
        &a == other
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("session serialization is infallible")
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: malformed record: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("line {line}: answer_time precedes ask_time")]
    TimeOrderViolation { line: usize },
    #[error("duplicate url {0}")]
    DuplicateUrl(String),
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
    #[error("empty input")]
    EmptyInput,
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Parses one corpus line.
pub fn parse_record(text: &str, line: usize) -> Result<QASession, CorpusError> {
    let session: QASession =
        serde_json::from_str(text).map_err(|e| CorpusError::MalformedRecord {
            line,
            reason: e.to_string(),
        })?;
    match session.validate() {
        Ok(()) => Ok(session),
        Err(SessionInvalid::TimeOrder { .. }) => Err(CorpusError::TimeOrderViolation { line }),
        Err(e) => Err(CorpusError::MalformedRecord {
            line,
            reason: e.to_string(),
        }),
    }
}

/// Reads a corpus from any buffered reader. Blank lines are skipped but
/// still counted for line numbers.
pub fn read_corpus<R: BufRead>(reader: R) -> Result<Vec<QASession>, CorpusError> {
    let mut sessions = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let session = parse_record(&line, idx + 1)?;
        if !seen.insert(session.url.clone()) {
            return Err(CorpusError::DuplicateUrl(session.url));
        }
        sessions.push(session);
    }
    Ok(sessions)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<QASession>, CorpusError> {
    let file = File::open(path)?;
    read_corpus(BufReader::new(file))
}

pub fn write_corpus_to<W: Write>(mut w: W, sessions: &[QASession]) -> io::Result<()> {
    for s in sessions {
        writeln!(w, "{}", s.to_line())?;
    }
    w.flush()
}

pub fn write_corpus(path: impl AsRef<Path>, sessions: &[QASession]) -> io::Result<()> {
    let file = File::create(path)?;
    write_corpus_to(BufWriter::new(file), sessions)
}

pub fn corpus_to_string(sessions: &[QASession]) -> String {
    let mut buf = Vec::new();
    write_corpus_to(&mut buf, sessions).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("corpus lines are UTF-8")
}

/// Stable close-time order, ties broken by url.
pub fn sort_by_close_time(sessions: &mut [QASession]) {
    sessions.sort_by(|a, b| {
        a.close_time()
            .cmp(&b.close_time())
            .then_with(|| a.url.cmp(&b.url))
    });
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn session(url: &str, q: &str, a: &str, text: &str, label: Option<Label>) -> QASession {
        QASession {
            url: url.to_string(),
            title: String::new(),
            question_text: String::new(),
            answer_text: text.to_string(),
            questioner_id: q.to_string(),
            answerer_id: a.to_string(),
            category: None,
            ask_time: 100,
            answer_time: 200,
            likes: 0,
            other_answers: 0,
            rating: None,
            label,
        }
    }
}
