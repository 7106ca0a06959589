//! Compacted snapshot file.
//!
//! ```text
//! cqa-store-snapshot v1
//! sha256 <hex digest of everything after this line>
//! [sessions] <n>
//! <n corpus lines, labels included>
//! [verdicts] <n>
//! <n lines {"url":..,"verdict":{..}}>
//! [counts]
//! <one JSON line: word statistics and user counts>
//! [models] <n>
//! <n JSON model lines, ascending version>
//! [meta]
//! {"pending_labels":..,"label_ops":..,"epoch":..}
//! ```

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CachedVerdict, StoreError, StoreState};
use crate::classifier::Model;
use crate::corpus::{parse_record, QASession};
use crate::textstats::CountState;

const MAGIC: &str = "cqa-store-snapshot v1";

#[derive(Serialize, Deserialize)]
struct VerdictLine {
    url: String,
    verdict: CachedVerdict,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    pending_labels: u64,
    label_ops: u64,
    epoch: u64,
}

fn body(state: &StoreState) -> String {
    let mut out = String::new();
    let mut sessions: Vec<&QASession> = state.sessions.values().collect();
    sessions.sort_by(|a, b| a.url.cmp(&b.url));
    writeln!(out, "[sessions] {}", sessions.len()).unwrap();
    for s in sessions {
        writeln!(out, "{}", s.to_line()).unwrap();
    }
    let mut verdicts: Vec<_> = state.verdicts.iter().collect();
    verdicts.sort_by(|a, b| a.0.cmp(b.0));
    writeln!(out, "[verdicts] {}", verdicts.len()).unwrap();
    for (url, v) in verdicts {
        let line = VerdictLine {
            url: url.clone(),
            verdict: *v,
        };
        writeln!(out, "{}", serde_json::to_string(&line).unwrap()).unwrap();
    }
    writeln!(out, "[counts]").unwrap();
    writeln!(out, "{}", serde_json::to_string(&*state.counts).unwrap()).unwrap();
    writeln!(out, "[models] {}", state.models.len()).unwrap();
    for m in &state.models {
        writeln!(out, "{}", serde_json::to_string(m).unwrap()).unwrap();
    }
    writeln!(out, "[meta]").unwrap();
    let meta = Meta {
        pending_labels: state.pending_labels,
        label_ops: state.label_ops,
        epoch: state.epoch,
    };
    writeln!(out, "{}", serde_json::to_string(&meta).unwrap()).unwrap();
    out
}

pub fn snapshot_to_string(state: &StoreState) -> String {
    let body = body(state);
    let digest = hex::encode(Sha256::digest(body.as_bytes()));
    format!("{MAGIC}\nsha256 {digest}\n{body}")
}

pub fn persist(state: &StoreState, path: impl AsRef<Path>) -> Result<(), StoreError> {
    use std::io::Write;
    let mut f = std::fs::File::create(path)?;
    f.write_all(snapshot_to_string(state).as_bytes())?;
    f.sync_all()?;
    Ok(())
}

pub fn restore(path: impl AsRef<Path>) -> Result<StoreState, StoreError> {
    let bytes = std::fs::read(path)?;
    let text = String::from_utf8(bytes)
        .map_err(|_| StoreError::CorruptSnapshot("not UTF-8".into()))?;
    restore_from_str(&text)
}

fn corrupt(msg: impl Into<String>) -> StoreError {
    StoreError::CorruptSnapshot(msg.into())
}

struct Lines<'a> {
    inner: std::str::Lines<'a>,
}

impl<'a> Lines<'a> {
    fn next(&mut self, what: &str) -> Result<&'a str, StoreError> {
        self.inner.next().ok_or_else(|| corrupt(format!("truncated before {what}")))
    }

    fn header(&mut self, name: &str) -> Result<usize, StoreError> {
        let line = self.next(name)?;
        let rest = line
            .strip_prefix(name)
            .ok_or_else(|| corrupt(format!("expected `{name}`, got `{line}`")))?;
        if rest.is_empty() {
            return Ok(0);
        }
        rest.trim()
            .parse()
            .map_err(|_| corrupt(format!("bad count in `{line}`")))
    }

    fn json<T: for<'de> Deserialize<'de>>(&mut self, what: &str) -> Result<T, StoreError> {
        let line = self.next(what)?;
        serde_json::from_str(line).map_err(|e| corrupt(format!("{what}: {e}")))
    }
}

pub fn restore_from_str(text: &str) -> Result<StoreState, StoreError> {
    let (magic, rest) = text.split_once('\n').ok_or_else(|| corrupt("missing header"))?;
    if magic != MAGIC {
        return Err(corrupt("bad magic line"));
    }
    let (sum_line, body) = rest.split_once('\n').ok_or_else(|| corrupt("missing checksum"))?;
    let expected = sum_line
        .strip_prefix("sha256 ")
        .ok_or_else(|| corrupt("missing checksum"))?;
    if hex::encode(Sha256::digest(body.as_bytes())) != expected {
        return Err(corrupt("checksum mismatch"));
    }

    let mut lines = Lines { inner: body.lines() };
    let n = lines.header("[sessions]")?;
    let mut sessions = HashMap::with_capacity(n);
    for i in 0..n {
        let s = parse_record(lines.next("session")?, i + 1)
            .map_err(|e| corrupt(format!("session: {e}")))?;
        if sessions.insert(s.url.clone(), s).is_some() {
            return Err(corrupt("duplicate session url"));
        }
    }
    let n = lines.header("[verdicts]")?;
    let mut verdicts = HashMap::with_capacity(n);
    for _ in 0..n {
        let v: VerdictLine = lines.json("verdict")?;
        if !sessions.contains_key(&v.url) {
            return Err(corrupt(format!("verdict for unknown url `{}`", v.url)));
        }
        verdicts.insert(v.url, v.verdict);
    }
    lines.header("[counts]")?;
    let counts: CountState = lines.json("counts")?;
    let n = lines.header("[models]")?;
    let mut models: Vec<Model> = Vec::with_capacity(n);
    for _ in 0..n {
        let m: Model = lines.json("model")?;
        if models.last().is_some_and(|prev| prev.version >= m.version) {
            return Err(corrupt("model versions out of order"));
        }
        models.push(m);
    }
    lines.header("[meta]")?;
    let meta: Meta = lines.json("meta")?;

    if counts != CountState::rebuild(sessions.values()) {
        return Err(corrupt("counts disagree with labeled sessions"));
    }
    Ok(StoreState {
        sessions,
        verdicts,
        counts: Arc::new(counts),
        models,
        pending_labels: meta.pending_labels,
        label_ops: meta.label_ops,
        epoch: meta.epoch,
    })
}
