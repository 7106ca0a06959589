//! Tokenization and the labeled-session count state behind the spam-grade
//! features.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::corpus::{Label, QASession};

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF      // hiragana, katakana
        | 0x3400..=0x4DBF    // CJK extension A
        | 0x4E00..=0x9FFF    // CJK unified ideographs
        | 0xAC00..=0xD7AF    // hangul syllables
        | 0xF900..=0xFAFF    // compatibility ideographs
        | 0x20000..=0x2FA1F) // supplementary ideographs
}

/// Splits text into lowercase alphanumeric words and CJK character bigrams.
///
/// A maximal CJK run of length L >= 2 yields its L-1 overlapping bigrams; a
/// lone CJK character yields itself. Everything that is neither alphanumeric
/// nor CJK separates tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    let mut cjk: Vec<char> = Vec::new();

    fn flush_cjk(run: &mut Vec<char>, out: &mut Vec<String>) {
        match run.len() {
            0 => {}
            1 => out.push(run[0].to_string()),
            _ => out.extend(run.windows(2).map(|w| w.iter().collect::<String>())),
        }
        run.clear();
    }

    for c in text.chars() {
        if is_cjk(c) {
            if !word.is_empty() {
                out.push(std::mem::take(&mut word));
            }
            cjk.push(c);
        } else if c.is_alphanumeric() {
            flush_cjk(&mut cjk, &mut out);
            word.extend(c.to_lowercase());
        } else {
            flush_cjk(&mut cjk, &mut out);
            if !word.is_empty() {
                out.push(std::mem::take(&mut word));
            }
        }
    }
    flush_cjk(&mut cjk, &mut out);
    if !word.is_empty() {
        out.push(word);
    }
    out
}

/// Distinct words over title, question and best answer. Sorted, so sums over
/// the set are order-deterministic.
pub fn distinct_words(s: &QASession) -> BTreeSet<String> {
    [&s.title, &s.question_text, &s.answer_text]
        .into_iter()
        .flat_map(|t| tokenize(t))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StatsError {
    #[error("removing label {label} from `{url}` would drive a count negative")]
    UnderflowViolation { url: String, label: Label },
    #[error("session `{0}` carries no label")]
    Unlabeled(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordCounts {
    /// normal sessions containing the word
    pub normal: u64,
    /// campaign sessions containing the word
    pub campaign: u64,
}

/// Per-word presence counts split by class, plus the class totals.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordStats {
    #[serde(serialize_with = "sorted_map", deserialize_with = "hash_map")]
    pub per_word: HashMap<String, WordCounts>,
    pub normal_sessions: u64,
    pub campaign_sessions: u64,
}

impl WordStats {
    pub fn get(&self, word: &str) -> WordCounts {
        self.per_word.get(word).copied().unwrap_or_default()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserCounts {
    pub q0: u64,
    pub q1: u64,
    pub a0: u64,
    pub a1: u64,
}

impl UserCounts {
    fn is_zero(&self) -> bool {
        *self == UserCounts::default()
    }
}

/// Per-user campaign/normal history as questioner and as best answerer.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserSpamCounts {
    #[serde(serialize_with = "sorted_map", deserialize_with = "hash_map")]
    pub per_user: HashMap<String, UserCounts>,
}

impl UserSpamCounts {
    pub fn get(&self, user: &str) -> UserCounts {
        self.per_user.get(user).copied().unwrap_or_default()
    }
}

fn sorted_map<S: Serializer, V: Serialize>(
    map: &HashMap<String, V>,
    ser: S,
) -> Result<S::Ok, S::Error> {
    map.iter().collect::<BTreeMap<_, _>>().serialize(ser)
}

fn hash_map<'de, D: Deserializer<'de>, V: Deserialize<'de>>(
    de: D,
) -> Result<HashMap<String, V>, D::Error> {
    BTreeMap::<String, V>::deserialize(de).map(|m| m.into_iter().collect())
}

/// Sign of a count update.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sign {
    Add,
    Remove,
}

fn bump(v: &mut u64, sign: Sign) {
    match sign {
        Sign::Add => *v += 1,
        Sign::Remove => *v -= 1,
    }
}

/// Word statistics and user counts, always updated together.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountState {
    pub words: WordStats,
    pub users: UserSpamCounts,
}

impl CountState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn labeled_sessions(&self) -> u64 {
        self.words.normal_sessions + self.words.campaign_sessions
    }

    /// Adds or removes one labeled session's contribution. Either every
    /// count is updated or, on underflow, none is.
    pub fn apply_label(&mut self, s: &QASession, label: Label, sign: Sign) -> Result<(), StatsError> {
        let words = distinct_words(s);
        self.apply_words(s, &words, label, sign)
    }

    pub(crate) fn apply_words(
        &mut self,
        s: &QASession,
        words: &BTreeSet<String>,
        label: Label,
        sign: Sign,
    ) -> Result<(), StatsError> {
        let campaign = label.is_campaign();
        if sign == Sign::Remove {
            let underflow = || StatsError::UnderflowViolation {
                url: s.url.clone(),
                label,
            };
            let total = if campaign {
                self.words.campaign_sessions
            } else {
                self.words.normal_sessions
            };
            if total == 0 {
                return Err(underflow());
            }
            for w in words {
                let c = self.words.get(w);
                if (if campaign { c.campaign } else { c.normal }) == 0 {
                    return Err(underflow());
                }
            }
            let q = self.users.get(&s.questioner_id);
            let a = self.users.get(&s.answerer_id);
            let (qv, av) = if campaign { (q.q1, a.a1) } else { (q.q0, a.a0) };
            if qv == 0 || av == 0 {
                return Err(underflow());
            }
        }

        if campaign {
            bump(&mut self.words.campaign_sessions, sign);
        } else {
            bump(&mut self.words.normal_sessions, sign);
        }
        for w in words {
            let entry = self.words.per_word.entry(w.clone()).or_default();
            bump(if campaign { &mut entry.campaign } else { &mut entry.normal }, sign);
            if *entry == WordCounts::default() {
                self.words.per_word.remove(w);
            }
        }
        for (user, as_questioner) in [(&s.questioner_id, true), (&s.answerer_id, false)] {
            let entry = self.users.per_user.entry(user.clone()).or_default();
            let slot = match (as_questioner, campaign) {
                (true, false) => &mut entry.q0,
                (true, true) => &mut entry.q1,
                (false, false) => &mut entry.a0,
                (false, true) => &mut entry.a1,
            };
            bump(slot, sign);
            if entry.is_zero() {
                self.users.per_user.remove(user);
            }
        }
        Ok(())
    }

    /// Applies a session using its own label.
    pub fn add_labeled(&mut self, s: &QASession) -> Result<(), StatsError> {
        let label = s.label.ok_or_else(|| StatsError::Unlabeled(s.url.clone()))?;
        self.apply_label(s, label, Sign::Add)
    }

    /// Rebuilds the state from scratch over every labeled session.
    pub fn rebuild<'a>(sessions: impl IntoIterator<Item = &'a QASession>) -> Self {
        let mut state = CountState::new();
        for s in sessions {
            if let Some(label) = s.label {
                state
                    .apply_label(s, label, Sign::Add)
                    .expect("adding never underflows");
            }
        }
        state
    }
}
