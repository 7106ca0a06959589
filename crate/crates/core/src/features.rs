//! Spam-grade features: questioner history (SGqID), answerer history (SGaID)
//! and text campaign-specificity (SGtext).

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Label, QASession};
use crate::textstats::{distinct_words, CountState, UserCounts};

/// Below this many labeled sessions a user history ratio falls back to 0.5.
pub const MIN_SUPPORT: u64 = 5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub sgqid: f64,
    pub sgaid: f64,
    pub sgtext: f64,
}

impl FeatureVector {
    /// Design-matrix row: intercept column first.
    pub fn design_row(&self) -> [f64; 4] {
        [1.0, self.sgqid, self.sgaid, self.sgtext]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FeatureError {
    #[error("session `{0}` is not applied to the count state")]
    NotInDatabase(String),
}

/// History ratio c1 / (c0 + c1) with the two 0.5 fallbacks: too little
/// evidence gives 0.5, and a zero campaign count is smoothed to 0.5.
pub fn sg_ratio(c0: u64, c1: u64, min_support: u64) -> f64 {
    if c0 + c1 < min_support {
        0.5
    } else if c1 == 0 {
        0.5 / (c0 as f64 + 0.5)
    } else {
        c1 as f64 / (c0 + c1) as f64
    }
}

/// ln((N+1)/(n_i+1)) * (s_i+1)/(S+1)
pub fn sg_word(normal_total: u64, normal_with: u64, campaign_total: u64, campaign_with: u64) -> f64 {
    ((normal_total as f64 + 1.0) / (normal_with as f64 + 1.0)).ln()
        * ((campaign_with as f64 + 1.0) / (campaign_total as f64 + 1.0))
}

/// Mean word grade over `words`, or `neutral` for an empty set. When
/// `exclude` is set, one session of that class containing every word is
/// subtracted from the counts first.
pub fn sg_text_words(
    words: &BTreeSet<String>,
    state: &CountState,
    exclude: Option<Label>,
    neutral: f64,
) -> f64 {
    if words.is_empty() {
        return neutral;
    }
    let (dn, ds) = match exclude {
        Some(Label::Normal) => (1, 0),
        Some(Label::Campaign) => (0, 1),
        None => (0, 0),
    };
    let n_total = state.words.normal_sessions - dn;
    let s_total = state.words.campaign_sessions - ds;
    let sum: f64 = words
        .iter()
        .map(|w| {
            let c = state.words.get(w);
            sg_word(n_total, c.normal - dn, s_total, c.campaign - ds)
        })
        .sum();
    sum / words.len() as f64
}

pub fn sg_text(s: &QASession, state: &CountState, neutral: f64) -> f64 {
    sg_text_words(&distinct_words(s), state, None, neutral)
}

fn excluded(c: UserCounts, questioner: bool, exclude: Option<Label>) -> (u64, u64) {
    let (c0, c1) = if questioner { (c.q0, c.q1) } else { (c.a0, c.a1) };
    match exclude {
        Some(Label::Normal) => (c0 - 1, c1),
        Some(Label::Campaign) => (c0, c1 - 1),
        None => (c0, c1),
    }
}

/// Whether `state` contains at least one session of class `label` written by
/// these users with these words. Exclusion is only valid if it does.
fn can_exclude(s: &QASession, words: &BTreeSet<String>, state: &CountState, label: Label) -> bool {
    let camp = label.is_campaign();
    let total = if camp {
        state.words.campaign_sessions
    } else {
        state.words.normal_sessions
    };
    let q = state.users.get(&s.questioner_id);
    let a = state.users.get(&s.answerer_id);
    let (qc, ac) = if camp { (q.q1, a.a1) } else { (q.q0, a.a0) };
    total > 0
        && qc > 0
        && ac > 0
        && words.iter().all(|w| {
            let c = state.words.get(w);
            (if camp { c.campaign } else { c.normal }) > 0
        })
}

/// Computes the three features of `s` against `state`.
///
/// With `exclude` set to the label under which `s` is applied, its own
/// contribution is left out (leave-one-out), which is how training features
/// are computed.
pub fn feature_vector(
    s: &QASession,
    state: &CountState,
    exclude: Option<Label>,
    neutral: f64,
) -> Result<FeatureVector, FeatureError> {
    let words = distinct_words(s);
    feature_vector_words(s, &words, state, exclude, neutral)
}

pub(crate) fn feature_vector_words(
    s: &QASession,
    words: &BTreeSet<String>,
    state: &CountState,
    exclude: Option<Label>,
    neutral: f64,
) -> Result<FeatureVector, FeatureError> {
    if let Some(label) = exclude {
        if !can_exclude(s, words, state, label) {
            return Err(FeatureError::NotInDatabase(s.url.clone()));
        }
    }
    let (q0, q1) = excluded(state.users.get(&s.questioner_id), true, exclude);
    let (a0, a1) = excluded(state.users.get(&s.answerer_id), false, exclude);
    Ok(FeatureVector {
        sgqid: sg_ratio(q0, q1, MIN_SUPPORT),
        sgaid: sg_ratio(a0, a1, MIN_SUPPORT),
        sgtext: sg_text_words(words, state, exclude, neutral),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::fixtures::session;
    use crate::textstats::Sign;
    use proptest::prelude::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12
    }

    #[test]
    fn sg_ratio_examples() {
        assert!(close(sg_ratio(3, 2, MIN_SUPPORT), 0.4));
        assert_eq!(sg_ratio(2, 1, MIN_SUPPORT), 0.5);
        assert!(close(sg_ratio(10, 0, MIN_SUPPORT), 0.5 / 10.5));
        assert!((sg_ratio(10, 0, MIN_SUPPORT) - 0.0476190).abs() < 1e-7);
        assert_eq!(sg_ratio(0, 0, MIN_SUPPORT), 0.5);
        assert_eq!(sg_ratio(0, 7, MIN_SUPPORT), 1.0);
    }

    #[test]
    fn sg_word_examples() {
        assert!(close(sg_word(9, 4, 9, 4), 2f64.ln() * 0.5));
        assert!((sg_word(9, 4, 9, 4) - 0.3465736).abs() < 1e-7);
        assert_eq!(sg_word(0, 0, 0, 0), 0.0);
        assert!((sg_word(99, 0, 9, 9) - 4.6051702).abs() < 1e-7);
        assert!((sg_word(9, 0, 9, 0) - 0.2302585).abs() < 1e-7);
    }

    #[test]
    fn sg_text_mean_and_neutral() {
        // two words whose grades are hand-computable
        let mut st = CountState::new();
        let camp = session("c", "q", "a", "alpha", None);
        st.apply_label(&camp, Label::Campaign, Sign::Add).unwrap();
        let norm = session("n", "q", "a", "beta", None);
        st.apply_label(&norm, Label::Normal, Sign::Add).unwrap();
        let probe = session("p", "x", "y", "alpha beta beta", None);
        let alpha = sg_word(1, 0, 1, 1);
        let beta = sg_word(1, 1, 1, 0);
        assert!(close(sg_text(&probe, &st, 0.0), (alpha + beta) / 2.0));

        let empty = session("e", "x", "y", "", None);
        assert_eq!(sg_text(&empty, &st, 0.9), 0.9);
    }

    #[test]
    fn empty_database_gives_fallbacks() {
        let st = CountState::new();
        let s = session("u", "q", "a", "some unseen words", None);
        let fv = feature_vector(&s, &st, None, 0.7).unwrap();
        assert_eq!(fv, FeatureVector { sgqid: 0.5, sgaid: 0.5, sgtext: 0.0 });
        let e = session("u", "q", "a", "", None);
        let fv = feature_vector(&e, &st, None, 0.7).unwrap();
        assert_eq!(fv.sgtext, 0.7);
    }

    #[test]
    fn leave_one_out_drops_below_support() {
        let mut st = CountState::new();
        let s = session("u", "solo_q", "solo_a", "buy tea", Some(Label::Campaign));
        st.add_labeled(&s).unwrap();
        for i in 0..6 {
            let other = session(&format!("o{i}"), "other", "other2", "chat", Some(Label::Normal));
            st.add_labeled(&other).unwrap();
        }
        let fv = feature_vector(&s, &st, Some(Label::Campaign), 0.0).unwrap();
        assert_eq!(fv.sgqid, 0.5);
        assert_eq!(fv.sgaid, 0.5);
    }

    #[test]
    fn exclude_unknown_session_errors() {
        let st = CountState::new();
        let s = session("u", "q", "a", "x", Some(Label::Campaign));
        assert_eq!(
            feature_vector(&s, &st, Some(Label::Campaign), 0.0),
            Err(FeatureError::NotInDatabase("u".into()))
        );
    }

    proptest! {
        #[test]
        fn sg_ratio_bounded_and_monotone(c0 in 0u64..200, c1 in 1u64..200) {
            let r = sg_ratio(c0, c1, MIN_SUPPORT);
            prop_assert!(r > 0.0 && r <= 1.0);
            if c0 + c1 >= MIN_SUPPORT {
                prop_assert!(sg_ratio(c0, c1 + 1, MIN_SUPPORT) >= r);
            }
            prop_assert!(sg_ratio(c0, 0, MIN_SUPPORT) > 0.0);
        }

        #[test]
        fn sg_word_monotone(n_total in 0u64..500, s_total in 0u64..500, a in 0u64..500, b in 0u64..500) {
            let n = a % (n_total + 1);
            let s = b % (s_total + 1);
            let g = sg_word(n_total, n, s_total, s);
            prop_assert!(g >= 0.0);
            if n < n_total {
                prop_assert!(sg_word(n_total, n + 1, s_total, s) <= g);
            }
            if s < s_total {
                prop_assert!(sg_word(n_total, n, s_total, s + 1) >= g);
            }
        }

        #[test]
        fn sg_text_ignores_duplicate_words(words in proptest::collection::vec(0usize..10, 1..10), dup in 0usize..10) {
            let mut st = CountState::new();
            for i in 0..10 {
                let s = session(&format!("s{i}"), "q", "a", &format!("w{i} w{}", (i * 3) % 10), None);
                st.apply_label(&s, Label::from_bool(i % 3 == 0), Sign::Add).unwrap();
            }
            let text: Vec<String> = words.iter().map(|w| format!("w{w}")).collect();
            let mut doubled = text.clone();
            doubled.push(format!("w{}", words[dup % words.len()]));
            doubled.extend(text.iter().cloned());
            let a = session("p", "x", "y", &text.join(" "), None);
            let b = session("p", "x", "y", &doubled.join(" "), None);
            prop_assert_eq!(sg_text(&a, &st, 0.0), sg_text(&b, &st, 0.0));
        }
    }
}
