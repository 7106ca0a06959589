//! Seeded synthetic corpus generator.
//!
//! Campaign sessions are written by a pool of paid posters following a small
//! set of templates: a piece of generic advice followed by a product pitch.
//! Campaigns drift over time: the active window of pitch vocabulary and the
//! active window of poster accounts both slide forward as the corpus
//! advances, so a model frozen on the earliest sessions loses track of later
//! campaigns while a model that keeps absorbing labels does not. Engagement
//! signals (interval post time, likes, other answers) are drawn from the same
//! distributions for both classes.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CorpusError, Label, QASession};

/// 2011-10-01T00:00:00Z
const START_TIME: i64 = 1_317_427_200;
/// Mean gap between consecutive close times (about three months over ~5000 sessions).
const MEAN_CLOSE_GAP: i64 = 1_590;
const MIN_INTERVAL_SECS: f64 = 60.0;
const MAX_INTERVAL_SECS: f64 = 14.0 * 86_400.0;
/// Fraction of the campaign vocabulary / poster pool active at any instant.
const WINDOW_FRACTION: f64 = 0.25;
const CAMPAIGN_QUESTIONER_FROM_POOL: f64 = 0.9;
const CAMPAIGN_ANSWERER_FROM_POOL: f64 = 0.95;
/// Paid posters also answer ordinary questions to build reputation.
const POSTER_ANSWERS_NORMAL: f64 = 0.03;

const CATEGORIES: [&str; 6] = ["health", "digital", "education", "travel", "finance", "life"];
const RATINGS: [&str; 3] = ["good", "fair", "excellent"];

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub total_sessions: usize,
    pub campaign_fraction: f64,
    pub n_users: usize,
    pub n_paid_posters: usize,
    pub campaign_vocab_size: usize,
    pub normal_vocab_size: usize,
    pub shared_vocab_size: usize,
    pub template_count: usize,
    pub rng_seed: u64,
}

impl SyntheticConfig {
    /// 4998 sessions of which 2147 are campaigns.
    pub fn standard(rng_seed: u64) -> Self {
        SyntheticConfig {
            total_sessions: 4998,
            campaign_fraction: 2147.0 / 4998.0,
            n_users: 2000,
            n_paid_posters: 80,
            campaign_vocab_size: 600,
            normal_vocab_size: 3000,
            shared_vocab_size: 400,
            template_count: 8,
            rng_seed,
        }
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let counts = [
            ("total_sessions", self.total_sessions),
            ("n_users", self.n_users),
            ("n_paid_posters", self.n_paid_posters),
            ("campaign_vocab_size", self.campaign_vocab_size),
            ("normal_vocab_size", self.normal_vocab_size),
            ("shared_vocab_size", self.shared_vocab_size),
            ("template_count", self.template_count),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(CorpusError::InvalidConfig(format!("{name} must be > 0")));
            }
        }
        if self.n_paid_posters > self.n_users {
            return Err(CorpusError::InvalidConfig(
                "n_paid_posters exceeds n_users".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.campaign_fraction) {
            return Err(CorpusError::InvalidConfig(
                "campaign_fraction must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    pub fn campaign_count(&self) -> usize {
        ((self.total_sessions as f64 * self.campaign_fraction).round() as usize)
            .min(self.total_sessions)
    }
}

struct Template {
    prefix_words: (usize, usize),
    pitch_words: (usize, usize),
    mention_in_question: bool,
}

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

/// Three-syllable pseudo-word for a global vocabulary index.
fn word(index: usize) -> String {
    let base = CONSONANTS.len() * VOWELS.len();
    let mut out = String::with_capacity(6);
    let mut rest = index;
    for _ in 0..3 {
        let syl = rest % base;
        rest /= base;
        out.push(CONSONANTS[syl / VOWELS.len()] as char);
        out.push(VOWELS[syl % VOWELS.len()] as char);
    }
    debug_assert_eq!(rest, 0, "vocabulary index out of range");
    out
}

struct Vocab {
    normal: Vec<String>,
    shared: Vec<String>,
    campaign: Vec<String>,
}

impl Vocab {
    fn new(cfg: &SyntheticConfig) -> Self {
        let mut next = 0usize;
        let mut take = |n: usize| {
            let v: Vec<String> = (next..next + n).map(word).collect();
            next += n;
            v
        };
        Vocab {
            normal: take(cfg.normal_vocab_size),
            shared: take(cfg.shared_vocab_size),
            campaign: take(cfg.campaign_vocab_size),
        }
    }
}

/// Start and width of a window of `width_frac * len` items sliding across
/// `len` items as `progress` goes from 0 to 1.
fn sliding_window(len: usize, progress: f64) -> (usize, usize) {
    let width = ((len as f64 * WINDOW_FRACTION).round() as usize).clamp(1, len);
    let start = ((len - width) as f64 * progress).round() as usize;
    (start, width)
}

struct Generator<'a> {
    cfg: &'a SyntheticConfig,
    rng: ChaCha8Rng,
    vocab: Vocab,
    posters: Vec<String>,
    regulars: Vec<String>,
    templates: Vec<Template>,
}

impl<'a> Generator<'a> {
    fn new(cfg: &'a SyntheticConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        let mut users: Vec<String> = (0..cfg.n_users).map(|i| format!("user{i:05}")).collect();
        users.shuffle(&mut rng);
        let regulars = if cfg.n_paid_posters < cfg.n_users {
            users[cfg.n_paid_posters..].to_vec()
        } else {
            users.clone()
        };
        let posters = users[..cfg.n_paid_posters].to_vec();
        let templates = (0..cfg.template_count)
            .map(|_| {
                let p = rng.gen_range(3..=8);
                let q = rng.gen_range(6..=10);
                Template {
                    prefix_words: (p, p + rng.gen_range(2..=6)),
                    pitch_words: (q, q + rng.gen_range(2..=6)),
                    mention_in_question: rng.gen_bool(0.5),
                }
            })
            .collect();
        Generator {
            cfg,
            rng,
            vocab: Vocab::new(cfg),
            posters,
            regulars,
            templates,
        }
    }

    /// Skewed draw: low indices (heavy users, common words) dominate.
    fn skewed(&mut self, len: usize, power: f64) -> usize {
        let u: f64 = self.rng.gen();
        ((len as f64 * u.powf(power)) as usize).min(len - 1)
    }

    fn regular_user(&mut self) -> String {
        let i = self.skewed(self.regulars.len(), 1.5);
        self.regulars[i].clone()
    }

    fn poster(&mut self, progress: f64, avoid: Option<&str>) -> String {
        let (start, width) = sliding_window(self.posters.len(), progress);
        for _ in 0..8 {
            let p = &self.posters[start + self.rng.gen_range(0..width)];
            if Some(p.as_str()) != avoid {
                return p.clone();
            }
        }
        self.posters[start].clone()
    }

    fn normal_word(&mut self) -> String {
        let i = self.skewed(self.vocab.normal.len(), 2.0);
        self.vocab.normal[i].clone()
    }

    fn shared_word(&mut self) -> String {
        let i = self.rng.gen_range(0..self.vocab.shared.len());
        self.vocab.shared[i].clone()
    }

    fn pitch_word(&mut self, progress: f64) -> String {
        let (start, width) = sliding_window(self.vocab.campaign.len(), progress);
        let i = start + self.rng.gen_range(0..width);
        self.vocab.campaign[i].clone()
    }

    /// Sentence of `n` words, each shared with probability `shared_p`.
    fn sentence(&mut self, n: usize, shared_p: f64, out: &mut Vec<String>) {
        for _ in 0..n {
            let w = if self.rng.gen_bool(shared_p) {
                self.shared_word()
            } else {
                self.normal_word()
            };
            out.push(w);
        }
    }

    fn render(&mut self, words: Vec<String>) -> String {
        let mut text = String::new();
        for (i, w) in words.into_iter().enumerate() {
            if i > 0 {
                text.push_str(if self.rng.gen_bool(0.1) { ", " } else { " " });
            }
            text.push_str(&w);
        }
        if !text.is_empty() {
            text.push(if self.rng.gen_bool(0.3) { '?' } else { '.' });
        }
        text
    }

    fn geometric(&mut self, p_continue: f64, cap: u64) -> u64 {
        let mut n = 0;
        while n < cap && self.rng.gen_bool(p_continue) {
            n += 1;
        }
        n
    }

    fn session(&mut self, index: usize, close_time: i64, campaign: bool) -> QASession {
        let progress = if self.cfg.total_sessions > 1 {
            index as f64 / (self.cfg.total_sessions - 1) as f64
        } else {
            0.0
        };

        let (questioner, answerer, title, question, answer) = if campaign {
            let t = self.rng.gen_range(0..self.templates.len());
            let (pre_lo, pre_hi) = self.templates[t].prefix_words;
            let (pitch_lo, pitch_hi) = self.templates[t].pitch_words;
            let mention = self.templates[t].mention_in_question;

            let questioner = if self.rng.gen_bool(CAMPAIGN_QUESTIONER_FROM_POOL) {
                self.poster(progress, None)
            } else {
                self.regular_user()
            };
            let answerer = if self.rng.gen_bool(CAMPAIGN_ANSWERER_FROM_POOL) {
                self.poster(progress, Some(&questioner))
            } else {
                self.regular_user()
            };

            let mut title = Vec::new();
            let n = self.rng.gen_range(3..=6);
            self.sentence(n, 0.3, &mut title);
            let mut question = Vec::new();
            let n = self.rng.gen_range(6..=16);
            self.sentence(n, 0.3, &mut question);
            if mention {
                for _ in 0..self.rng.gen_range(1..=2) {
                    question.push(self.pitch_word(progress));
                }
            }
            let mut answer = Vec::new();
            let n = self.rng.gen_range(pre_lo..=pre_hi);
            self.sentence(n, 0.6, &mut answer);
            for _ in 0..self.rng.gen_range(pitch_lo..=pitch_hi) {
                answer.push(self.pitch_word(progress));
            }
            (questioner, answerer, title, question, answer)
        } else {
            let questioner = self.regular_user();
            let answerer = if self.rng.gen_bool(POSTER_ANSWERS_NORMAL) {
                self.poster(progress, None)
            } else {
                let mut a = self.regular_user();
                if a == questioner {
                    a = self.regular_user();
                }
                a
            };
            let mut title = Vec::new();
            let n = self.rng.gen_range(3..=6);
            self.sentence(n, 0.2, &mut title);
            let mut question = Vec::new();
            let n = self.rng.gen_range(6..=16);
            self.sentence(n, 0.2, &mut question);
            let mut answer = Vec::new();
            let n = self.rng.gen_range(10..=30);
            self.sentence(n, 0.2, &mut answer);
            (questioner, answerer, title, question, answer)
        };

        let interval = self
            .rng
            .gen_range(MIN_INTERVAL_SECS.ln()..MAX_INTERVAL_SECS.ln())
            .exp()
            .round() as i64;
        let likes = self.geometric(0.55, 60);
        let other_answers = self.geometric(0.6, 40);
        let category = CATEGORIES[self.rng.gen_range(0..CATEGORIES.len())].to_string();
        let rating = RATINGS[self.rng.gen_range(0..RATINGS.len())].to_string();

        QASession {
            url: format!("https://zhidao.example.com/question/{index:06}.html"),
            title: self.render(title),
            question_text: self.render(question),
            answer_text: self.render(answer),
            questioner_id: questioner,
            answerer_id: answerer,
            category: Some(category),
            ask_time: close_time - interval,
            answer_time: close_time,
            likes,
            other_answers,
            rating: Some(rating),
            label: Some(Label::from_bool(campaign)),
        }
    }
}

/// Generates a labeled corpus in strictly increasing close-time order. The
/// output is a pure function of `cfg`.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Vec<QASession>, CorpusError> {
    cfg.validate()?;
    let mut gen = Generator::new(cfg);
    let n_campaign = cfg.campaign_count();
    let mut is_campaign = vec![false; cfg.total_sessions];
    is_campaign[..n_campaign].iter_mut().for_each(|c| *c = true);
    is_campaign.shuffle(&mut gen.rng);

    let mut close = START_TIME;
    let mut out = Vec::with_capacity(cfg.total_sessions);
    for (i, campaign) in is_campaign.into_iter().enumerate() {
        close += gen.rng.gen_range(1..=2 * MEAN_CLOSE_GAP);
        out.push(gen.session(i, close, campaign));
    }
    Ok(out)
}
