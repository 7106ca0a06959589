//! Time-ordered replay with periodic retraining, the frozen-model baseline,
//! and retraining of the live store.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{
    self, confusion_metrics, ClassifierError, ConfusionMetrics, GdParams, Model, Theta, TrainingSet,
};
use crate::corpus::{sort_by_close_time, Label, QASession};
use crate::features::{feature_vector_words, sg_text_words, FeatureError, FeatureVector};
use crate::role::Role;
use crate::store::{Store, StoreError};
use crate::textstats::{distinct_words, CountState, StatsError};

#[derive(Debug, Error)]
pub enum AdaptiveError {
    #[error("corpus has {got} sessions, need more than the seed size {seed}")]
    CorpusTooSmall { got: usize, seed: usize },
    #[error("seed training set holds a single class")]
    SingleClassSeed,
    #[error("session `{0}` has no label")]
    Unlabeled(String),
    #[error("no new labels since the last retrain")]
    NoNewLabels,
    #[error("batch size must be positive")]
    ZeroBatch,
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReplayMode {
    /// absorb each tested batch and retrain
    Adaptive,
    /// keep the seed model and seed counts throughout
    Fixed,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReplayConfig {
    pub seed_size: usize,
    pub batch_size: usize,
    pub mode: ReplayMode,
    pub params: GdParams,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        ReplayConfig {
            seed_size: 200,
            batch_size: 200,
            mode: ReplayMode::Adaptive,
            params: GdParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationReport {
    pub iteration_index: usize,
    pub theta_snapshot: Theta,
    pub model_version: u64,
    pub metrics: ConfusionMetrics,
    /// size of the pool the scoring model was trained on
    pub training_size: usize,
    pub test_size: usize,
    /// positions of the tested sessions in close-time order
    pub test_range: Range<usize>,
}

/// Leave-one-out training set for a labeled pool whose labels are all
/// applied to `state`, plus the neutral SGtext for empty-text sessions (mean
/// leave-one-out SGtext over pool sessions that have words, 0 if none).
pub fn pool_training_set(
    pool: &[QASession],
    state: &CountState,
) -> Result<(TrainingSet, f64), AdaptiveError> {
    let prepared: Vec<(&QASession, Label, BTreeSet<String>)> = pool
        .iter()
        .map(|s| {
            let label = s.label.ok_or_else(|| AdaptiveError::Unlabeled(s.url.clone()))?;
            Ok((s, label, distinct_words(s)))
        })
        .collect::<Result<_, AdaptiveError>>()?;

    let (mut sum, mut n) = (0.0, 0usize);
    for (_, label, words) in &prepared {
        if !words.is_empty() {
            sum += sg_text_words(words, state, Some(*label), 0.0);
            n += 1;
        }
    }
    let neutral = if n > 0 { sum / n as f64 } else { 0.0 };

    let mut set = TrainingSet::new();
    for (s, label, words) in &prepared {
        let fv = feature_vector_words(s, words, state, Some(*label), neutral)?;
        set.push(&fv, *label);
    }
    Ok((set, neutral))
}

/// Trains on a labeled pool already applied to `state`.
pub fn train_pool(
    pool: &[QASession],
    state: &CountState,
    params: &GdParams,
    version: u64,
) -> Result<Model, AdaptiveError> {
    let (set, neutral) = pool_training_set(pool, state)?;
    Ok(classifier::train(&set, params, version, neutral)?)
}

/// Features of an incoming (unlabeled) session against the full state.
pub fn score_features(s: &QASession, state: &CountState, model: &Model) -> FeatureVector {
    let words = distinct_words(s);
    feature_vector_words(s, &words, state, None, model.neutral_sgtext)
        .expect("no exclusion cannot fail")
}

/// Replays a labeled corpus in close-time order.
///
/// The first `seed_size` sessions train model version 1. Every following
/// batch is scored against the counts and model as they stood before the
/// batch; in adaptive mode the batch's labels are then absorbed and the model
/// retrained. A final short batch is processed like any other.
pub fn replay(corpus: &[QASession], cfg: &ReplayConfig) -> Result<Vec<IterationReport>, AdaptiveError> {
    if cfg.batch_size == 0 {
        return Err(AdaptiveError::ZeroBatch);
    }
    if corpus.len() <= cfg.seed_size {
        return Err(AdaptiveError::CorpusTooSmall {
            got: corpus.len(),
            seed: cfg.seed_size,
        });
    }
    if let Some(s) = corpus.iter().find(|s| s.label.is_none()) {
        return Err(AdaptiveError::Unlabeled(s.url.clone()));
    }
    let mut sorted = corpus.to_vec();
    sort_by_close_time(&mut sorted);

    let seed = &sorted[..cfg.seed_size];
    let has = |l: Label| seed.iter().any(|s| s.label == Some(l));
    if !has(Label::Campaign) || !has(Label::Normal) {
        return Err(AdaptiveError::SingleClassSeed);
    }

    let mut state = CountState::rebuild(seed);
    let mut model = train_pool(seed, &state, &cfg.params, 1)?;
    let mut reports = Vec::new();
    let mut start = cfg.seed_size;
    while start < sorted.len() {
        let end = (start + cfg.batch_size).min(sorted.len());
        let batch = &sorted[start..end];

        let mut preds = Vec::with_capacity(batch.len());
        let mut truth = Vec::with_capacity(batch.len());
        for s in batch {
            let fv = score_features(s, &state, &model);
            preds.push(model.classify(&fv).label);
            truth.push(s.label.expect("checked above"));
        }
        reports.push(IterationReport {
            iteration_index: reports.len(),
            theta_snapshot: model.theta,
            model_version: model.version,
            metrics: confusion_metrics(&preds, &truth)?,
            training_size: model.trained_count as usize,
            test_size: batch.len(),
            test_range: start..end,
        });

        if cfg.mode == ReplayMode::Adaptive && end < sorted.len() {
            for s in batch {
                state.add_labeled(s)?;
            }
            model = train_pool(&sorted[..end], &state, &cfg.params, model.version + 1)?;
        }
        start = end;
    }
    Ok(reports)
}

/// Plot-ready table: one row per iteration. Undefined ratios are empty
/// fields.
pub fn report_csv(reports: &[IterationReport]) -> String {
    let mut out = String::from(
        "iteration,model_version,training_size,test_size,theta1,theta2,theta3,theta4,tp,fp,tn,fn,precision,recall,f_measure,accuracy\n",
    );
    let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
    for r in reports {
        let m = &r.metrics;
        writeln!(
            out,
            "{},{},{},{},{:?},{:?},{:?},{:?},{},{},{},{},{},{},{},{}",
            r.iteration_index,
            r.model_version,
            r.training_size,
            r.test_size,
            r.theta_snapshot[0],
            r.theta_snapshot[1],
            r.theta_snapshot[2],
            r.theta_snapshot[3],
            m.tp,
            m.fp,
            m.tn,
            m.fn_,
            opt(m.precision),
            opt(m.recall),
            opt(m.f_measure),
            opt(m.accuracy),
        )
        .unwrap();
    }
    out
}

/// Applies `new_labeled` to the store and publishes a model retrained on the
/// whole labeled pool, with version = previous + 1.
pub fn retrain(
    store: &mut Store,
    new_labeled: &[QASession],
    params: &GdParams,
) -> Result<Model, AdaptiveError> {
    for s in new_labeled {
        let label = s.label.ok_or_else(|| AdaptiveError::Unlabeled(s.url.clone()))?;
        store.upsert_session(s)?;
        store.set_label(&s.url, label, Role::Admin)?;
    }
    let job = RetrainJob::prepare(store)?;
    let model = job.run(params)?;
    job.publish(store, model.clone())?;
    Ok(model)
}

/// A retrain split into a short preparation under the writer, a long
/// training phase without it, and a short publication.
pub struct RetrainJob {
    pool: Vec<QASession>,
    counts: std::sync::Arc<CountState>,
    version: u64,
    consumed: u64,
}

impl RetrainJob {
    pub fn prepare(store: &Store) -> Result<RetrainJob, AdaptiveError> {
        let state = store.state();
        if state.pending_labels() == 0 {
            return Err(AdaptiveError::NoNewLabels);
        }
        let pool = state.labeled_sessions();
        let has = |l: Label| pool.iter().any(|s| s.label == Some(l));
        if !has(Label::Campaign) || !has(Label::Normal) {
            return Err(ClassifierError::SingleClassTrainingSet.into());
        }
        Ok(RetrainJob {
            pool,
            counts: std::sync::Arc::new(state.counts().clone()),
            version: state.latest_version() + 1,
            consumed: state.pending_labels(),
        })
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn pool_size(&self) -> usize {
        self.pool.len()
    }

    pub fn run(&self, params: &GdParams) -> Result<Model, AdaptiveError> {
        train_pool(&self.pool, &self.counts, params, self.version)
    }

    pub fn publish(&self, store: &mut Store, model: Model) -> Result<(), AdaptiveError> {
        store.publish_model(model, self.consumed)?;
        Ok(())
    }
}

/// When the live service retrains on its own.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RetrainTrigger {
    /// retrain once this many label changes are pending; `None` = only on
    /// administrator request
    pub every: Option<u64>,
}

impl Default for RetrainTrigger {
    fn default() -> Self {
        RetrainTrigger { every: Some(200) }
    }
}

impl RetrainTrigger {
    pub fn due(&self, pending: u64) -> bool {
        self.every.is_some_and(|k| k > 0 && pending >= k)
    }
}

/// Seeded shuffle split into (train, test).
pub fn holdout_split(
    corpus: &[QASession],
    train_size: usize,
    seed: u64,
) -> (Vec<QASession>, Vec<QASession>) {
    let mut shuffled = corpus.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = shuffled.split_off(train_size.min(shuffled.len()));
    (shuffled, test)
}

/// Scores of a held-out set under a model trained on `train`.
pub struct HoldoutScores {
    pub model: Model,
    pub scores: Vec<f64>,
    pub labels: Vec<Label>,
}

pub fn holdout_scores(
    train: &[QASession],
    test: &[QASession],
    params: &GdParams,
) -> Result<HoldoutScores, AdaptiveError> {
    let state = CountState::rebuild(train);
    let model = train_pool(train, &state, params, 1)?;
    let mut scores = Vec::with_capacity(test.len());
    let mut labels = Vec::with_capacity(test.len());
    for s in test {
        let label = s.label.ok_or_else(|| AdaptiveError::Unlabeled(s.url.clone()))?;
        scores.push(model.campaign_score(&score_features(s, &state, &model)));
        labels.push(label);
    }
    Ok(HoldoutScores { model, scores, labels })
}
