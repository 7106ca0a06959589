//! Logistic regression over the three spam-grade features, trained by
//! full-batch gradient descent.

mod metrics;

pub use metrics::{confusion_metrics, roc_curve, ConfusionMetrics, RocPoint, DEFAULT_ROC_THRESHOLDS};

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Label;
use crate::features::FeatureVector;

pub const DEFAULT_THRESHOLD: f64 = 0.5;
/// Probabilities are clipped into [EPS, 1 - EPS] before taking logs.
pub const COST_EPS: f64 = 1e-12;

pub type Theta = [f64; 4];

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("training set holds a single class")]
    SingleClassTrainingSet,
    #[error("input holds a single class")]
    SingleClassInput,
    #[error("length mismatch: {0} predictions vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("malformed model file: {0}")]
    MalformedModel(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Numerically stable logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn dot(theta: &Theta, x: &[f64; 4]) -> f64 {
    theta[0] * x[0] + theta[1] * x[1] + theta[2] * x[2] + theta[3] * x[3]
}

/// A published detection model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub version: u64,
    /// intercept, SGqID, SGaID, SGtext
    pub theta: Theta,
    pub threshold: f64,
    pub trained_count: u64,
    /// SGtext assigned to sessions without any words.
    pub neutral_sgtext: f64,
}

/// Score plus thresholded label.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Verdict {
    pub score: f64,
    pub label: Label,
}

impl Model {
    /// Version 0: zero coefficients, used before any training has happened.
    pub fn cold() -> Self {
        Model {
            version: 0,
            theta: [0.0; 4],
            threshold: DEFAULT_THRESHOLD,
            trained_count: 0,
            neutral_sgtext: 0.0,
        }
    }

    pub fn is_cold(&self) -> bool {
        self.version == 0
    }

    /// Campaign score h(x) = sigmoid(theta . [1, sgqid, sgaid, sgtext]).
    pub fn campaign_score(&self, fv: &FeatureVector) -> f64 {
        sigmoid(dot(&self.theta, &fv.design_row()))
    }

    /// Campaign iff score >= threshold.
    pub fn classify(&self, fv: &FeatureVector) -> Verdict {
        let score = self.campaign_score(fv);
        Verdict {
            score,
            label: self.label_for(score),
        }
    }

    pub fn label_for(&self, score: f64) -> Label {
        Label::from_bool(score >= self.threshold)
    }

    /// Flat `key=value` text record.
    pub fn to_record(&self) -> String {
        let mut out = String::new();
        writeln!(out, "version={}", self.version).unwrap();
        for (i, t) in self.theta.iter().enumerate() {
            writeln!(out, "theta{}={:?}", i + 1, t).unwrap();
        }
        writeln!(out, "threshold={:?}", self.threshold).unwrap();
        writeln!(out, "trained_count={}", self.trained_count).unwrap();
        writeln!(out, "neutral_sgtext={:?}", self.neutral_sgtext).unwrap();
        out
    }

    pub fn from_record(text: &str) -> Result<Model, ClassifierError> {
        let bad = |m: String| ClassifierError::MalformedModel(m);
        let mut fields = std::collections::HashMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("expected key=value, got `{line}`")))?;
            fields.insert(k.trim(), v.trim());
        }
        let get = |k: &str| fields.get(k).copied().ok_or_else(|| bad(format!("missing `{k}`")));
        let real = |k: &str| -> Result<f64, ClassifierError> {
            let v: f64 = get(k)?.parse().map_err(|_| bad(format!("`{k}` is not a number")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(bad(format!("`{k}` is not finite")))
            }
        };
        let int = |k: &str| -> Result<u64, ClassifierError> {
            get(k)?.parse().map_err(|_| bad(format!("`{k}` is not an integer")))
        };
        let model = Model {
            version: int("version")?,
            theta: [real("theta1")?, real("theta2")?, real("theta3")?, real("theta4")?],
            threshold: real("threshold")?,
            trained_count: int("trained_count")?,
            neutral_sgtext: real("neutral_sgtext")?,
        };
        if !(model.threshold > 0.0 && model.threshold < 1.0) {
            return Err(bad("threshold must lie in (0, 1)".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ClassifierError> {
        std::fs::write(path, self.to_record())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Model, ClassifierError> {
        Model::from_record(&std::fs::read_to_string(path)?)
    }
}

/// Design matrix with an all-ones first column, and 0/1 targets.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingSet {
    rows: Vec<[f64; 4]>,
    targets: Vec<f64>,
}

impl TrainingSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_features<'a>(items: impl IntoIterator<Item = (&'a FeatureVector, Label)>) -> Self {
        let mut set = TrainingSet::new();
        for (fv, label) in items {
            set.push(fv, label);
        }
        set
    }

    pub fn push(&mut self, fv: &FeatureVector, label: Label) {
        self.rows.push(fv.design_row());
        self.targets.push(label.as_u8() as f64);
    }

    /// Adds a raw row; the intercept column is forced to 1.
    pub fn push_raw(&mut self, x: [f64; 3], label: Label) {
        self.rows.push([1.0, x[0], x[1], x[2]]);
        self.targets.push(label.as_u8() as f64);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[[f64; 4]] {
        &self.rows
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    fn has_both_classes(&self) -> bool {
        self.targets.contains(&1.0) && self.targets.contains(&0.0)
    }
}

fn row_loss(h: f64, y: f64) -> f64 {
    let h = h.clamp(COST_EPS, 1.0 - COST_EPS);
    // targets are exactly 0 or 1, so only one log term is live
    if y == 1.0 {
        -h.ln()
    } else {
        -(1.0 - h).ln()
    }
}

/// Mean cross-entropy with probabilities clipped into [EPS, 1-EPS].
pub fn cost(theta: &Theta, set: &TrainingSet) -> Result<f64, ClassifierError> {
    if set.is_empty() {
        return Err(ClassifierError::EmptyTrainingSet);
    }
    let sum: f64 = set
        .rows
        .iter()
        .zip(&set.targets)
        .map(|(x, &y)| row_loss(sigmoid(dot(theta, x)), y))
        .sum();
    Ok(sum / set.len() as f64)
}

/// Analytic gradient (1/m) X^T (h - y).
pub fn gradient(theta: &Theta, set: &TrainingSet) -> Result<Theta, ClassifierError> {
    cost_and_gradient(theta, set).map(|(_, g)| g)
}

/// Cost and gradient from a single pass over the rows.
pub fn cost_and_gradient(theta: &Theta, set: &TrainingSet) -> Result<(f64, Theta), ClassifierError> {
    if set.is_empty() {
        return Err(ClassifierError::EmptyTrainingSet);
    }
    let mut loss = 0.0;
    let mut g = [0.0; 4];
    for (x, &y) in set.rows.iter().zip(&set.targets) {
        let h = sigmoid(dot(theta, x));
        loss += row_loss(h, y);
        let r = h - y;
        for j in 0..4 {
            g[j] += r * x[j];
        }
    }
    let m = set.len() as f64;
    Ok((loss / m, g.map(|v| v / m)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GdParams {
    pub learning_rate: f64,
    pub max_iters: usize,
    /// Stop once |J(k+1) - J(k)| falls below this.
    pub tolerance: f64,
}

impl Default for GdParams {
    fn default() -> Self {
        GdParams {
            learning_rate: 0.1,
            max_iters: 20_000,
            tolerance: 1e-7,
        }
    }
}

/// Result of a gradient-descent run.
#[derive(Clone, Debug)]
pub struct Fit {
    pub theta: Theta,
    /// J before the first step, then after every step.
    pub cost_trace: Vec<f64>,
}

impl Fit {
    pub fn iterations(&self) -> usize {
        self.cost_trace.len() - 1
    }
}

/// Full-batch gradient descent from theta = 0.
pub fn fit(set: &TrainingSet, params: &GdParams) -> Result<Fit, ClassifierError> {
    if set.is_empty() {
        return Err(ClassifierError::EmptyTrainingSet);
    }
    if !set.has_both_classes() {
        return Err(ClassifierError::SingleClassTrainingSet);
    }
    let mut theta: Theta = [0.0; 4];
    let (mut prev, mut g) = cost_and_gradient(&theta, set)?;
    let mut trace = vec![prev];
    for _ in 0..params.max_iters {
        for j in 0..4 {
            theta[j] -= params.learning_rate * g[j];
        }
        let (next, next_g) = cost_and_gradient(&theta, set)?;
        trace.push(next);
        if (prev - next).abs() < params.tolerance {
            break;
        }
        prev = next;
        g = next_g;
    }
    Ok(Fit {
        theta,
        cost_trace: trace,
    })
}

/// Trains a model that will be published as `version`.
pub fn train(
    set: &TrainingSet,
    params: &GdParams,
    version: u64,
    neutral_sgtext: f64,
) -> Result<Model, ClassifierError> {
    let fit = fit(set, params)?;
    Ok(Model {
        version,
        theta: fit.theta,
        threshold: DEFAULT_THRESHOLD,
        trained_count: set.len() as u64,
        neutral_sgtext,
    })
}
