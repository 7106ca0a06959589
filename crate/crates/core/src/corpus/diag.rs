//! Distribution diagnostics for the engagement signals that turned out not to
//! separate campaign sessions from normal ones: interval post time, number of
//! other answers and number of likes.

use super::{CorpusError, Label, QASession};

/// KS statistic below which a signal is reported as non-separating.
pub const NON_SEPARATING_KS: f64 = 0.1;

/// Seconds between the question and the best answer.
pub fn interval_post_time(s: &QASession) -> i64 {
    s.answer_time - s.ask_time
}

/// Empirical CDF over distinct values, ascending.
#[derive(Clone, Debug, PartialEq)]
pub struct CdfTable {
    pub points: Vec<(f64, f64)>,
}

impl CdfTable {
    /// Evaluates F(x) = P(X <= x).
    pub fn eval(&self, x: f64) -> f64 {
        let idx = self.points.partition_point(|(v, _)| *v <= x);
        if idx == 0 {
            0.0
        } else {
            self.points[idx - 1].1
        }
    }
}

pub fn empirical_cdf(values: &[f64]) -> Result<CdfTable, CorpusError> {
    if values.is_empty() {
        return Err(CorpusError::EmptyInput);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut points: Vec<(f64, f64)> = Vec::new();
    for (i, v) in sorted.iter().enumerate() {
        let cum = (i + 1) as f64 / n;
        match points.last_mut() {
            Some(last) if last.0 == *v => last.1 = cum,
            _ => points.push((*v, cum)),
        }
    }
    // the division above can leave the final point a hair off 1 for large n
    if let Some(last) = points.last_mut() {
        last.1 = 1.0;
    }
    Ok(CdfTable { points })
}

/// Two-sample Kolmogorov-Smirnov statistic sup |F_a - F_b|.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> Result<f64, CorpusError> {
    let fa = empirical_cdf(a)?;
    let fb = empirical_cdf(b)?;
    let mut sup: f64 = 0.0;
    for (x, _) in fa.points.iter().chain(fb.points.iter()) {
        sup = sup.max((fa.eval(*x) - fb.eval(*x)).abs());
    }
    Ok(sup)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DiagnosticFeature {
    IntervalPostTime,
    OtherAnswers,
    Likes,
}

impl DiagnosticFeature {
    pub const ALL: [DiagnosticFeature; 3] = [
        DiagnosticFeature::IntervalPostTime,
        DiagnosticFeature::OtherAnswers,
        DiagnosticFeature::Likes,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DiagnosticFeature::IntervalPostTime => "interval_post_time",
            DiagnosticFeature::OtherAnswers => "other_answers",
            DiagnosticFeature::Likes => "likes",
        }
    }

    pub fn extract(self, s: &QASession) -> f64 {
        match self {
            DiagnosticFeature::IntervalPostTime => interval_post_time(s) as f64,
            DiagnosticFeature::OtherAnswers => s.other_answers as f64,
            DiagnosticFeature::Likes => s.likes as f64,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Separation {
    Separating,
    NonSeparating,
}

impl Separation {
    pub fn as_str(self) -> &'static str {
        match self {
            Separation::Separating => "separating",
            Separation::NonSeparating => "non-separating",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Diagnostic {
    pub feature: DiagnosticFeature,
    pub campaign: CdfTable,
    pub normal: CdfTable,
    pub ks: f64,
    pub verdict: Separation,
}

/// Per-class CDFs and the KS verdict for every diagnostic signal. Unlabeled
/// sessions are ignored; both classes must be present.
pub fn class_diagnostics(sessions: &[QASession]) -> Result<Vec<Diagnostic>, CorpusError> {
    DiagnosticFeature::ALL
        .iter()
        .map(|&feature| {
            let (mut camp, mut norm) = (Vec::new(), Vec::new());
            for s in sessions {
                match s.label {
                    Some(Label::Campaign) => camp.push(feature.extract(s)),
                    Some(Label::Normal) => norm.push(feature.extract(s)),
                    None => {}
                }
            }
            let ks = ks_statistic(&camp, &norm)?;
            Ok(Diagnostic {
                feature,
                campaign: empirical_cdf(&camp)?,
                normal: empirical_cdf(&norm)?,
                ks,
                verdict: if ks < NON_SEPARATING_KS {
                    Separation::NonSeparating
                } else {
                    Separation::Separating
                },
            })
        })
        .collect()
}
