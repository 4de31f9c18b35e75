//! VQA metrics: closed-ended accuracy, open-ended token recall and their
//! question-count weighted overall score.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::stats::BootstrapResult;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("no items to score")]
    Empty,
    #[error("prediction/gold length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("gold answer normalizes to nothing")]
    EmptyGold,
    #[error("question counts are both zero")]
    NoQuestions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum QType {
    Open,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct VqaItem {
    pub id: String,
    /// Image path (relative to the dataset file) or an opaque image id.
    pub image: String,
    pub question: String,
    pub answer: String,
    pub qtype: QType,
}

const PUNCTUATION: &[char] = &['.', ',', ';', ':', '!', '?', '"', '\'', '(', ')'];

/// Lower-cases, strips punctuation, splits on whitespace and maps yes/no
/// synonyms.
pub fn normalize_answer(s: &str) -> Vec<String> {
    let cleaned: String = s
        .to_lowercase()
        .chars()
        .filter(|c| !PUNCTUATION.contains(c))
        .collect();
    cleaned
        .split_whitespace()
        .map(|t| match t {
            "yeah" | "yep" | "true" => "yes".to_string(),
            "nope" | "false" => "no".to_string(),
            other => other.to_string(),
        })
        .collect()
}

/// First normalized tokens agree, or the whole normalized sequences do.
pub fn closed_match(pred: &str, gold: &str) -> bool {
    let p = normalize_answer(pred);
    let g = normalize_answer(gold);
    p == g || matches!((p.first(), g.first()), (Some(a), Some(b)) if a == b)
}

pub fn closed_accuracy<S: AsRef<str>>(preds: &[S], golds: &[S]) -> Result<f64, EvalError> {
    if preds.len() != golds.len() {
        return Err(EvalError::LengthMismatch(preds.len(), golds.len()));
    }
    if preds.is_empty() {
        return Err(EvalError::Empty);
    }
    let hits = preds
        .iter()
        .zip(golds)
        .filter(|(p, g)| closed_match(p.as_ref(), g.as_ref()))
        .count();
    Ok(hits as f64 / preds.len() as f64)
}

/// `|set(gold) ∩ set(pred)| / |set(gold)|` over normalized tokens.
pub fn token_recall(pred: &str, gold: &str) -> Result<f64, EvalError> {
    let gold: BTreeSet<String> = normalize_answer(gold).into_iter().collect();
    if gold.is_empty() {
        return Err(EvalError::EmptyGold);
    }
    let pred: BTreeSet<String> = normalize_answer(pred).into_iter().collect();
    Ok(gold.intersection(&pred).count() as f64 / gold.len() as f64)
}

/// `(n_open * open_recall + n_closed * closed_acc) / (n_open + n_closed)`.
pub fn overall_score(
    open_recall: f64,
    closed_acc: f64,
    n_open: usize,
    n_closed: usize,
) -> Result<f64, EvalError> {
    let n = n_open + n_closed;
    if n == 0 {
        return Err(EvalError::NoQuestions);
    }
    Ok((n_open as f64 * open_recall + n_closed as f64 * closed_acc) / n as f64)
}

/// Outcome for one item under one decoding configuration.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ItemRecord {
    pub id: String,
    pub qtype: QType,
    pub gold: String,
    pub prediction: Option<String>,
    /// 0/1 for closed items, recall for open ones; `None` when failed or
    /// excluded.
    pub score: Option<f64>,
    pub error: Option<String>,
}

impl ItemRecord {
    /// Scores a finished prediction. Open items with an empty gold answer
    /// are kept but unscored.
    pub fn scored(id: String, qtype: QType, gold: String, prediction: String) -> Self {
        let (score, error) = match qtype {
            QType::Closed => (
                Some(if closed_match(&prediction, &gold) {
                    1.0
                } else {
                    0.0
                }),
                None,
            ),
            QType::Open => match token_recall(&prediction, &gold) {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(e.to_string())),
            },
        };
        ItemRecord {
            id,
            qtype,
            gold,
            prediction: Some(prediction),
            score,
            error,
        }
    }

    pub fn failed(id: String, qtype: QType, gold: String, error: String) -> Self {
        ItemRecord {
            id,
            qtype,
            gold,
            prediction: None,
            score: None,
            error: Some(error),
        }
    }

    pub fn is_failed(&self) -> bool {
        self.prediction.is_none()
    }

    pub fn is_excluded(&self) -> bool {
        self.prediction.is_some() && self.score.is_none()
    }
}

/// Paired significance of a report against the baseline.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Significance {
    /// Closed items where only the baseline / only this run was correct.
    pub closed_baseline_only: u64,
    pub closed_candidate_only: u64,
    pub mcnemar_exact_p: f64,
    pub mcnemar_chi2_p: f64,
    pub open_bootstrap: Option<BootstrapResult>,
    pub overall_bootstrap: Option<BootstrapResult>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalReport {
    pub label: String,
    pub strategy: String,
    pub alpha: Option<f64>,
    pub open_recall: f64,
    pub closed_acc: f64,
    pub overall: f64,
    pub n_open: usize,
    pub n_closed: usize,
    pub n_failed: usize,
    pub n_excluded: usize,
    pub delta_vs_baseline: Option<f64>,
    pub significance: Option<Significance>,
    pub items: Vec<ItemRecord>,
}

impl EvalReport {
    /// Aggregates per-item records. Failed and excluded items are counted
    /// but kept out of every denominator. With no scored items the metrics
    /// are reported as zero.
    pub fn aggregate(
        label: impl Into<String>,
        strategy: impl Into<String>,
        alpha: Option<f64>,
        items: Vec<ItemRecord>,
    ) -> Self {
        let mean_of = |qtype: QType| {
            let scores: Vec<f64> = items
                .iter()
                .filter(|r| r.qtype == qtype)
                .filter_map(|r| r.score)
                .collect();
            let n = scores.len();
            let mean = if n == 0 {
                0.0
            } else {
                scores.iter().sum::<f64>() / n as f64
            };
            (mean, n)
        };
        let (open_recall, n_open) = mean_of(QType::Open);
        let (closed_acc, n_closed) = mean_of(QType::Closed);
        let overall = overall_score(open_recall, closed_acc, n_open, n_closed).unwrap_or(0.0);
        EvalReport {
            label: label.into(),
            strategy: strategy.into(),
            alpha,
            open_recall,
            closed_acc,
            overall,
            n_open,
            n_closed,
            n_failed: items.iter().filter(|r| r.is_failed()).count(),
            n_excluded: items.iter().filter(|r| r.is_excluded()).count(),
            delta_vs_baseline: None,
            significance: None,
            items,
        }
    }
}
