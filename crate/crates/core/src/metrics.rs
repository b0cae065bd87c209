//! Four-class confusion matrix and derived scores.
//!
//! Per-class scores are one-vs-rest. A class that is never predicted gets
//! precision 0; a class with no true members gets sensitivity 0; F1 is 0
//! whenever precision + sensitivity is 0.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal_io::Label;

const K: usize = Label::COUNT;

/// Rows are true classes, columns predictions, both in `N, A, O, ~` order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; K]; K],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..K).map(|i| self.counts[i][i]).sum()
    }

    pub fn add(&mut self, truth: Label, predicted: Label) {
        self.counts[truth.index()][predicted.index()] += 1;
    }

    /// `(tp, fp, fn, tn)` for one class against the rest.
    pub fn one_vs_rest(&self, class: usize) -> (u64, u64, u64, u64) {
        let tp = self.counts[class][class];
        let predicted: u64 = (0..K).map(|r| self.counts[r][class]).sum();
        let actual: u64 = self.counts[class].iter().sum();
        let fp = predicted - tp;
        let fn_ = actual - tp;
        (tp, fp, fn_, self.total() - tp - fp - fn_)
    }

    pub fn class_scores(&self, class: usize) -> ClassScores {
        let (tp, fp, fn_, tn) = self.one_vs_rest(class);
        let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let sensitivity = ratio(tp, tp + fn_);
        ClassScores {
            precision,
            sensitivity,
            specificity: ratio(tn, tn + fp),
            f1: f1(precision, sensitivity),
        }
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    #[default]
    Macro,
    Micro,
}

pub fn confusion_matrix(predictions: &[Label], labels: &[Label]) -> Result<ConfusionMatrix> {
    if predictions.len() != labels.len() {
        return Err(Error::Validation(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Validation("no predictions".into()));
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &t) in predictions.iter().zip(labels) {
        cm.add(t, p);
    }
    Ok(cm)
}

/// Unweighted mean of the per-class scores.
pub fn macro_metrics(cm: &ConfusionMatrix) -> Metrics {
    averaged_metrics(cm, Averaging::Macro)
}

pub fn averaged_metrics(cm: &ConfusionMatrix, averaging: Averaging) -> Metrics {
    let total = cm.total();
    let accuracy = if total == 0 { 0.0 } else { cm.trace() as f64 / total as f64 };
    match averaging {
        Averaging::Macro => {
            let s: Vec<ClassScores> = (0..K).map(|c| cm.class_scores(c)).collect();
            let mean = |f: fn(&ClassScores) -> f64| s.iter().map(f).sum::<f64>() / K as f64;
            Metrics {
                accuracy,
                precision: mean(|c| c.precision),
                sensitivity: mean(|c| c.sensitivity),
                specificity: mean(|c| c.specificity),
                f1: mean(|c| c.f1),
            }
        }
        Averaging::Micro => {
            let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
            for c in 0..K {
                let (a, b, d, e) = cm.one_vs_rest(c);
                tp += a;
                fp += b;
                fn_ += d;
                tn += e;
            }
            let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
            let precision = ratio(tp, tp + fp);
            let sensitivity = ratio(tp, tp + fn_);
            Metrics {
                accuracy,
                precision,
                sensitivity,
                specificity: ratio(tn, tn + fp),
                f1: f1(precision, sensitivity),
            }
        }
    }
}

/// Challenge-style overall score: mean F1 over N, A and O (noise excluded).
pub fn cinc_overall_f1(cm: &ConfusionMatrix) -> f64 {
    [Label::N, Label::A, Label::O]
        .iter()
        .map(|l| cm.class_scores(l.index()).f1)
        .sum::<f64>()
        / 3.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBytes {
    pub dense_f32_bytes: usize,
    pub stored_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub confusion_matrix: ConfusionMatrix,
    pub metrics: Metrics,
    pub averaging: Averaging,
    pub cinc_f1: f64,
    pub model_sparsity: f64,
    pub feature_map_sparsity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_bytes: Option<ModelBytes>,
}

impl EvalReport {
    pub fn new(cm: ConfusionMatrix, model_sparsity: f64, feature_map_sparsity: Option<f64>) -> Self {
        Self {
            confusion_matrix: cm,
            metrics: macro_metrics(&cm),
            averaging: Averaging::Macro,
            cinc_f1: cinc_overall_f1(&cm),
            model_sparsity,
            feature_map_sparsity,
            model_bytes: None,
        }
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
