//! Per-class precision/recall/Fβ and the weighted, macro and micro
//! aggregates, laid out as five metrics under three averaging modes.
//!
//! Ratios with a zero denominator are defined as 0. Fβ is computed from
//! counts, `(1+β²)TP / ((1+β²)TP + β²FN + FP)`, which avoids the 0/0 of the
//! precision/recall form and keeps the micro identities exact in floating
//! point.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `K x K` counts, rows = true class, columns = predicted class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|c| self.get(c, c)).sum()
    }

    fn support(&self, c: usize) -> u64 {
        (0..self.classes).map(|p| self.get(c, p)).sum()
    }

    fn predicted(&self, c: usize) -> u64 {
        (0..self.classes).map(|t| self.get(t, c)).sum()
    }
}

pub fn confusion(y_true: &[usize], y_pred: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Contract(format!(
            "{} true labels but {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    if y_true.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut counts = vec![0; classes * classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if let Some(&label) = [t, p].iter().find(|&&l| l >= classes) {
            return Err(Error::Label { label, classes });
        }
        counts[t * classes + p] += 1;
    }
    Ok(ConfusionMatrix { classes, counts })
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn fbeta_counts(tp: f64, fp: f64, fn_: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    ratio((1.0 + b2) * tp, (1.0 + b2) * tp + b2 * fn_ + fp)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub f2: f64,
    pub support: u64,
}

pub fn per_class_prf(matrix: &ConfusionMatrix) -> Vec<ClassScores> {
    (0..matrix.classes)
        .map(|c| {
            let tp = matrix.get(c, c) as f64;
            let support = matrix.support(c);
            let fn_ = support as f64 - tp;
            let fp = matrix.predicted(c) as f64 - tp;
            ClassScores {
                precision: ratio(tp, tp + fp),
                recall: ratio(tp, tp + fn_),
                f1: fbeta_counts(tp, fp, fn_, 1.0),
                f2: fbeta_counts(tp, fp, fn_, 2.0),
                support,
            }
        })
        .collect()
}

/// Five metrics under one averaging mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Averaged {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub f2: f64,
    pub accuracy: f64,
}

impl Averaged {
    pub fn values(&self) -> [f64; 5] {
        [self.precision, self.recall, self.f1, self.f2, self.accuracy]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub weighted: Averaged,
    #[serde(rename = "macro")]
    pub macro_avg: Averaged,
    pub micro: Averaged,
    pub mean_of_15: f64,
}

impl MetricsReport {
    /// The 15 entries in table order: weighted, macro, micro; each as
    /// precision, recall, F1, F2, accuracy.
    pub fn values(&self) -> [f64; 15] {
        let mut out = [0.0; 15];
        out[..5].copy_from_slice(&self.weighted.values());
        out[5..10].copy_from_slice(&self.macro_avg.values());
        out[10..].copy_from_slice(&self.micro.values());
        out
    }
}

/// Arithmetic mean of the 15 table entries.
pub fn mean_of_15(values: &[f64; 15]) -> f64 {
    values.iter().sum::<f64>() / 15.0
}

pub fn report_from_matrix(matrix: &ConfusionMatrix) -> MetricsReport {
    let per_class = per_class_prf(matrix);
    let k = matrix.classes as f64;
    let n = matrix.total() as f64;
    let trace = matrix.trace() as f64;

    let macro_of = |f: fn(&ClassScores) -> f64| per_class.iter().map(f).sum::<f64>() / k;
    let weighted_of = |f: fn(&ClassScores) -> f64| {
        ratio(per_class.iter().map(|s| s.support as f64 * f(s)).sum::<f64>(), n)
    };

    let macro_recall = macro_of(|s| s.recall);
    let macro_avg = Averaged {
        precision: macro_of(|s| s.precision),
        recall: macro_recall,
        f1: macro_of(|s| s.f1),
        f2: macro_of(|s| s.f2),
        accuracy: macro_recall,
    };

    // support-weighted recall is Σ TP_c / N, i.e. overall accuracy
    let accuracy = ratio(trace, n);
    let weighted = Averaged {
        precision: weighted_of(|s| s.precision),
        recall: accuracy,
        f1: weighted_of(|s| s.f1),
        f2: weighted_of(|s| s.f2),
        accuracy,
    };

    let errors = n - trace;
    let micro = Averaged {
        precision: ratio(trace, trace + errors),
        recall: ratio(trace, trace + errors),
        f1: fbeta_counts(trace, errors, errors, 1.0),
        f2: fbeta_counts(trace, errors, errors, 2.0),
        accuracy,
    };

    let mut report = MetricsReport {
        weighted,
        macro_avg,
        micro,
        mean_of_15: 0.0,
    };
    report.mean_of_15 = mean_of_15(&report.values());
    report
}

pub const CLASSES: usize = 3;

/// Full metric battery for three-class severity predictions.
pub fn report(y_true: &[usize], y_pred: &[usize]) -> Result<MetricsReport> {
    Ok(report_from_matrix(&confusion(y_true, y_pred, CLASSES)?))
}

#[derive(Debug, Deserialize, Serialize)]
struct PredictionRow {
    index: usize,
    #[serde(rename = "true")]
    truth: usize,
    pred: usize,
}

/// Reads a `index,true,pred` CSV into `(y_true, y_pred)` ordered by index.
pub fn read_predictions(path: &Path) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["index", "true", "pred"] {
        return Err(Error::Format(format!(
            "{}: expected header index,true,pred",
            path.display()
        )));
    }
    let mut rows: Vec<PredictionRow> = reader
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| csv_error(path, e))?;
    rows.sort_by_key(|r| r.index);
    Ok(rows.into_iter().map(|r| (r.truth, r.pred)).unzip())
}

pub fn write_predictions(path: &Path, y_true: &[usize], y_pred: &[usize]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for (index, (&truth, &pred)) in y_true.iter().zip(y_pred).enumerate() {
        writer
            .serialize(PredictionRow { index, truth, pred })
            .map_err(|e| csv_error(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Format(format!("{}: {e}", path.display()))
}
