//! Classification metrics and multi-seed aggregation.
//!
//! Per-class precision/recall/F1 treat class 0 ("fake") as the positive
//! class for the confusion counts; headline numbers are unweighted macro
//! averages over both classes, and 0/0 ratios are defined as 0 so degenerate
//! classifiers stay comparable.

use ndarray::Array2;
use serde::Serialize;

use crate::dataset::Dataset;
use crate::error::{GlpnError, Result};

/// Confusion counts with class 0 ("fake") as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Count predictions against held-out labels over `eval_nodes` (typically the
/// test split). Every evaluated node must carry a held-out label.
pub fn confusion(preds: &[u8], ds: &Dataset, eval_nodes: &[usize]) -> Result<ConfusionMatrix> {
    if eval_nodes.is_empty() {
        return Err(GlpnError::EmptyEvalSet);
    }
    let mut cm = ConfusionMatrix { tp: 0, fp: 0, fn_: 0, tn: 0 };
    for &i in eval_nodes {
        let record = &ds.records()[i];
        let truth = record
            .label
            .ok_or_else(|| GlpnError::MissingLabel(record.id.clone()))?;
        match (preds[i], truth) {
            (0, 0) => cm.tp += 1,
            (0, 1) => cm.fp += 1,
            (1, 0) => cm.fn_ += 1,
            (1, 1) => cm.tn += 1,
            _ => unreachable!("binary predictions and labels"),
        }
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub class0: ClassMetrics,
    pub class1: ClassMetrics,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Derive accuracy, per-class precision/recall/F1, and their macro averages.
pub fn metrics(cm: &ConfusionMatrix) -> MetricsReport {
    let class0 = ClassMetrics {
        precision: ratio(cm.tp, cm.tp + cm.fp),
        recall: ratio(cm.tp, cm.tp + cm.fn_),
        f1: 0.0,
    };
    let class0 = ClassMetrics { f1: f1(class0.precision, class0.recall), ..class0 };
    let class1 = ClassMetrics {
        precision: ratio(cm.tn, cm.tn + cm.fn_),
        recall: ratio(cm.tn, cm.tn + cm.fp),
        f1: 0.0,
    };
    let class1 = ClassMetrics { f1: f1(class1.precision, class1.recall), ..class1 };
    MetricsReport {
        accuracy: ratio(cm.tp + cm.tn, cm.total()),
        macro_precision: (class0.precision + class1.precision) / 2.0,
        macro_recall: (class0.recall + class1.recall) / 2.0,
        macro_f1: (class0.f1 + class1.f1) / 2.0,
        class0,
        class1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Per-metric mean and unbiased sample standard deviation across runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AggregateReport {
    pub accuracy: MeanStd,
    pub macro_precision: MeanStd,
    pub macro_recall: MeanStd,
    pub macro_f1: MeanStd,
}

fn mean_std(values: &[f64]) -> MeanStd {
    // Identical inputs aggregate to themselves with zero deviation, exactly.
    if values.windows(2).all(|w| w[0] == w[1]) {
        return MeanStd { mean: values[0], std: 0.0 };
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    MeanStd { mean, std: (ss / (n - 1.0)).sqrt() }
}

/// Aggregate per-run reports. A single report aggregates to itself with zero
/// deviation; an empty input is an error.
pub fn aggregate(reports: &[MetricsReport]) -> Result<AggregateReport> {
    if reports.is_empty() {
        return Err(GlpnError::Config("cannot aggregate zero reports".into()));
    }
    let collect = |f: fn(&MetricsReport) -> f64| -> Vec<f64> { reports.iter().map(f).collect() };
    Ok(AggregateReport {
        accuracy: mean_std(&collect(|r| r.accuracy)),
        macro_precision: mean_std(&collect(|r| r.macro_precision)),
        macro_recall: mean_std(&collect(|r| r.macro_recall)),
        macro_f1: mean_std(&collect(|r| r.macro_f1)),
    })
}

/// One grid point of a sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SweepEntry {
    pub value: f64,
    pub aggregate: AggregateReport,
    pub runs: Vec<MetricsReport>,
}

/// A swept parameter with per-value aggregated results.
#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub parameter: String,
    pub grid: Vec<f64>,
    pub entries: Vec<SweepEntry>,
}

/// Convenience: accuracy of predictions over explicit per-node probabilities
/// is not needed; this extracts accuracy over an eval set directly.
pub fn accuracy_over(preds: &[u8], ds: &Dataset, eval_nodes: &[usize]) -> Result<f64> {
    Ok(metrics(&confusion(preds, ds, eval_nodes)?).accuracy)
}

/// Mean node probabilities are occasionally useful in diagnostics; keep the
/// helper close to the metrics it feeds.
pub fn argmax_classes(probs: &Array2<f64>) -> Vec<u8> {
    probs
        .rows()
        .into_iter()
        .map(|row| if row[1] > row[0] { 1u8 } else { 0u8 })
        .collect()
}
