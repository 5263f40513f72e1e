//! Ablation baselines: classic label propagation and the label-free GCN.

use ndarray::Array2;

use crate::dataset::Dataset;
use crate::error::{GlpnError, Result};
use crate::eval::{confusion, metrics, ConfusionMatrix, MetricsReport};
use crate::gcn::{predict, train, GcnModel, MaskMode, TrainConfig};
use crate::graph::NormalizedAdjacency;
use crate::labels::{LabelAssignment, Provenance};

/// Settings for classic label propagation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpConfig {
    /// Number of propagation iterations (K). Cost is O(K * M) on a graph
    /// with M edges.
    pub iterations: usize,
    /// Re-fix labeled rows to their one-hot values after every step.
    pub clamp: bool,
}

impl Default for LpConfig {
    fn default() -> Self {
        Self { iterations: 50, clamp: true }
    }
}

/// Propagation result: raw class scores, argmax classes (ties toward class
/// 0), and whether any label mass reached each node.
#[derive(Debug, Clone, PartialEq)]
pub struct LpOutcome {
    pub scores: Array2<f64>,
    pub classes: Vec<u8>,
    /// False for nodes no label mass ever reached (their scores stay zero
    /// and the class falls back to the tie rule).
    pub reached: Vec<bool>,
}

/// Iterate `F <- A F`, optionally re-clamping labeled rows, starting from
/// `f0`. Shared by classic propagation and the propagation-over-model-output
/// baseline.
pub fn propagate(
    a_hat: &NormalizedAdjacency,
    f0: Array2<f64>,
    clamp_rows: Option<&LabelAssignment>,
    iterations: usize,
) -> Result<Array2<f64>> {
    if a_hat.n() != f0.nrows() {
        return Err(GlpnError::ShapeMismatch(format!(
            "adjacency covers {} nodes, scores cover {}",
            a_hat.n(),
            f0.nrows()
        )));
    }
    if let Some(labels) = clamp_rows {
        if labels.n() != f0.nrows() {
            return Err(GlpnError::ShapeMismatch(
                "clamp labels must cover the same nodes as the scores".into(),
            ));
        }
    }
    let mut f = f0;
    for _ in 0..iterations {
        f = a_hat.matmul(&f);
        if let Some(labels) = clamp_rows {
            for (i, p) in labels.provenance().iter().enumerate() {
                if *p != Provenance::None {
                    f.row_mut(i).assign(&labels.row(i));
                }
            }
        }
    }
    Ok(f)
}

/// Classic label propagation from one-hot seeds: `F0` is the label matrix,
/// each step multiplies by the normalized adjacency and (when configured)
/// re-clamps labeled rows. Requires at least one labeled node.
pub fn classic_lp(
    a_hat: &NormalizedAdjacency,
    labels: &LabelAssignment,
    cfg: &LpConfig,
) -> Result<LpOutcome> {
    if cfg.iterations == 0 {
        return Err(GlpnError::Config("iterations must be >= 1".into()));
    }
    if labels.provenance().iter().all(|p| *p == Provenance::None) {
        return Err(GlpnError::NoLabeledNodes);
    }
    let clamp = cfg.clamp.then_some(labels);
    let scores = propagate(a_hat, labels.vectors().clone(), clamp, cfg.iterations)?;
    let classes = scores
        .rows()
        .into_iter()
        .map(|row| if row[1] > row[0] { 1u8 } else { 0u8 })
        .collect();
    let reached = scores.rows().into_iter().map(|row| row.sum() > 0.0).collect();
    Ok(LpOutcome { scores, classes, reached })
}

/// What the label-free baseline produces: held-out metrics, the confusion
/// counts behind them, and the trained model.
#[derive(Debug, Clone)]
pub struct LabelFreeOutcome {
    pub metrics: MetricsReport,
    pub confusion: ConfusionMatrix,
    pub model: GcnModel,
    pub test_classes: Vec<u8>,
}

/// The label-free GCN baseline: the label block is forced to zero at train
/// and inference time (keeping `d_in` comparable) and the loss covers every
/// train node; no mask is involved.
pub fn label_free_gcn(
    ds: &Dataset,
    a_hat: &NormalizedAdjacency,
    cfg: &TrainConfig,
) -> Result<LabelFreeOutcome> {
    let zero = LabelAssignment::all_zero(ds.len());
    let cfg = TrainConfig { mask_mode: MaskMode::Off, ..cfg.clone() };
    let (model, _) = train(ds, a_hat, &zero, &cfg)?;
    let prediction = predict(ds, a_hat, &zero, &model)?;
    let cm = confusion(&prediction.classes, ds, &ds.test_indices())?;
    Ok(LabelFreeOutcome {
        metrics: metrics(&cm),
        confusion: cm,
        model,
        test_classes: prediction.classes,
    })
}
