//! Label vectors, the per-epoch random mask, and augmented node features.
//!
//! Every node carries a C-dimensional label block: an exact one-hot of its
//! ground-truth label (train nodes), an exact one-hot of its filtered pseudo
//! label (high-confidence test nodes), or zeros. During training the blocks
//! of a random `floor(rho * N)` subset are zeroed; at inference the blocks
//! are used unmasked.

use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dataset::{Dataset, Split};
use crate::error::{GlpnError, Result};
use crate::pseudo::PseudoLabelSet;

/// Binary task: fake (0) vs real (1).
pub const NUM_CLASSES: usize = 2;

/// Where a node's label block came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Truth,
    Pseudo,
    None,
}

/// Per-node label vectors with provenance. Rows are exact one-hots or zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelAssignment {
    vectors: Array2<f64>,
    provenance: Vec<Provenance>,
}

impl LabelAssignment {
    pub fn n(&self) -> usize {
        self.provenance.len()
    }

    pub fn vectors(&self) -> &Array2<f64> {
        &self.vectors
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.vectors.row(i)
    }

    /// An all-zero assignment (used by the label-free baseline).
    pub fn all_zero(n: usize) -> Self {
        Self {
            vectors: Array2::zeros((n, NUM_CLASSES)),
            provenance: vec![Provenance::None; n],
        }
    }
}

/// Build per-node label vectors: one-hot truth for train nodes, one-hot
/// pseudo labels for filtered test nodes, zeros otherwise. Held-out test
/// labels are never consulted. `pseudo` is expected to be already
/// confidence-filtered.
pub fn build_labels(ds: &Dataset, pseudo: &PseudoLabelSet) -> Result<LabelAssignment> {
    let n = ds.len();
    let mut vectors = Array2::<f64>::zeros((n, NUM_CLASSES));
    let mut provenance = vec![Provenance::None; n];
    for (i, r) in ds.records().iter().enumerate() {
        match r.split {
            Split::Train => {
                if pseudo.get(&r.id).is_some() {
                    return Err(GlpnError::Invariant {
                        id: r.id.clone(),
                        rule: "pseudo label collides with a truly labeled train node".into(),
                    });
                }
                let label = r.label.expect("train records are labeled");
                vectors[[i, label as usize]] = 1.0;
                provenance[i] = Provenance::Truth;
            }
            Split::Test => {
                if let Some(v) = pseudo.get(&r.id) {
                    vectors[[i, v.pred as usize]] = 1.0;
                    provenance[i] = Provenance::Pseudo;
                }
            }
        }
    }
    Ok(LabelAssignment { vectors, provenance })
}

/// The per-epoch random mask: `floor(rho * n)` node indices whose label
/// blocks are zeroed, with `m_i = 0` exactly for masked nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPlan {
    epoch_seed: u64,
    rho: f64,
    masked: Vec<usize>,
    is_masked: Vec<bool>,
}

impl MaskPlan {
    pub fn epoch_seed(&self) -> u64 {
        self.epoch_seed
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Masked node indices, ascending.
    pub fn masked(&self) -> &[usize] {
        &self.masked
    }

    pub fn is_masked(&self, i: usize) -> bool {
        self.is_masked[i]
    }

    /// The binary mask scalar: 0 for masked nodes, 1 otherwise.
    pub fn m(&self, i: usize) -> f64 {
        if self.is_masked[i] {
            0.0
        } else {
            1.0
        }
    }

    pub fn n(&self) -> usize {
        self.is_masked.len()
    }
}

/// Draw a uniformly random `floor(rho * n)`-subset without replacement,
/// fully determined by `(epoch_seed, n, rho)`.
pub fn draw_mask(n: usize, rho: f64, epoch_seed: u64) -> Result<MaskPlan> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(GlpnError::Config(format!("rho {rho} must lie in [0, 1]")));
    }
    let k = (rho * n as f64).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed);
    let mut indices: Vec<usize> = (0..n).collect();
    // Partial Fisher-Yates: after k swaps the prefix is a uniform k-subset.
    for i in 0..k {
        let j = rng.random_range(i..n);
        indices.swap(i, j);
    }
    let mut masked: Vec<usize> = indices[..k].to_vec();
    masked.sort_unstable();
    let mut is_masked = vec![false; n];
    for &i in &masked {
        is_masked[i] = true;
    }
    Ok(MaskPlan { epoch_seed, rho, masked, is_masked })
}

/// Apply a mask to label vectors: masked rows become zero, other rows are
/// copied unchanged. The assignment itself is untouched.
pub fn apply_mask(labels: &LabelAssignment, plan: &MaskPlan) -> Result<Array2<f64>> {
    if labels.n() != plan.n() {
        return Err(GlpnError::ShapeMismatch(format!(
            "labels cover {} nodes, mask covers {}",
            labels.n(),
            plan.n()
        )));
    }
    let mut out = labels.vectors().clone();
    for &i in plan.masked() {
        out.row_mut(i).fill(0.0);
    }
    Ok(out)
}

/// Node features with the label block appended: row i is `t_i ++ v_i ++ y'_i`.
/// The first `d_t + d_v` columns always equal the original embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedFeatures {
    matrix: Array2<f64>,
    d_t: usize,
    d_v: usize,
}

impl AugmentedFeatures {
    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn d_in(&self) -> usize {
        self.matrix.ncols()
    }

    /// The label block of row `i` (the last `NUM_CLASSES` columns).
    pub fn label_block(&self, i: usize) -> ArrayView1<'_, f64> {
        let start = self.d_t + self.d_v;
        self.matrix.row(i).slice_move(ndarray::s![start..])
    }
}

/// Concatenate the embedding matrix with masked (or unmasked) label vectors.
pub fn assemble_features(ds: &Dataset, y_prime: &Array2<f64>) -> Result<AugmentedFeatures> {
    if y_prime.nrows() != ds.len() || y_prime.ncols() != NUM_CLASSES {
        return Err(GlpnError::ShapeMismatch(format!(
            "label matrix is {}x{}, expected {}x{NUM_CLASSES}",
            y_prime.nrows(),
            y_prime.ncols(),
            ds.len()
        )));
    }
    let (d_t, d_v) = (ds.d_t(), ds.d_v());
    let mut matrix = Array2::<f64>::zeros((ds.len(), d_t + d_v + NUM_CLASSES));
    for (i, r) in ds.records().iter().enumerate() {
        for (c, x) in r.text_embedding.iter().enumerate() {
            matrix[[i, c]] = *x;
        }
        for (c, x) in r.image_embedding.iter().enumerate() {
            matrix[[i, d_t + c]] = *x;
        }
        for c in 0..NUM_CLASSES {
            matrix[[i, d_t + d_v + c]] = y_prime[[i, c]];
        }
    }
    Ok(AugmentedFeatures { matrix, d_t, d_v })
}
