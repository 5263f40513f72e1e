//! Two-layer graph-convolutional classifier trained with manually derived
//! gradients and Adam.
//!
//! Forward pass: `H1 = relu(A X' W0 + b0)`, `logits = A H1 W1 + b1`, with
//! `A` the normalized adjacency and `X'` the label-augmented features. The
//! loss is a numerically stable softmax cross-entropy (log-sum-exp form)
//! averaged over the loss set. Under the random-mask regime the loss set is
//! the intersection of the masked nodes with the labeled train nodes, so
//! every node contributing to the loss has a zeroed label block in its own
//! input row.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Split};
use crate::error::{GlpnError, Result};
use crate::graph::NormalizedAdjacency;
use crate::labels::{
    apply_mask, assemble_features, draw_mask, AugmentedFeatures, LabelAssignment, MaskPlan,
    NUM_CLASSES,
};

/// Whether training uses the global random mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Redraw a mask each epoch; zero masked label blocks; compute the loss
    /// over masked labeled train nodes only.
    Grm,
    /// No masking: label features stay intact and the loss covers every
    /// labeled train node. This is the regime of the label-free baseline and
    /// of the label-leakage diagnostic.
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub rho: f64,
    pub hidden: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Independent training repetitions used by the multi-seed protocol.
    pub runs: usize,
    pub mask_mode: MaskMode,
    /// Record held-out accuracy in every epoch report (one extra inference
    /// pass per epoch).
    pub track_test_accuracy: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 200,
            rho: 0.5,
            hidden: 512,
            seed: 42,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            runs: 5,
            mask_mode: MaskMode::Grm,
            track_test_accuracy: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(GlpnError::Config("learning_rate must be > 0".into()));
        }
        if self.epochs == 0 || self.hidden == 0 || self.runs == 0 {
            return Err(GlpnError::Config("epochs, hidden, and runs must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(GlpnError::Config(format!("rho {} must lie in [0, 1]", self.rho)));
        }
        if !(0.0 < self.beta1 && self.beta1 < 1.0 && 0.0 < self.beta2 && self.beta2 < 1.0) {
            return Err(GlpnError::Config("betas must lie in (0, 1)".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(GlpnError::Config("epsilon must be > 0".into()));
        }
        Ok(())
    }
}

/// Model parameters: two weight matrices and two bias vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnModel {
    pub w0: Array2<f64>,
    pub b0: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
}

impl GcnModel {
    pub fn d_in(&self) -> usize {
        self.w0.nrows()
    }

    pub fn d_hidden(&self) -> usize {
        self.w0.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.w1.ncols()
    }
}

/// Glorot-uniform weights (bounds `sqrt(6 / (fan_in + fan_out))`), zero
/// biases, deterministic under the seed.
pub fn init_model(d_in: usize, d_hidden: usize, num_classes: usize, seed: u64) -> GcnModel {
    assert!(d_in > 0 && d_hidden > 0 && num_classes > 0, "positive dimensions");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut glorot = |rows: usize, cols: usize| {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let mut w = Array2::<f64>::zeros((rows, cols));
        for r in 0..rows {
            for c in 0..cols {
                w[[r, c]] = rng.random_range(-bound..bound);
            }
        }
        w
    };
    let w0 = glorot(d_in, d_hidden);
    let w1 = glorot(d_hidden, num_classes);
    GcnModel { w0, b0: Array1::zeros(d_hidden), w1, b1: Array1::zeros(num_classes) }
}

/// Forward-pass cache: pre-propagated inputs, hidden activations, logits,
/// and row-softmax probabilities.
#[derive(Debug, Clone)]
pub struct Forward {
    /// `A X'`
    pub propagated_input: Array2<f64>,
    /// `relu(A X' W0 + b0)`
    pub hidden: Array2<f64>,
    /// `A H1`
    pub propagated_hidden: Array2<f64>,
    pub logits: Array2<f64>,
    pub probs: Array2<f64>,
}

fn check_finite(stage: &'static str, a: &Array2<f64>) -> Result<()> {
    if a.iter().any(|x| !x.is_finite()) {
        return Err(GlpnError::NonFinite { stage });
    }
    Ok(())
}

/// Run the two-layer forward pass.
pub fn forward(
    a_hat: &NormalizedAdjacency,
    x: &AugmentedFeatures,
    model: &GcnModel,
) -> Result<Forward> {
    if a_hat.n() != x.n() {
        return Err(GlpnError::ShapeMismatch(format!(
            "adjacency covers {} nodes, features cover {}",
            a_hat.n(),
            x.n()
        )));
    }
    if x.d_in() != model.d_in() {
        return Err(GlpnError::ShapeMismatch(format!(
            "features have {} columns, model expects {}",
            x.d_in(),
            model.d_in()
        )));
    }
    let propagated_input = a_hat.matmul(x.matrix());
    let mut hidden = propagated_input.dot(&model.w0);
    hidden += &model.b0;
    check_finite("hidden pre-activation", &hidden)?;
    hidden.mapv_inplace(|v| v.max(0.0));
    let propagated_hidden = a_hat.matmul(&hidden);
    let mut logits = propagated_hidden.dot(&model.w1);
    logits += &model.b1;
    check_finite("logits", &logits)?;
    let probs = row_softmax(&logits);
    Ok(Forward { propagated_input, hidden, propagated_hidden, logits, probs })
}

/// Row-wise softmax with max subtraction.
pub fn row_softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Ground-truth classes visible to training: train-split labels only.
/// Held-out test labels stay `None` here no matter what the file carried.
pub fn train_truth(ds: &Dataset) -> Vec<Option<u8>> {
    ds.records()
        .iter()
        .map(|r| match r.split {
            Split::Train => r.label,
            Split::Test => None,
        })
        .collect()
}

/// Nodes eligible for the masked loss: masked nodes that carry a train label.
pub fn loss_nodes(plan: &MaskPlan, truth: &[Option<u8>]) -> Vec<usize> {
    plan.masked().iter().copied().filter(|&i| truth[i].is_some()).collect()
}

/// Mean softmax cross-entropy over `nodes`, in fused log-sum-exp form.
/// Returns `None` when the node set is empty (the step is skipped).
pub fn mean_cross_entropy(fwd: &Forward, truth: &[Option<u8>], nodes: &[usize]) -> Option<f64> {
    if nodes.is_empty() {
        return None;
    }
    let mut total = 0.0;
    for &i in nodes {
        let y = truth[i].expect("loss nodes carry labels") as usize;
        let row = fwd.logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[y];
    }
    Some(total / nodes.len() as f64)
}

/// The masked training loss: loss set = masked nodes ∩ labeled train nodes,
/// value = mean cross-entropy over that set (`None` when empty).
pub fn masked_loss(
    fwd: &Forward,
    truth: &[Option<u8>],
    plan: &MaskPlan,
) -> (Option<f64>, Vec<usize>) {
    let nodes = loss_nodes(plan, truth);
    (mean_cross_entropy(fwd, truth, &nodes), nodes)
}

/// Parameter gradients, shaped like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w0: Array2<f64>,
    pub b0: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
}

impl Gradients {
    pub fn zeros_like(model: &GcnModel) -> Self {
        Self {
            w0: Array2::zeros(model.w0.raw_dim()),
            b0: Array1::zeros(model.b0.raw_dim()),
            w1: Array2::zeros(model.w1.raw_dim()),
            b1: Array1::zeros(model.b1.raw_dim()),
        }
    }
}

/// Exact analytic gradients of the mean cross-entropy over `loss_set`.
///
/// Logit deltas vanish outside the loss set; then
/// `dW1 = (A H1)^T dZ1`, `dH1 = A dZ1 W1^T` gated by the relu mask, and
/// `dW0 = (A X')^T dZ0`, with bias gradients as column sums.
pub fn backward(
    a_hat: &NormalizedAdjacency,
    model: &GcnModel,
    fwd: &Forward,
    truth: &[Option<u8>],
    loss_set: &[usize],
) -> Gradients {
    if loss_set.is_empty() {
        return Gradients::zeros_like(model);
    }
    let n = fwd.logits.nrows();
    let scale = 1.0 / loss_set.len() as f64;
    let mut d_logits = Array2::<f64>::zeros((n, NUM_CLASSES));
    for &i in loss_set {
        let y = truth[i].expect("loss nodes carry labels") as usize;
        for c in 0..NUM_CLASSES {
            let indicator = if c == y { 1.0 } else { 0.0 };
            d_logits[[i, c]] = (fwd.probs[[i, c]] - indicator) * scale;
        }
    }

    let d_w1 = fwd.propagated_hidden.t().dot(&d_logits);
    let d_b1 = d_logits.sum_axis(Axis(0));

    let d_propagated_hidden = d_logits.dot(&model.w1.t());
    // A is symmetric, so A^T dP1 = A dP1.
    let mut d_hidden = a_hat.matmul(&d_propagated_hidden);
    Zip::from(&mut d_hidden).and(&fwd.hidden).for_each(|g, &h| {
        if h <= 0.0 {
            *g = 0.0;
        }
    });

    let d_w0 = fwd.propagated_input.t().dot(&d_hidden);
    let d_b0 = d_hidden.sum_axis(Axis(0));

    Gradients { w0: d_w0, b0: d_b0, w1: d_w1, b1: d_b1 }
}

/// First/second moment accumulators and the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Gradients,
    v: Gradients,
    t: u64,
}

impl AdamState {
    pub fn new(model: &GcnModel) -> Self {
        Self { m: Gradients::zeros_like(model), v: Gradients::zeros_like(model), t: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update, applied in place.
pub fn adam_step(
    model: &mut GcnModel,
    grads: &Gradients,
    state: &mut AdamState,
    cfg: &TrainConfig,
) {
    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);

    fn update<D: ndarray::Dimension>(
        param: &mut ndarray::Array<f64, D>,
        grad: &ndarray::Array<f64, D>,
        m: &mut ndarray::Array<f64, D>,
        v: &mut ndarray::Array<f64, D>,
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        bc1: f64,
        bc2: f64,
    ) {
        Zip::from(param)
            .and(grad)
            .and(m)
            .and(v)
            .for_each(|p, &g, m, v| {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            });
    }

    let (lr, b1, b2, eps) = (cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon);
    update(&mut model.w0, &grads.w0, &mut state.m.w0, &mut state.v.w0, lr, b1, b2, eps, bc1, bc2);
    update(&mut model.b0, &grads.b0, &mut state.m.b0, &mut state.v.b0, lr, b1, b2, eps, bc1, bc2);
    update(&mut model.w1, &grads.w1, &mut state.m.w1, &mut state.v.w1, lr, b1, b2, eps, bc1, bc2);
    update(&mut model.b1, &grads.b1, &mut state.m.b1, &mut state.v.b1, lr, b1, b2, eps, bc1, bc2);
}

/// One epoch's training summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochReport {
    pub epoch: usize,
    /// Mean loss over the loss set; `None` when the set was empty and the
    /// step was skipped.
    pub loss: Option<f64>,
    pub loss_set_size: usize,
    pub test_accuracy: Option<f64>,
}

/// What the observer sees after each epoch's loss set is fixed.
pub struct EpochView<'a> {
    pub epoch: usize,
    /// The drawn mask; `None` under [`MaskMode::Off`].
    pub plan: Option<&'a MaskPlan>,
    pub loss_set: &'a [usize],
    /// The features actually fed to the forward pass this epoch.
    pub features: &'a AugmentedFeatures,
}

/// Derive the mask seed for an epoch from the run seed.
pub fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    splitmix64(seed ^ splitmix64(epoch as u64 + 1))
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Full-batch training. Per epoch: draw mask → apply → assemble features →
/// forward → masked loss → backward → Adam. Deterministic for a given
/// config.
pub fn train(
    ds: &Dataset,
    a_hat: &NormalizedAdjacency,
    labels: &LabelAssignment,
    cfg: &TrainConfig,
) -> Result<(GcnModel, Vec<EpochReport>)> {
    train_observed(ds, a_hat, labels, cfg, &mut |_| {})
}

/// As [`train`], invoking `observer` once per epoch after the loss set is
/// fixed; used by leakage-audit harnesses.
pub fn train_observed(
    ds: &Dataset,
    a_hat: &NormalizedAdjacency,
    labels: &LabelAssignment,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&EpochView<'_>),
) -> Result<(GcnModel, Vec<EpochReport>)> {
    cfg.validate()?;
    if labels.n() != ds.len() || a_hat.n() != ds.len() {
        return Err(GlpnError::ShapeMismatch(
            "dataset, adjacency, and labels must cover the same nodes".into(),
        ));
    }
    let d_in = ds.d_t() + ds.d_v() + NUM_CLASSES;
    let mut model = init_model(d_in, cfg.hidden, NUM_CLASSES, cfg.seed);
    let mut state = AdamState::new(&model);
    let truth = train_truth(ds);
    let all_train: Vec<usize> = (0..ds.len()).filter(|&i| truth[i].is_some()).collect();
    let mut reports = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let (plan, y_prime) = match cfg.mask_mode {
            MaskMode::Grm => {
                let plan = draw_mask(ds.len(), cfg.rho, epoch_seed(cfg.seed, epoch))?;
                let y = apply_mask(labels, &plan)?;
                (Some(plan), y)
            }
            MaskMode::Off => (None, labels.vectors().clone()),
        };
        let features = assemble_features(ds, &y_prime)?;
        let fwd = forward(a_hat, &features, &model)?;
        let loss_set = match &plan {
            Some(p) => loss_nodes(p, &truth),
            None => all_train.clone(),
        };
        let loss = mean_cross_entropy(&fwd, &truth, &loss_set);
        observer(&EpochView { epoch, plan: plan.as_ref(), loss_set: &loss_set, features: &features });

        if let Some(value) = loss {
            if !value.is_finite() {
                return Err(GlpnError::Diverged { epoch });
            }
            let grads = backward(a_hat, &model, &fwd, &truth, &loss_set);
            adam_step(&mut model, &grads, &mut state, cfg);
        }

        let test_accuracy = if cfg.track_test_accuracy {
            held_out_accuracy(ds, a_hat, labels, &model)?
        } else {
            None
        };
        reports.push(EpochReport { epoch, loss, loss_set_size: loss_set.len(), test_accuracy });
    }
    Ok((model, reports))
}

fn held_out_accuracy(
    ds: &Dataset,
    a_hat: &NormalizedAdjacency,
    labels: &LabelAssignment,
    model: &GcnModel,
) -> Result<Option<f64>> {
    let prediction = predict(ds, a_hat, labels, model)?;
    let mut total = 0usize;
    let mut hit = 0usize;
    for &i in &ds.test_indices() {
        if let Some(label) = ds.records()[i].label {
            total += 1;
            if prediction.classes[i] == label {
                hit += 1;
            }
        }
    }
    Ok((total > 0).then(|| hit as f64 / total as f64))
}

/// Per-node predicted classes and probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub classes: Vec<u8>,
    pub probs: Array2<f64>,
}

/// Inference: a single forward pass with the unmasked label vectors in the
/// label block; argmax per row with ties broken toward class 0.
pub fn predict(
    ds: &Dataset,
    a_hat: &NormalizedAdjacency,
    labels: &LabelAssignment,
    model: &GcnModel,
) -> Result<Prediction> {
    let features = assemble_features(ds, labels.vectors())?;
    let fwd = forward(a_hat, &features, model)?;
    let classes = fwd
        .probs
        .rows()
        .into_iter()
        .map(|row| if row[1] > row[0] { 1u8 } else { 0u8 })
        .collect();
    Ok(Prediction { classes, probs: fwd.probs })
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"GLPNMODL";
const CHECKPOINT_VERSION: u32 = 1;

/// Write a checkpoint: magic, version, shapes, parameter tensors in
/// row-major little-endian f64, then the training config as JSON.
pub fn save_model(model: &GcnModel, cfg: &TrainConfig, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    for dim in [model.d_in() as u64, model.d_hidden() as u64, model.num_classes() as u64] {
        w.write_all(&dim.to_le_bytes())?;
    }
    let write_tensor = |w: &mut BufWriter<File>, values: &mut dyn Iterator<Item = f64>| -> Result<()> {
        for v in values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    };
    write_tensor(&mut w, &mut model.w0.iter().copied())?;
    write_tensor(&mut w, &mut model.b0.iter().copied())?;
    write_tensor(&mut w, &mut model.w1.iter().copied())?;
    write_tensor(&mut w, &mut model.b1.iter().copied())?;
    let cfg_json = serde_json::to_vec(cfg)
        .map_err(|e| GlpnError::Checkpoint(format!("serialize config: {e}")))?;
    w.write_all(&(cfg_json.len() as u64).to_le_bytes())?;
    w.write_all(&cfg_json)?;
    w.flush()?;
    Ok(())
}

/// Read a checkpoint back; bit-exact round trip.
pub fn load_model(path: &Path) -> Result<(GcnModel, TrainConfig)> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(GlpnError::Checkpoint("bad magic bytes".into()));
    }
    let mut u32_buf = [0u8; 4];
    r.read_exact(&mut u32_buf)?;
    let version = u32::from_le_bytes(u32_buf);
    if version != CHECKPOINT_VERSION {
        return Err(GlpnError::Checkpoint(format!("unsupported version {version}")));
    }
    let read_u64 = |r: &mut BufReader<File>| -> Result<u64> {
        let mut buf = [0u8; 8];
        r.read_exact(&mut buf)?;
        Ok(u64::from_le_bytes(buf))
    };
    let d_in = read_u64(&mut r)? as usize;
    let d_hidden = read_u64(&mut r)? as usize;
    let num_classes = read_u64(&mut r)? as usize;
    if d_in == 0 || d_hidden == 0 || num_classes == 0 {
        return Err(GlpnError::Checkpoint("zero dimension in header".into()));
    }
    let read_tensor = |r: &mut BufReader<File>, len: usize| -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(len);
        let mut buf = [0u8; 8];
        for _ in 0..len {
            r.read_exact(&mut buf)?;
            out.push(f64::from_le_bytes(buf));
        }
        Ok(out)
    };
    let w0 = Array2::from_shape_vec((d_in, d_hidden), read_tensor(&mut r, d_in * d_hidden)?)
        .map_err(|e| GlpnError::Checkpoint(e.to_string()))?;
    let b0 = Array1::from_vec(read_tensor(&mut r, d_hidden)?);
    let w1 = Array2::from_shape_vec((d_hidden, num_classes), read_tensor(&mut r, d_hidden * num_classes)?)
        .map_err(|e| GlpnError::Checkpoint(e.to_string()))?;
    let b1 = Array1::from_vec(read_tensor(&mut r, num_classes)?);
    let cfg_len = read_u64(&mut r)? as usize;
    let mut cfg_buf = vec![0u8; cfg_len];
    r.read_exact(&mut cfg_buf)?;
    let cfg: TrainConfig = serde_json::from_slice(&cfg_buf)
        .map_err(|e| GlpnError::Checkpoint(format!("config block: {e}")))?;
    Ok((GcnModel { w0, b0, w1, b1 }, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, SynthConfig};
    use crate::graph::{build_graph, normalize};
    use crate::labels::build_labels;
    use crate::pseudo::{PseudoLabelSet, VerdictSource};

    fn small_setup(
        n_train: usize,
        n_test: usize,
        seed: u64,
    ) -> (Dataset, NormalizedAdjacency, LabelAssignment) {
        let cfg = SynthConfig {
            n_per_class_train: n_train,
            n_per_class_test: n_test,
            d_t: 3,
            d_v: 3,
            noise_sigma: 0.5,
            seed,
            ..Default::default()
        };
        let ds = generate_synthetic(&cfg).unwrap();
        let a_hat = normalize(&build_graph(&ds, 0.8).unwrap());
        let labels =
            build_labels(&ds, &PseudoLabelSet::empty(VerdictSource::Oracle, &ds)).unwrap();
        (ds, a_hat, labels)
    }

    fn quick_cfg(hidden: usize, epochs: usize, seed: u64) -> TrainConfig {
        TrainConfig { hidden, epochs, seed, ..Default::default() }
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let a = init_model(5, 4, 2, 77);
        let b = init_model(5, 4, 2, 77);
        assert_eq!(a, b);
        assert!(a.b0.iter().all(|&v| v == 0.0));
        assert!(a.b1.iter().all(|&v| v == 0.0));
        let c = init_model(5, 4, 2, 78);
        assert_ne!(a, c);
    }

    #[test]
    fn init_respects_glorot_bounds() {
        let model = init_model(64, 32, 2, 5);
        let bound0 = (6.0f64 / (64 + 32) as f64).sqrt();
        let max0 = model.w0.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        assert!(max0 < bound0, "max {max0} under bound {bound0}");
        assert!(max0 > 0.5 * bound0, "extrema should approach the bound");
        let bound1 = (6.0f64 / (32 + 2) as f64).sqrt();
        let max1 = model.w1.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        assert!(max1 < bound1);
    }

    #[test]
    fn zero_model_gives_uniform_probs() {
        let (ds, a_hat, labels) = small_setup(3, 2, 1);
        let d_in = ds.d_t() + ds.d_v() + NUM_CLASSES;
        let model = GcnModel {
            w0: Array2::zeros((d_in, 4)),
            b0: Array1::zeros(4),
            w1: Array2::zeros((4, 2)),
            b1: Array1::zeros(2),
        };
        let x = assemble_features(&ds, labels.vectors()).unwrap();
        let fwd = forward(&a_hat, &x, &model).unwrap();
        for row in fwd.probs.rows() {
            assert!((row[0] - 0.5).abs() < 1e-15);
            assert!((row[1] - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn probs_rows_sum_to_one() {
        let (ds, a_hat, labels) = small_setup(4, 3, 2);
        let model = init_model(ds.d_t() + ds.d_v() + NUM_CLASSES, 6, 2, 3);
        let x = assemble_features(&ds, labels.vectors()).unwrap();
        let fwd = forward(&a_hat, &x, &model).unwrap();
        for row in fwd.probs.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn isolated_node_forward_matches_hand_computation() {
        use crate::dataset::{Dataset, NewsRecord, Split};
        // One isolated node: A = [1]. Scalar chain with d_in = 4 (1+1+2).
        let ds = Dataset::new(vec![NewsRecord {
            id: "a".into(),
            split: Split::Train,
            label: Some(0),
            text_embedding: vec![2.0],
            image_embedding: vec![-1.0],
            text: None,
        }])
        .unwrap();
        let a_hat = normalize(&build_graph(&ds, 1.0).unwrap());
        let labels =
            build_labels(&ds, &PseudoLabelSet::empty(VerdictSource::Oracle, &ds)).unwrap();
        let x = assemble_features(&ds, labels.vectors()).unwrap();
        // Row is (2, -1, 1, 0).
        let model = GcnModel {
            w0: Array2::from_shape_vec((4, 1), vec![0.5, 0.25, -0.3, 0.1]).unwrap(),
            b0: Array1::from_vec(vec![0.1]),
            w1: Array2::from_shape_vec((1, 2), vec![0.3, -0.2]).unwrap(),
            b1: Array1::from_vec(vec![0.05, -0.05]),
        };
        let fwd = forward(&a_hat, &x, &model).unwrap();
        // z0 = 2*0.5 - 1*0.25 + 1*(-0.3) + 0.1 = 0.55; h1 = 0.55
        // logits = (0.55*0.3 + 0.05, 0.55*(-0.2) - 0.05) = (0.215, -0.16)
        assert!((fwd.hidden[[0, 0]] - 0.55).abs() < 1e-12);
        assert!((fwd.logits[[0, 0]] - 0.215).abs() < 1e-12);
        assert!((fwd.logits[[0, 1]] + 0.16).abs() < 1e-12);
    }

    #[test]
    fn uniform_probs_lose_ln2() {
        let (ds, a_hat, labels) = small_setup(3, 2, 4);
        let d_in = ds.d_t() + ds.d_v() + NUM_CLASSES;
        let model = GcnModel {
            w0: Array2::zeros((d_in, 4)),
            b0: Array1::zeros(4),
            w1: Array2::zeros((4, 2)),
            b1: Array1::zeros(2),
        };
        let x = assemble_features(&ds, labels.vectors()).unwrap();
        let fwd = forward(&a_hat, &x, &model).unwrap();
        let truth = train_truth(&ds);
        let nodes: Vec<usize> = (0..ds.len()).filter(|&i| truth[i].is_some()).collect();
        let loss = mean_cross_entropy(&fwd, &truth, &nodes).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_logits_lose_nearly_zero() {
        let (ds, a_hat, labels) = small_setup(3, 2, 5);
        let d_in = ds.d_t() + ds.d_v() + NUM_CLASSES;
        let truth = train_truth(&ds);
        // Bias the correct class of node 0 hugely; evaluate only node 0.
        let y0 = truth.iter().flatten().next().copied().unwrap() as usize;
        let mut b1 = Array1::zeros(2);
        b1[y0] = 100.0;
        let model = GcnModel {
            w0: Array2::zeros((d_in, 4)),
            b0: Array1::zeros(4),
            w1: Array2::zeros((4, 2)),
            b1,
        };
        let x = assemble_features(&ds, labels.vectors()).unwrap();
        let fwd = forward(&a_hat, &x, &model).unwrap();
        let loss = mean_cross_entropy(&fwd, &truth, &[0]).unwrap();
        assert!(loss >= 0.0 && loss < 1e-12, "loss {loss}");
    }

    #[test]
    fn loss_set_is_masked_train_intersection() {
        let (ds, _, _) = small_setup(4, 3, 6);
        let truth = train_truth(&ds);
        for seed in 0..40u64 {
            let plan = draw_mask(ds.len(), 0.5, seed).unwrap();
            let got = loss_nodes(&plan, &truth);
            let expected: Vec<usize> = plan
                .masked()
                .iter()
                .copied()
                .filter(|&i| truth[i].is_some())
                .collect();
            assert_eq!(got, expected);
            assert!(got.iter().all(|&i| plan.is_masked(i)));
        }
    }

    #[test]
    fn empty_loss_set_gives_zero_gradients() {
        let (ds, a_hat, labels) = small_setup(3, 2, 7);
        let model = init_model(ds.d_t() + ds.d_v() + NUM_CLASSES, 4, 2, 1);
        let x = assemble_features(&ds, labels.vectors()).unwrap();
        let fwd = forward(&a_hat, &x, &model).unwrap();
        let truth = train_truth(&ds);
        let grads = backward(&a_hat, &model, &fwd, &truth, &[]);
        assert!(grads.w0.iter().all(|&g| g == 0.0));
        assert!(grads.b1.iter().all(|&g| g == 0.0));
    }

    /// Central finite differences of the masked loss with respect to every
    /// parameter, on a fixed mask.
    fn numerical_gradients(
        ds: &Dataset,
        a_hat: &NormalizedAdjacency,
        labels: &LabelAssignment,
        model: &GcnModel,
        plan: &MaskPlan,
        h: f64,
    ) -> Gradients {
        let truth = train_truth(ds);
        let y_prime = apply_mask(labels, plan).unwrap();
        let x = assemble_features(ds, &y_prime).unwrap();
        let loss_of = |m: &GcnModel| -> f64 {
            let fwd = forward(a_hat, &x, m).unwrap();
            let (loss, _) = masked_loss(&fwd, &truth, plan);
            loss.unwrap()
        };
        let mut grads = Gradients::zeros_like(model);
        let mut probe = model.clone();
        macro_rules! diff_tensor {
            ($field:ident) => {
                for idx in 0..model.$field.len() {
                    let original = model.$field.as_slice().unwrap()[idx];
                    probe.$field.as_slice_mut().unwrap()[idx] = original + h;
                    let up = loss_of(&probe);
                    probe.$field.as_slice_mut().unwrap()[idx] = original - h;
                    let down = loss_of(&probe);
                    probe.$field.as_slice_mut().unwrap()[idx] = original;
                    grads.$field.as_slice_mut().unwrap()[idx] = (up - down) / (2.0 * h);
                }
            };
        }
        diff_tensor!(w0);
        diff_tensor!(b0);
        diff_tensor!(w1);
        diff_tensor!(b1);
        grads
    }

    fn max_relative_error(analytic: &Gradients, numeric: &Gradients) -> f64 {
        let mut worst = 0.0f64;
        let mut check = |a: &[f64], n: &[f64]| {
            for (x, y) in a.iter().zip(n) {
                let rel = (x - y).abs() / x.abs().max(y.abs()).max(1e-6);
                worst = worst.max(rel);
            }
        };
        check(analytic.w0.as_slice().unwrap(), numeric.w0.as_slice().unwrap());
        check(analytic.b0.as_slice().unwrap(), numeric.b0.as_slice().unwrap());
        check(analytic.w1.as_slice().unwrap(), numeric.w1.as_slice().unwrap());
        check(analytic.b1.as_slice().unwrap(), numeric.b1.as_slice().unwrap());
        worst
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        // Small instance (6 nodes, d_in = 5 with d_t=2, d_v=1, hidden 4).
        let cfg = SynthConfig {
            n_per_class_train: 2,
            n_per_class_test: 1,
            d_t: 2,
            d_v: 1,
            noise_sigma: 0.5,
            seed: 31,
            ..Default::default()
        };
        let ds = generate_synthetic(&cfg).unwrap();
        let a_hat = normalize(&build_graph(&ds, 0.6).unwrap());
        let labels =
            build_labels(&ds, &PseudoLabelSet::empty(VerdictSource::Oracle, &ds)).unwrap();
        let truth = train_truth(&ds);
        for seed in 0..3u64 {
            let model = init_model(ds.d_t() + ds.d_v() + NUM_CLASSES, 4, 2, seed);
            let plan = draw_mask(ds.len(), 0.5, seed.wrapping_add(100)).unwrap();
            let y_prime = apply_mask(&labels, &plan).unwrap();
            let x = assemble_features(&ds, &y_prime).unwrap();
            let fwd = forward(&a_hat, &x, &model).unwrap();
            let (loss, loss_set) = masked_loss(&fwd, &truth, &plan);
            if loss.is_none() {
                continue;
            }
            let analytic = backward(&a_hat, &model, &fwd, &truth, &loss_set);
            let numeric = numerical_gradients(&ds, &a_hat, &labels, &model, &plan, 1e-5);
            let err = max_relative_error(&analytic, &numeric);
            assert!(err <= 1e-4, "seed {seed}: relative error {err}");
        }
    }

    #[test]
    fn mean_reduction_is_invariant_under_duplication() {
        use crate::dataset::{Dataset, NewsRecord, Split};
        // Two identical isolated nodes versus one: identical mean gradients.
        let rec = |id: &str| NewsRecord {
            id: id.into(),
            split: Split::Train,
            label: Some(1),
            text_embedding: vec![0.7, -0.4],
            image_embedding: vec![0.2],
            text: None,
        };
        let single = Dataset::new(vec![rec("a")]).unwrap();
        let double = Dataset::new(vec![rec("a"), rec("b")]).unwrap();
        let model = init_model(5, 4, 2, 11);
        let run = |ds: &Dataset| -> Gradients {
            let a_hat = normalize(&build_graph(ds, 1.0).unwrap());
            let labels =
                build_labels(ds, &PseudoLabelSet::empty(VerdictSource::Oracle, ds)).unwrap();
            let zero_labels = Array2::zeros((ds.len(), 2));
            let x = assemble_features(ds, &zero_labels).unwrap();
            let _ = labels;
            let fwd = forward(&a_hat, &x, &model).unwrap();
            let truth = train_truth(ds);
            let nodes: Vec<usize> = (0..ds.len()).collect();
            backward(&a_hat, &model, &fwd, &truth, &nodes)
        };
        let g1 = run(&single);
        let g2 = run(&double);
        let diff = g1
            .w0
            .iter()
            .zip(g2.w0.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(diff < 1e-12, "duplicating a loss term must not change the mean gradient");
    }

    #[test]
    fn adam_zero_gradients_leave_parameters_unchanged() {
        let mut model = init_model(3, 2, 2, 9);
        let before = model.clone();
        let mut state = AdamState::new(&model);
        let grads = Gradients::zeros_like(&model);
        let cfg = TrainConfig::default();
        for _ in 0..10 {
            adam_step(&mut model, &grads, &mut state, &cfg);
        }
        assert_eq!(model, before);
        assert_eq!(state.step_count(), 10);
    }

    #[test]
    fn adam_step_magnitude_approaches_learning_rate() {
        let mut model = GcnModel {
            w0: Array2::zeros((1, 1)),
            b0: Array1::zeros(1),
            w1: Array2::zeros((1, 2)),
            b1: Array1::zeros(2),
        };
        let mut state = AdamState::new(&model);
        let cfg = TrainConfig::default();
        let mut grads = Gradients::zeros_like(&model);
        grads.w0[[0, 0]] = 0.3;
        let mut prev = model.w0[[0, 0]];
        let mut last_step = 0.0;
        for _ in 0..500 {
            adam_step(&mut model, &grads, &mut state, &cfg);
            last_step = (model.w0[[0, 0]] - prev).abs();
            prev = model.w0[[0, 0]];
        }
        let lr = cfg.learning_rate;
        assert!(
            (last_step - lr).abs() / lr < 0.05,
            "step {last_step} should be within 5% of lr {lr}"
        );
    }

    #[test]
    fn adam_first_step_is_scale_invariant() {
        let make = || GcnModel {
            w0: Array2::zeros((1, 1)),
            b0: Array1::zeros(1),
            w1: Array2::zeros((1, 2)),
            b1: Array1::zeros(2),
        };
        let cfg = TrainConfig::default();
        let step_of = |g: f64| -> f64 {
            let mut model = make();
            let mut state = AdamState::new(&model);
            let mut grads = Gradients::zeros_like(&model);
            grads.w0[[0, 0]] = g;
            adam_step(&mut model, &grads, &mut state, &cfg);
            model.w0[[0, 0]].abs()
        };
        let small = step_of(0.01);
        let large = step_of(1.0);
        assert!((small - large).abs() / large < 1e-5, "{small} vs {large}");
    }

    #[test]
    fn rho_zero_means_no_updates() {
        let (ds, a_hat, labels) = small_setup(4, 2, 8);
        let cfg = TrainConfig { rho: 0.0, ..quick_cfg(4, 20, 3) };
        let (model, reports) = train(&ds, &a_hat, &labels, &cfg).unwrap();
        let init = init_model(ds.d_t() + ds.d_v() + NUM_CLASSES, 4, 2, 3);
        assert_eq!(model, init);
        assert!(reports.iter().all(|r| r.loss.is_none() && r.loss_set_size == 0));
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let (ds, a_hat, labels) = small_setup(6, 3, 9);
        let cfg = quick_cfg(8, 30, 5);
        let (m1, r1) = train(&ds, &a_hat, &labels, &cfg).unwrap();
        let (m2, r2) = train(&ds, &a_hat, &labels, &cfg).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(r1, r2);
        let other = TrainConfig { seed: 6, ..cfg };
        let (m3, _) = train(&ds, &a_hat, &labels, &other).unwrap();
        assert_ne!(m1, m3);
    }

    #[test]
    fn training_reduces_loss_on_synthetic_data() {
        let (ds, a_hat, labels) = small_setup(30, 10, 10);
        let cfg = quick_cfg(16, 80, 7);
        let (_, reports) = train(&ds, &a_hat, &labels, &cfg).unwrap();
        let first = reports.iter().find_map(|r| r.loss).unwrap();
        let last = reports.iter().rev().find_map(|r| r.loss).unwrap();
        assert!(last < first, "loss should drop: first {first}, last {last}");
    }

    #[test]
    fn predict_ties_break_toward_class_zero() {
        let (ds, a_hat, labels) = small_setup(3, 2, 11);
        let d_in = ds.d_t() + ds.d_v() + NUM_CLASSES;
        let zero = GcnModel {
            w0: Array2::zeros((d_in, 4)),
            b0: Array1::zeros(4),
            w1: Array2::zeros((4, 2)),
            b1: Array1::zeros(2),
        };
        let prediction = predict(&ds, &a_hat, &labels, &zero).unwrap();
        assert!(prediction.classes.iter().all(|&c| c == 0));

        // probs (0.2, 0.8) per row -> class 1.
        let biased = GcnModel {
            b1: Array1::from_vec(vec![0.2f64.ln(), 0.8f64.ln()]),
            ..zero
        };
        let prediction = predict(&ds, &a_hat, &labels, &biased).unwrap();
        assert!(prediction.classes.iter().all(|&c| c == 1));
        assert!((prediction.probs[[0, 1]] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn predictions_ignore_mask_plans() {
        let (ds, a_hat, labels) = small_setup(4, 2, 12);
        let cfg = quick_cfg(8, 15, 2);
        let (model, _) = train(&ds, &a_hat, &labels, &cfg).unwrap();
        let p1 = predict(&ds, &a_hat, &labels, &model).unwrap();
        let _ = draw_mask(ds.len(), 0.7, 999).unwrap();
        let p2 = predict(&ds, &a_hat, &labels, &model).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let model = init_model(7, 5, 2, 21);
        let cfg = TrainConfig::default();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_model(&model, &cfg, &path).unwrap();
        let (back, back_cfg) = load_model(&path).unwrap();
        assert_eq!(back_cfg, cfg);
        let bits = |a: &Array2<f64>| a.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&model.w0), bits(&back.w0));
        assert_eq!(bits(&model.w1), bits(&back.w1));
        assert_eq!(model.b0, back.b0);
        assert_eq!(model.b1, back.b1);
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.bin");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(matches!(load_model(&path), Err(GlpnError::Checkpoint(_))));
    }
}
