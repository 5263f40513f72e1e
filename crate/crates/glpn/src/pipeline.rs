//! End-to-end orchestration: graph construction, pseudo-label acquisition,
//! label integration, multi-seed training, evaluation, and parameter sweeps.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::baselines::{classic_lp, label_free_gcn, propagate, LpConfig};
use crate::dataset::{oracle_pseudo_labels, Dataset};
use crate::error::{GlpnError, Result};
use crate::eval::{
    aggregate, confusion, metrics, AggregateReport, ConfusionMatrix, MetricsReport, SweepEntry,
    SweepResult,
};
use crate::gcn::{predict, train, GcnModel, MaskMode, TrainConfig};
use crate::graph::{build_graph, normalize, CrossModalGraph, NormalizedAdjacency};
use crate::labels::{build_labels, LabelAssignment};
use crate::pseudo::client::{fetch_verdicts, EndpointConfig};
use crate::pseudo::{
    load_fixture_verdicts, load_pseudo_labels, PromptTemplate, PromptStyle, PseudoLabelSet,
    VerdictSource,
};

/// The ablation tiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Label-free GCN on content features only.
    Fcn,
    /// Classic label propagation from the ground-truth seeds.
    Lp,
    /// Label-free GCN followed by clamped label propagation over its output
    /// probabilities.
    FcnLp,
    /// Masked label integration, ground-truth labels only.
    Glpn,
    /// Masked label integration plus confidence-filtered pseudo labels.
    GlpnLlm,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Fcn => "fcn",
            Mode::Lp => "lp",
            Mode::FcnLp => "fcn-lp",
            Mode::Glpn => "glpn",
            Mode::GlpnLlm => "glpn-llm",
        }
    }
}

/// Where pseudo labels come from in `glpn-llm` mode.
#[derive(Debug, Clone)]
pub enum PseudoSource {
    Oracle { accuracy: f64, sharpness: f64, seed: u64 },
    Fixture { path: PathBuf },
    /// A previously written pseudo-label file (already parsed verdicts).
    File { path: PathBuf },
    Live { endpoint: EndpointConfig, prompt: PromptStyle },
}

/// Everything a pipeline run needs beyond the dataset and pseudo source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub mode: Mode,
    pub theta: f64,
    pub rho: f64,
    pub pseudo_fraction: f64,
    pub hidden: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub runs: usize,
    pub seed: u64,
    pub lp_iterations: usize,
    /// Disable the random mask (diagnostic; exposes label leakage).
    pub mask_enabled: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Glpn,
            theta: 0.95,
            rho: 0.5,
            pseudo_fraction: 0.05,
            hidden: 512,
            learning_rate: 1e-3,
            epochs: 200,
            runs: 5,
            seed: 42,
            lp_iterations: 50,
            mask_enabled: true,
        }
    }
}

impl PipelineConfig {
    fn train_config(&self, run_seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            rho: self.rho,
            hidden: self.hidden,
            seed: run_seed,
            runs: self.runs,
            mask_mode: if self.mask_enabled { MaskMode::Grm } else { MaskMode::Off },
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta > -1.0 && self.theta <= 1.0) {
            return Err(GlpnError::Config(format!("theta {} must lie in (-1, 1]", self.theta)));
        }
        if !(0.0..=1.0).contains(&self.pseudo_fraction) {
            return Err(GlpnError::Config(format!(
                "pseudo_fraction {} must lie in [0, 1]",
                self.pseudo_fraction
            )));
        }
        if self.lp_iterations == 0 {
            return Err(GlpnError::Config("lp_iterations must be >= 1".into()));
        }
        self.train_config(self.seed).validate()
    }
}

/// One run's evaluation record.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub seed: u64,
    pub metrics: MetricsReport,
    pub confusion: ConfusionMatrix,
}

#[derive(Debug, Clone, Serialize)]
pub struct GraphSummary {
    pub nodes: usize,
    pub edges: usize,
    pub theta: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PseudoSummary {
    pub source: VerdictSource,
    pub verdicts: usize,
    pub kept: usize,
    pub fraction: f64,
}

/// The metrics JSON document written by the `run` command.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsDocument {
    pub mode: Mode,
    pub config: PipelineConfig,
    pub dataset: DatasetSummary,
    pub graph: GraphSummary,
    pub pseudo: Option<PseudoSummary>,
    pub runs: Vec<RunRecord>,
    pub aggregate: AggregateReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct DatasetSummary {
    pub records: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub d_t: usize,
    pub d_v: usize,
}

/// Everything produced by one pipeline invocation.
pub struct PipelineOutput {
    pub document: MetricsDocument,
    pub graph: CrossModalGraph,
    /// The unfiltered verdict set (for `pseudo.jsonl`).
    pub pseudo_full: Option<PseudoLabelSet>,
    /// The confidence-filtered subset actually integrated.
    pub pseudo_kept: Option<PseudoLabelSet>,
    /// The trained model of the last run, when the mode trains one.
    pub last_model: Option<GcnModel>,
}

/// Obtain pseudo labels from the configured source.
pub fn obtain_pseudo(ds: &Dataset, source: &PseudoSource) -> Result<PseudoLabelSet> {
    match source {
        PseudoSource::Oracle { accuracy, sharpness, seed } => {
            let pairs = oracle_pseudo_labels(ds, *accuracy, *sharpness, *seed)?;
            PseudoLabelSet::from_pairs(pairs, VerdictSource::Oracle, ds)
        }
        PseudoSource::Fixture { path } => load_fixture_verdicts(ds, path),
        PseudoSource::File { path } => load_pseudo_labels(ds, path),
        PseudoSource::Live { endpoint, prompt } => {
            let template = PromptTemplate::of_style(*prompt);
            let (set, stats) = fetch_verdicts(ds, &template, endpoint)?;
            log::info!(
                "live pseudo-labeling: {} requests, {} verdicts, {} absent",
                stats.requests,
                set.len(),
                stats.absent
            );
            Ok(set)
        }
    }
}

struct Prepared {
    graph: CrossModalGraph,
    a_hat: NormalizedAdjacency,
    pseudo_full: Option<PseudoLabelSet>,
}

fn prepare(ds: &Dataset, cfg: &PipelineConfig, source: Option<&PseudoSource>) -> Result<Prepared> {
    cfg.validate()?;
    let graph = build_graph(ds, cfg.theta)?;
    let a_hat = normalize(&graph);
    let pseudo_full = match (cfg.mode, source) {
        (Mode::GlpnLlm, Some(source)) => Some(obtain_pseudo(ds, source)?),
        (Mode::GlpnLlm, None) => {
            return Err(GlpnError::Config(
                "mode glpn-llm needs a pseudo-label source".into(),
            ))
        }
        _ => None,
    };
    Ok(Prepared { graph, a_hat, pseudo_full })
}

struct ModeRun {
    records: Vec<RunRecord>,
    pseudo_kept: Option<PseudoLabelSet>,
    last_model: Option<GcnModel>,
}

fn run_prepared(ds: &Dataset, prepared: &Prepared, cfg: &PipelineConfig) -> Result<ModeRun> {
    let pseudo_kept = match &prepared.pseudo_full {
        Some(set) => Some(set.filter_top_fraction(cfg.pseudo_fraction)?),
        None => None,
    };
    let empty = PseudoLabelSet::empty(VerdictSource::Oracle, ds);
    let labels: LabelAssignment = match cfg.mode {
        Mode::Fcn => LabelAssignment::all_zero(ds.len()),
        Mode::Lp | Mode::FcnLp | Mode::Glpn => build_labels(ds, &empty)?,
        Mode::GlpnLlm => build_labels(ds, pseudo_kept.as_ref().unwrap_or(&empty))?,
    };

    let eval_nodes = ds.test_indices();
    let mut records = Vec::with_capacity(cfg.runs);
    let mut last_model = None;
    for run in 0..cfg.runs {
        let run_seed = cfg.seed.wrapping_add(run as u64);
        let classes: Vec<u8> = match cfg.mode {
            Mode::Fcn => {
                let train_cfg = cfg.train_config(run_seed);
                let outcome = label_free_gcn(ds, &prepared.a_hat, &train_cfg)?;
                records.push(RunRecord {
                    seed: run_seed,
                    metrics: outcome.metrics,
                    confusion: outcome.confusion,
                });
                last_model = Some(outcome.model);
                continue;
            }
            Mode::Lp => {
                let lp_cfg = LpConfig { iterations: cfg.lp_iterations, clamp: true };
                classic_lp(&prepared.a_hat, &labels, &lp_cfg)?.classes
            }
            Mode::FcnLp => {
                let train_cfg = cfg.train_config(run_seed);
                let outcome = label_free_gcn(ds, &prepared.a_hat, &train_cfg)?;
                let zero = LabelAssignment::all_zero(ds.len());
                let prediction = predict(ds, &prepared.a_hat, &zero, &outcome.model)?;
                // Seed propagation with the model's probabilities, clamping
                // labeled rows to their one-hot values each step.
                let mut f0 = prediction.probs;
                for (i, p) in labels.provenance().iter().enumerate() {
                    if *p != crate::labels::Provenance::None {
                        f0.row_mut(i).assign(&labels.row(i));
                    }
                }
                let scores = propagate(&prepared.a_hat, f0, Some(&labels), cfg.lp_iterations)?;
                last_model = Some(outcome.model);
                scores
                    .rows()
                    .into_iter()
                    .map(|row| if row[1] > row[0] { 1u8 } else { 0u8 })
                    .collect()
            }
            Mode::Glpn | Mode::GlpnLlm => {
                let train_cfg = cfg.train_config(run_seed);
                let (model, _) = train(ds, &prepared.a_hat, &labels, &train_cfg)?;
                let prediction = predict(ds, &prepared.a_hat, &labels, &model)?;
                last_model = Some(model);
                prediction.classes
            }
        };
        let cm = confusion(&classes, ds, &eval_nodes)?;
        records.push(RunRecord { seed: run_seed, metrics: metrics(&cm), confusion: cm });
    }
    Ok(ModeRun { records, pseudo_kept, last_model })
}

/// Run the full pipeline: graph → pseudo labels → label integration →
/// `runs` training seeds → evaluation on the test split.
pub fn run_pipeline(
    ds: &Dataset,
    cfg: &PipelineConfig,
    source: Option<&PseudoSource>,
) -> Result<PipelineOutput> {
    let prepared = prepare(ds, cfg, source)?;
    let outcome = run_prepared(ds, &prepared, cfg)?;
    let reports: Vec<MetricsReport> = outcome.records.iter().map(|r| r.metrics).collect();
    let document = MetricsDocument {
        mode: cfg.mode,
        config: cfg.clone(),
        dataset: DatasetSummary {
            records: ds.len(),
            n_train: ds.n_train(),
            n_test: ds.n_test(),
            d_t: ds.d_t(),
            d_v: ds.d_v(),
        },
        graph: GraphSummary {
            nodes: prepared.graph.n(),
            edges: prepared.graph.edge_count(),
            theta: prepared.graph.theta(),
        },
        pseudo: prepared.pseudo_full.as_ref().map(|full| PseudoSummary {
            source: full.source(),
            verdicts: full.len(),
            kept: outcome.pseudo_kept.as_ref().map_or(0, |k| k.len()),
            fraction: cfg.pseudo_fraction,
        }),
        runs: outcome.records,
        aggregate: aggregate(&reports)?,
    };
    Ok(PipelineOutput {
        document,
        graph: prepared.graph,
        pseudo_full: prepared.pseudo_full,
        pseudo_kept: outcome.pseudo_kept,
        last_model: outcome.last_model,
    })
}

/// A sweepable parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    MaskRate,
    PseudoFraction,
}

impl SweepParameter {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepParameter::MaskRate => "mask_rate",
            SweepParameter::PseudoFraction => "pseudo_fraction",
        }
    }
}

/// The sweep JSON document written by the `sweep` command.
#[derive(Debug, Clone, Serialize)]
pub struct SweepDocument {
    pub mode: Mode,
    pub config: PipelineConfig,
    pub result: SweepResult,
}

/// Run the pipeline across a parameter grid. The graph and the pseudo-label
/// pool are shared across grid points; each point reruns training with the
/// same `runs` seeds and aggregates.
pub fn sweep(
    ds: &Dataset,
    base: &PipelineConfig,
    parameter: SweepParameter,
    grid: &[f64],
    source: Option<&PseudoSource>,
) -> Result<SweepDocument> {
    if grid.is_empty() {
        return Err(GlpnError::Config("sweep grid is empty".into()));
    }
    match parameter {
        SweepParameter::MaskRate => {
            if !matches!(base.mode, Mode::Glpn | Mode::GlpnLlm) {
                return Err(GlpnError::Config(
                    "mask-rate sweeps need a masked mode (glpn or glpn-llm)".into(),
                ));
            }
            for &v in grid {
                if !(0.0..=1.0).contains(&v) {
                    return Err(GlpnError::Config(format!("mask rate {v} must lie in [0, 1]")));
                }
            }
        }
        SweepParameter::PseudoFraction => {
            if base.mode != Mode::GlpnLlm {
                return Err(GlpnError::Config(
                    "pseudo-fraction sweeps need mode glpn-llm".into(),
                ));
            }
            for &v in grid {
                if !(0.0..=1.0).contains(&v) {
                    return Err(GlpnError::Config(format!("fraction {v} must lie in [0, 1]")));
                }
            }
        }
    }

    let prepared = prepare(ds, base, source)?;
    let mut entries = Vec::with_capacity(grid.len());
    for &value in grid {
        let mut cfg = base.clone();
        match parameter {
            SweepParameter::MaskRate => cfg.rho = value,
            SweepParameter::PseudoFraction => cfg.pseudo_fraction = value,
        }
        let outcome = run_prepared(ds, &prepared, &cfg).map_err(|e| {
            GlpnError::Config(format!("grid value {value}: {e}"))
        })?;
        let runs: Vec<MetricsReport> = outcome.records.iter().map(|r| r.metrics).collect();
        entries.push(SweepEntry { value, aggregate: aggregate(&runs)?, runs });
    }
    Ok(SweepDocument {
        mode: base.mode,
        config: base.clone(),
        result: SweepResult {
            parameter: parameter.as_str().to_string(),
            grid: grid.to_vec(),
            entries,
        },
    })
}
