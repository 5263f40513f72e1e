//! Transductive multimodal fake-news classification over cross-modal
//! similarity graphs.
//!
//! The pipeline ingests precomputed text/image embeddings, connects items
//! whose embeddings are strongly similar within or across modalities, injects
//! ground-truth and LLM-generated pseudo labels into node features, and
//! trains a two-layer graph-convolutional classifier. During training the
//! label features of a random node subset are zeroed each epoch and the loss
//! is restricted to those nodes, so no node can shortcut by reading its own
//! label out of its input row.
//!
//! Modules follow the pipeline stages:
//!
//! - [`dataset`]: load, validate, and synthesize embedding datasets
//! - [`graph`]: cross-modal similarity graph and normalized adjacency
//! - [`pseudo`]: prompt rendering, LLM verdicts, confidence filtering
//! - [`labels`]: label vectors, random masking, feature assembly
//! - [`gcn`]: the masked graph-convolutional trainer (manual gradients, Adam)
//! - [`baselines`]: classic label propagation and the label-free GCN
//! - [`eval`]: classification metrics and multi-seed aggregation
//! - [`pipeline`]: end-to-end orchestration and parameter sweeps

pub mod baselines;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod gcn;
pub mod graph;
pub mod labels;
pub mod pipeline;
pub mod pseudo;

pub use error::{GlpnError, Result, VerdictError};
