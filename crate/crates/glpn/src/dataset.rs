//! Dataset loading, validation, and synthesis.
//!
//! A dataset is an ordered sequence of [`NewsRecord`]s; the record order is
//! the canonical node index order consumed by every downstream stage. The
//! on-disk format is JSON Lines, one record per line, with 64-bit floats
//! serialized at full round-trip precision.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{GlpnError, Result};
use crate::pseudo::{parse_verdict, LlmVerdict};

/// Which partition a record belongs to. Train records carry labels used for
/// supervision; test records may carry labels that are held out for
/// evaluation and the oracle labeler only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One news item: identifier, split, optional binary label
/// (0 = fake, 1 = real), one embedding per modality, and optional raw text
/// (needed only for live pseudo-labeling).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NewsRecord {
    pub id: String,
    pub split: Split,
    pub label: Option<u8>,
    pub text_embedding: Vec<f64>,
    pub image_embedding: Vec<f64>,
    #[serde(default)]
    pub text: Option<String>,
}

/// A validated, ordered dataset. Node `i` is the `i`-th record.
#[derive(Debug, Clone)]
pub struct Dataset {
    records: Vec<NewsRecord>,
    d_t: usize,
    d_v: usize,
    n_train: usize,
    n_test: usize,
}

impl Dataset {
    /// Validate records and fix the canonical node order.
    ///
    /// Enforced invariants: unique ids, labeled train records, label values
    /// in {0, 1}, consistent nonzero embedding dimensions, finite embeddings,
    /// and no all-zero embedding (cosine similarity would be undefined).
    pub fn new(records: Vec<NewsRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(GlpnError::Config("dataset has no records".into()));
        }
        let d_t = records[0].text_embedding.len();
        let d_v = records[0].image_embedding.len();
        if d_t == 0 || d_v == 0 {
            return Err(GlpnError::Invariant {
                id: records[0].id.clone(),
                rule: "embedding dimensions must be positive".into(),
            });
        }
        let mut seen = HashSet::new();
        let mut n_train = 0;
        let mut n_test = 0;
        for r in &records {
            if !seen.insert(r.id.as_str()) {
                return Err(GlpnError::Invariant {
                    id: r.id.clone(),
                    rule: "duplicate id".into(),
                });
            }
            match r.split {
                Split::Train => {
                    n_train += 1;
                    if r.label.is_none() {
                        return Err(GlpnError::Invariant {
                            id: r.id.clone(),
                            rule: "train record has no label".into(),
                        });
                    }
                }
                Split::Test => n_test += 1,
            }
            if let Some(l) = r.label {
                if l > 1 {
                    return Err(GlpnError::Invariant {
                        id: r.id.clone(),
                        rule: format!("label {l} is not 0 or 1"),
                    });
                }
            }
            if r.text_embedding.len() != d_t {
                return Err(GlpnError::Invariant {
                    id: r.id.clone(),
                    rule: format!(
                        "text embedding has dimension {}, expected {d_t}",
                        r.text_embedding.len()
                    ),
                });
            }
            if r.image_embedding.len() != d_v {
                return Err(GlpnError::Invariant {
                    id: r.id.clone(),
                    rule: format!(
                        "image embedding has dimension {}, expected {d_v}",
                        r.image_embedding.len()
                    ),
                });
            }
            for (name, emb) in [("text", &r.text_embedding), ("image", &r.image_embedding)] {
                if emb.iter().any(|x| !x.is_finite()) {
                    return Err(GlpnError::Invariant {
                        id: r.id.clone(),
                        rule: format!("{name} embedding contains a non-finite value"),
                    });
                }
                if emb.iter().all(|x| *x == 0.0) {
                    return Err(GlpnError::Invariant {
                        id: r.id.clone(),
                        rule: format!("{name} embedding is the all-zero vector"),
                    });
                }
            }
        }
        Ok(Self { records, d_t, d_v, n_train, n_test })
    }

    pub fn records(&self) -> &[NewsRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn d_t(&self) -> usize {
        self.d_t
    }

    pub fn d_v(&self) -> usize {
        self.d_v
    }

    pub fn n_train(&self) -> usize {
        self.n_train
    }

    pub fn n_test(&self) -> usize {
        self.n_test
    }

    /// Node indices of the train split, in node order.
    pub fn train_indices(&self) -> Vec<usize> {
        self.indices_of(Split::Train)
    }

    /// Node indices of the test split, in node order.
    pub fn test_indices(&self) -> Vec<usize> {
        self.indices_of(Split::Test)
    }

    fn indices_of(&self, split: Split) -> Vec<usize> {
        self.records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    /// Node index of a record id, if present.
    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.records.iter().position(|r| r.id == id)
    }
}

/// Load a JSON Lines dataset. Record order equals file order; parse failures
/// report the 1-based line number, invariant violations name the record id.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: NewsRecord =
            serde_json::from_str(&line).map_err(|e| GlpnError::Parse {
                line: idx + 1,
                message: e.to_string(),
            })?;
        records.push(record);
    }
    Dataset::new(records)
}

/// Write a dataset as JSON Lines (UTF-8, LF line endings). Floats are
/// serialized with full round-trip precision, so save → load is bit-exact.
pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    for r in ds.records() {
        serde_json::to_writer(&mut w, r)
            .map_err(|e| GlpnError::Config(format!("serialize record {}: {e}", r.id)))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Serialize a dataset to an in-memory JSONL string (same bytes as
/// [`save_dataset`] would write).
pub fn dataset_to_jsonl(ds: &Dataset) -> String {
    let mut out = String::new();
    for r in ds.records() {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// Configuration for the synthetic generator.
///
/// Each class is a Gaussian bump on the unit sphere, per modality. The two
/// class mean directions are unit vectors at Euclidean distance
/// `class_separation`; samples are `mean + noise_sigma * gauss`, renormalized
/// to unit length. A record's image cluster matches its text cluster (= its
/// class) with probability `modality_correlation`, otherwise it is flipped.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_per_class_train: usize,
    pub n_per_class_test: usize,
    pub d_t: usize,
    pub d_v: usize,
    pub class_separation: f64,
    pub noise_sigma: f64,
    pub modality_correlation: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_per_class_train: 100,
            n_per_class_test: 100,
            d_t: 8,
            d_v: 8,
            class_separation: 1.0,
            noise_sigma: 0.6,
            modality_correlation: 0.9,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_per_class_train == 0 || self.n_per_class_test == 0 {
            return Err(GlpnError::Config("per-class counts must be >= 1".into()));
        }
        if self.d_t == 0 || self.d_v == 0 {
            return Err(GlpnError::Config("embedding dimensions must be >= 1".into()));
        }
        if !(self.class_separation >= 0.0 && self.class_separation <= 2.0) {
            return Err(GlpnError::Config(
                "class_separation must lie in [0, 2] (distance between unit vectors)".into(),
            ));
        }
        if !(self.noise_sigma > 0.0) {
            return Err(GlpnError::Config("noise_sigma must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.modality_correlation) {
            return Err(GlpnError::Config("modality_correlation must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Generator bookkeeping exposed for tests and diagnostics: the class mean
/// directions per modality and the cluster id actually used for each record.
#[derive(Debug, Clone)]
pub struct SynthMeta {
    pub text_means: [Vec<f64>; 2],
    pub image_means: [Vec<f64>; 2],
    pub text_cluster: Vec<u8>,
    pub image_cluster: Vec<u8>,
}

/// Generate a synthetic dataset. Identical configs yield byte-identical
/// datasets.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Dataset> {
    generate_synthetic_with_meta(cfg).map(|(ds, _)| ds)
}

/// As [`generate_synthetic`], also returning the generator bookkeeping.
pub fn generate_synthetic_with_meta(cfg: &SynthConfig) -> Result<(Dataset, SynthMeta)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let text_means = class_means(cfg.d_t, cfg.class_separation, &mut rng);
    // When the modalities share a dimension the class means are shared too,
    // mimicking encoders that align both modalities in one embedding space;
    // otherwise each modality gets its own pair of directions.
    let image_means = if cfg.d_v == cfg.d_t {
        text_means.clone()
    } else {
        class_means(cfg.d_v, cfg.class_separation, &mut rng)
    };

    let mut records = Vec::new();
    let mut text_cluster = Vec::new();
    let mut image_cluster = Vec::new();
    for (split, tag, n_per_class) in [
        (Split::Train, "train", cfg.n_per_class_train),
        (Split::Test, "test", cfg.n_per_class_test),
    ] {
        for class in 0u8..2 {
            for k in 0..n_per_class {
                let tc = class;
                let ic = if rng.random::<f64>() < cfg.modality_correlation {
                    tc
                } else {
                    1 - tc
                };
                let t = bump_sample(&text_means[tc as usize], cfg.noise_sigma, &mut rng);
                let v = bump_sample(&image_means[ic as usize], cfg.noise_sigma, &mut rng);
                records.push(NewsRecord {
                    id: format!("{tag}-{class}-{k:04}"),
                    split,
                    label: Some(class),
                    text_embedding: t,
                    image_embedding: v,
                    text: None,
                });
                text_cluster.push(tc);
                image_cluster.push(ic);
            }
        }
    }
    let ds = Dataset::new(records)?;
    Ok((ds, SynthMeta { text_means, image_means, text_cluster, image_cluster }))
}

/// Two unit vectors at Euclidean distance `separation`, built from a random
/// orthonormal pair.
fn class_means(dim: usize, separation: f64, rng: &mut ChaCha8Rng) -> [Vec<f64>; 2] {
    if dim == 1 {
        // The sphere in one dimension is {-1, +1}; only separations 0 and 2
        // are representable. Anything else is rejected here.
        let m0 = vec![1.0];
        let m1 = if separation == 0.0 { vec![1.0] } else { vec![-1.0] };
        return [m0, m1];
    }
    let e1 = random_unit(dim, rng);
    // Gram-Schmidt a second direction against the first.
    let e2 = loop {
        let g = random_unit(dim, rng);
        let proj: f64 = g.iter().zip(&e1).map(|(a, b)| a * b).sum();
        let mut o: Vec<f64> = g.iter().zip(&e1).map(|(a, b)| a - proj * b).collect();
        let n = norm(&o);
        if n > 1e-9 {
            o.iter_mut().for_each(|x| *x /= n);
            break o;
        }
    };
    // Unit vectors cos(a)*e1 ± sin(a)*e2 are 2*sin(a) apart.
    let alpha = (separation / 2.0).asin();
    let (s, c) = alpha.sin_cos();
    let m0: Vec<f64> = e1.iter().zip(&e2).map(|(a, b)| c * a + s * b).collect();
    let m1: Vec<f64> = e1.iter().zip(&e2).map(|(a, b)| c * a - s * b).collect();
    [m0, m1]
}

fn random_unit(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm(&g);
        if n > 1e-9 {
            return g.into_iter().map(|x| x / n).collect();
        }
    }
}

fn bump_sample(mean: &[f64], sigma: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let mut x: Vec<f64> = mean
            .iter()
            .map(|m| m + sigma * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let n = norm(&x);
        if n > 1e-9 {
            x.iter_mut().for_each(|v| *v /= n);
            return x;
        }
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Simulate an LLM labeler against held-out test labels.
///
/// Each test record receives a verdict that equals its held-out label with
/// probability `accuracy`. Confidence is drawn from Beta(1 + sharpness, 1)
/// for correct verdicts and Beta(1, 1 + sharpness) for incorrect ones, so
/// correct verdicts stochastically dominate incorrect ones and the dominance
/// grows with `conf_sharpness`. Verdicts are synthesized as response text and
/// run through the real parser.
pub fn oracle_pseudo_labels(
    ds: &Dataset,
    accuracy: f64,
    conf_sharpness: f64,
    seed: u64,
) -> Result<Vec<(String, LlmVerdict)>> {
    if !(0.0..=1.0).contains(&accuracy) {
        return Err(GlpnError::Config("oracle accuracy must lie in [0, 1]".into()));
    }
    if !(conf_sharpness > 0.0) {
        return Err(GlpnError::Config("conf_sharpness must be > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for &i in &ds.test_indices() {
        let r = &ds.records()[i];
        let label = r.label.ok_or_else(|| GlpnError::MissingLabel(r.id.clone()))?;
        let correct = rng.random::<f64>() < accuracy;
        let pred = if correct { label } else { 1 - label };
        // Inverse-CDF sampling: U^(1/a) ~ Beta(a, 1).
        let u: f64 = rng.random();
        let hi = u.powf(1.0 / (1.0 + conf_sharpness));
        let conf = if correct { hi } else { 1.0 - hi };
        let raw = format!("Result: {pred}, Confidence: {:.1}%", conf * 100.0);
        let verdict = parse_verdict(&raw).expect("oracle responses are well-formed");
        out.push((r.id.clone(), verdict));
    }
    Ok(out)
}
