//! Prompt rendering, verdict parsing, and confidence filtering for
//! LLM-generated pseudo labels.
//!
//! Verdicts come from one of three sources: a live chat-completion endpoint
//! (see [`client`]), a recorded fixture file, or the offline oracle simulator
//! in [`crate::dataset::oracle_pseudo_labels`]. All three produce the same
//! [`PseudoLabelSet`], so downstream stages never care where labels came
//! from.

pub mod client;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, NewsRecord};
use crate::error::{GlpnError, Result, VerdictError};

/// One chat turn of a completion request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: &str, content: &str) -> Self {
        Self { role: role.into(), content: content.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptStyle {
    Detailed,
    Simple,
}

const DETAILED_SYSTEM: &str = "You are a professional misinformation evaluation expert with extensive experience in detecting and evaluating fake news. Your primary task is to assess the authenticity of the provided news content.\n\nYou must adhere to the following strict evaluation guidelines:\n- If the news is clearly true, label it as 1 (true).\n- If the news contains ambiguity, unverifiable information, or suspicious claims, you must classify it as 0 (false).\n- Alongside your classification, provide a confidence score (between 0% and 100%) that reflects your certainty in the decision.\n- Your confidence score should be lower (e.g., 50%-70%) when the news includes unclear or mixed signals, and higher (e.g., 80%-100%) when you are certain.\n\nOutput format:\nResult: R, Confidence: C%,\nwhere R is 1 (true) or 0 (false), and C is the confidence score. Be precise, concise, avoid unnecessary explanations, and give me the reason.";

const DETAILED_FEW_SHOT: [(&str, &str); 6] = [
    (
        "user",
        "BREAKING: SkyBusiness reports another five hostages seen escaping #sydneysiege.\nAdditional context: The event is unfolding in Sydney's central business district. Initial unverified reports mention hostages being rescued, but official statements have not yet been released.",
    ),
    (
        "system",
        "Result: 1, Confidence: 85%\nReason: Based on credible news reports and consistent information across major media outlets, the claim of hostages escaping appears highly plausible. Minor uncertainty remains due to the absence of official verification.",
    ),
    ("user", "CONFIRMED: NASA discovers alien life on Mars."),
    (
        "system",
        "Result: 0, Confidence: 30%\nReason: This claim lacks supporting evidence from verified scientific sources, and NASA has not released any official confirmation regarding such a discovery. The headline seems sensationalized or misleading.",
    ),
    (
        "user",
        "ALERT: Severe storms expected to hit California tomorrow, warns National Weather Service.",
    ),
    (
        "system",
        "Result: 1, Confidence: 95%\nReason: The information originates from the National Weather Service, a highly reliable and authoritative source. Severe weather forecasts for tomorrow are consistent across official meteorological channels.",
    ),
];

const SIMPLE_SYSTEM: &str = "You are tasked with determining whether the provided news content is true or false.\nOutput format: Result: R, Confidence :c, where R is 1 (true) or 0 (false).";

const SIMPLE_FEW_SHOT: [(&str, &str); 6] = [
    ("user", "BREAKING: SkyBusiness reports another five hostages seen escaping #sydneysiege."),
    ("system", "Result: 1, Confidence: 49%"),
    ("user", "CONFIRMED: NASA discovers alien life on Mars."),
    ("system", "Result: 0, Confidence: 20%"),
    ("user", "ALERT: Severe storms expected to hit California tomorrow."),
    ("system", "Result: 1, Confidence: 63%"),
];

/// A labeling prompt: a system instruction plus fixed few-shot exchanges.
#[derive(Debug, Clone)]
pub struct PromptTemplate {
    style: PromptStyle,
    system_text: String,
    few_shot_turns: Vec<ChatMessage>,
}

impl PromptTemplate {
    pub fn detailed() -> Self {
        Self::from_parts(PromptStyle::Detailed, DETAILED_SYSTEM, &DETAILED_FEW_SHOT)
    }

    pub fn simple() -> Self {
        Self::from_parts(PromptStyle::Simple, SIMPLE_SYSTEM, &SIMPLE_FEW_SHOT)
    }

    pub fn of_style(style: PromptStyle) -> Self {
        match style {
            PromptStyle::Detailed => Self::detailed(),
            PromptStyle::Simple => Self::simple(),
        }
    }

    fn from_parts(style: PromptStyle, system: &str, few_shot: &[(&str, &str)]) -> Self {
        Self {
            style,
            system_text: system.into(),
            few_shot_turns: few_shot
                .iter()
                .map(|(role, content)| ChatMessage::new(role, content))
                .collect(),
        }
    }

    pub fn style(&self) -> PromptStyle {
        self.style
    }

    pub fn system_text(&self) -> &str {
        &self.system_text
    }

    pub fn few_shot_turns(&self) -> &[ChatMessage] {
        &self.few_shot_turns
    }

    /// Render the chat request for one record: the system instruction, the
    /// few-shot exchanges, and a final user message holding the record's
    /// cleaned text.
    pub fn render(&self, record: &NewsRecord) -> Result<Vec<ChatMessage>> {
        let text = record
            .text
            .as_deref()
            .ok_or_else(|| GlpnError::MissingText(record.id.clone()))?;
        let cleaned = clean_text(text);
        if cleaned.is_empty() {
            return Err(GlpnError::MissingText(record.id.clone()));
        }
        let mut messages = Vec::with_capacity(self.few_shot_turns.len() + 2);
        messages.push(ChatMessage::new("system", &self.system_text));
        messages.extend(self.few_shot_turns.iter().cloned());
        messages.push(ChatMessage::new("user", &cleaned));
        Ok(messages)
    }
}

/// Strip control characters and collapse whitespace runs to single spaces.
pub fn clean_text(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pending_space = false;
    for c in text.chars() {
        if c.is_whitespace() {
            pending_space = true;
        } else if c.is_control() {
            // Non-whitespace control characters are dropped entirely.
        } else {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.push(c);
        }
    }
    out
}

/// A parsed LLM response: predicted class, confidence in [0, 1], optional
/// free-text reason, and the original response text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmVerdict {
    pub pred: u8,
    pub confidence: f64,
    pub reason: Option<String>,
    pub raw: String,
}

static RESULT_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)result\s*:\s*(-?\d+)").expect("static regex"));
static CONFIDENCE_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)confidence\s*:\s*(-?\d+(?:\.\d+)?)\s*%?").expect("static regex"));
static REASON_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)reason\s*:\s*").expect("static regex"));
static BLANK_LINE_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\n\s*\n").expect("static regex"));

/// Parse a response of the form `Result: R, Confidence: C%` with an optional
/// `Reason:` block, tolerating surrounding prose, case differences, and
/// trailing punctuation. Never panics; every failure is a typed error.
pub fn parse_verdict(response_text: &str) -> std::result::Result<LlmVerdict, VerdictError> {
    let result_token = RESULT_RE
        .captures(response_text)
        .map(|c| c[1].to_string())
        .ok_or(VerdictError::MissingResult)?;
    let pred = match result_token.parse::<i64>() {
        Ok(0) => 0u8,
        Ok(1) => 1u8,
        _ => return Err(VerdictError::ResultOutOfRange(result_token)),
    };

    let conf_token = CONFIDENCE_RE
        .captures(response_text)
        .map(|c| c[1].to_string())
        .ok_or(VerdictError::MissingConfidence)?;
    let percent: f64 = conf_token.parse().unwrap_or(f64::INFINITY);
    if !(0.0..=100.0).contains(&percent) {
        return Err(VerdictError::ConfidenceOutOfRange(percent));
    }

    let reason = REASON_RE.find(response_text).and_then(|m| {
        let tail = &response_text[m.end()..];
        let block = match BLANK_LINE_RE.find(tail) {
            Some(stop) => &tail[..stop.start()],
            None => tail,
        };
        let trimmed = block.trim();
        (!trimmed.is_empty()).then(|| trimmed.to_string())
    });

    Ok(LlmVerdict {
        pred,
        confidence: percent / 100.0,
        reason,
        raw: response_text.to_string(),
    })
}

/// Where a set of verdicts came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerdictSource {
    Live,
    Fixture,
    Oracle,
}

/// Verdicts for a subset of the dataset's test records, keyed by record id.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelSet {
    verdicts: BTreeMap<String, LlmVerdict>,
    source: VerdictSource,
    /// Size of the labeling pool (the test split); confidence filtering takes
    /// its fraction of this, not of however many verdicts parsed.
    pool_size: usize,
}

impl PseudoLabelSet {
    /// Build a set, enforcing that every id belongs to the dataset's test
    /// split.
    pub fn new(
        verdicts: BTreeMap<String, LlmVerdict>,
        source: VerdictSource,
        ds: &Dataset,
    ) -> Result<Self> {
        let test_ids: std::collections::HashSet<&str> = ds
            .test_indices()
            .into_iter()
            .map(|i| ds.records()[i].id.as_str())
            .collect();
        for id in verdicts.keys() {
            if !test_ids.contains(id.as_str()) {
                return Err(GlpnError::Invariant {
                    id: id.clone(),
                    rule: "pseudo-label id is not a test record".into(),
                });
            }
        }
        Ok(Self { verdicts, source, pool_size: ds.n_test() })
    }

    pub fn from_pairs(
        pairs: Vec<(String, LlmVerdict)>,
        source: VerdictSource,
        ds: &Dataset,
    ) -> Result<Self> {
        Self::new(pairs.into_iter().collect(), source, ds)
    }

    pub fn empty(source: VerdictSource, ds: &Dataset) -> Self {
        Self { verdicts: BTreeMap::new(), source, pool_size: ds.n_test() }
    }

    pub fn len(&self) -> usize {
        self.verdicts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.verdicts.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&LlmVerdict> {
        self.verdicts.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &LlmVerdict)> {
        self.verdicts.iter()
    }

    pub fn source(&self) -> VerdictSource {
        self.source
    }

    pub fn pool_size(&self) -> usize {
        self.pool_size
    }

    /// Keep the `floor(fraction * pool_size)` verdicts with the highest
    /// confidence. Ties at the cutoff are broken by ascending id, and the
    /// kept count never exceeds the floor.
    pub fn filter_top_fraction(&self, fraction: f64) -> Result<PseudoLabelSet> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(GlpnError::Config(format!("fraction {fraction} must lie in [0, 1]")));
        }
        let keep = ((fraction * self.pool_size as f64).floor() as usize).min(self.len());
        let mut ranked: Vec<(&String, &LlmVerdict)> = self.verdicts.iter().collect();
        ranked.sort_by(|(ida, va), (idb, vb)| {
            vb.confidence
                .partial_cmp(&va.confidence)
                .expect("confidence is finite")
                .then_with(|| ida.cmp(idb))
        });
        let verdicts = ranked
            .into_iter()
            .take(keep)
            .map(|(id, v)| (id.clone(), v.clone()))
            .collect();
        Ok(PseudoLabelSet { verdicts, source: self.source, pool_size: self.pool_size })
    }
}

/// One line of the raw-response fixture file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixtureLine {
    pub id: String,
    pub raw: String,
}

/// Write raw responses as a JSONL fixture for later replay.
pub fn save_fixture(lines: &[FixtureLine], path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    for l in lines {
        serde_json::to_writer(&mut w, l)
            .map_err(|e| GlpnError::Config(format!("serialize fixture line: {e}")))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Replay a fixture file: parse each recorded raw response. Responses that do
/// not parse are excluded, mirroring live-fetch behavior. No network is used.
pub fn load_fixture_verdicts(ds: &Dataset, path: &Path) -> Result<PseudoLabelSet> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut verdicts = BTreeMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: FixtureLine = serde_json::from_str(&line).map_err(|e| GlpnError::Fixture {
            line: idx + 1,
            message: e.to_string(),
        })?;
        if let Ok(v) = parse_verdict(&entry.raw) {
            verdicts.insert(entry.id, v);
        }
    }
    PseudoLabelSet::new(verdicts, VerdictSource::Fixture, ds)
}

/// One line of the parsed pseudo-label file.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct PseudoFileLine {
    id: String,
    pred: u8,
    confidence: f64,
    reason: Option<String>,
}

/// Write parsed verdicts as JSONL (`id`, `pred`, `confidence`, `reason`).
pub fn save_pseudo_labels(set: &PseudoLabelSet, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    for (id, v) in set.iter() {
        let line = PseudoFileLine {
            id: id.clone(),
            pred: v.pred,
            confidence: v.confidence,
            reason: v.reason.clone(),
        };
        serde_json::to_writer(&mut w, &line)
            .map_err(|e| GlpnError::Config(format!("serialize pseudo label: {e}")))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Read a pseudo-label file back. The original raw response text is not part
/// of this format, so `raw` is left empty.
pub fn load_pseudo_labels(ds: &Dataset, path: &Path) -> Result<PseudoLabelSet> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut verdicts = BTreeMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: PseudoFileLine = serde_json::from_str(&line).map_err(|e| GlpnError::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        if entry.pred > 1 {
            return Err(GlpnError::Parse {
                line: idx + 1,
                message: format!("pred {} is not 0 or 1", entry.pred),
            });
        }
        if !(0.0..=1.0).contains(&entry.confidence) {
            return Err(GlpnError::Parse {
                line: idx + 1,
                message: format!("confidence {} is outside [0, 1]", entry.confidence),
            });
        }
        verdicts.insert(
            entry.id,
            LlmVerdict {
                pred: entry.pred,
                confidence: entry.confidence,
                reason: entry.reason,
                raw: String::new(),
            },
        );
    }
    PseudoLabelSet::new(verdicts, VerdictSource::Fixture, ds)
}
