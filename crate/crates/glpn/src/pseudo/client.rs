//! Live chat-completion client with retry, backoff, and fixture caching.
//!
//! Requests follow the widely used chat-completion schema: POST a JSON body
//! `{model, messages, temperature}` and read the first choice's message
//! content. Temperature is fixed to 0 for determinism.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{GlpnError, Result};
use crate::pseudo::{
    parse_verdict, save_fixture, ChatMessage, FixtureLine, LlmVerdict, PromptTemplate,
    PseudoLabelSet, VerdictSource,
};

/// Environment variable consulted for the API key when none is configured.
pub const API_KEY_ENV: &str = "LLM_API_KEY";

/// Connection and retry settings for a chat-completion endpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EndpointConfig {
    /// Full URL of the chat-completions route.
    pub url: String,
    pub model: String,
    /// Bearer token; falls back to the `LLM_API_KEY` environment variable.
    pub api_key: Option<String>,
    /// Retries after the first attempt (total requests <= 1 + max_retries).
    pub max_retries: usize,
    /// First backoff delay; doubles on every retry.
    pub initial_backoff_ms: u64,
    pub timeout_secs: u64,
    /// Maximum concurrent in-flight requests.
    pub concurrency: usize,
    /// Where to cache raw responses for later replay.
    pub cache_path: Option<PathBuf>,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            url: String::new(),
            model: String::new(),
            api_key: None,
            max_retries: 3,
            initial_backoff_ms: 250,
            timeout_secs: 60,
            concurrency: 1,
            cache_path: None,
        }
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: String,
}

/// Request accounting for one fetch run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FetchStats {
    /// HTTP requests issued, including retries.
    pub requests: usize,
    /// Test records whose responses never parsed and were recorded absent.
    pub absent: usize,
}

fn is_retryable_status(code: u16) -> bool {
    matches!(code, 408 | 429) || (500..=599).contains(&code)
}

/// Fetch one verdict per test record from a live endpoint.
///
/// Transport failures (and retryable HTTP statuses) are retried with
/// exponential backoff and become hard errors once retries are exhausted.
/// Responses that arrive but do not parse as verdicts are retried the same
/// way, then recorded as absent. All final raw responses are cached to
/// `cache_path` (sorted by id) for replay.
pub fn fetch_verdicts(
    ds: &Dataset,
    template: &PromptTemplate,
    config: &EndpointConfig,
) -> Result<(PseudoLabelSet, FetchStats)> {
    let api_key = config
        .api_key
        .clone()
        .or_else(|| std::env::var(API_KEY_ENV).ok());

    let mut jobs = Vec::new();
    for &i in &ds.test_indices() {
        let record = &ds.records()[i];
        let messages = template.render(record)?;
        jobs.push((record.id.clone(), messages));
    }

    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
        .build()
        .into();

    let queue = Mutex::new(jobs);
    let verdicts = Mutex::new(BTreeMap::<String, LlmVerdict>::new());
    let raws = Mutex::new(Vec::<FixtureLine>::new());
    let first_error = Mutex::new(None::<GlpnError>);
    let requests = AtomicUsize::new(0);
    let absent = AtomicUsize::new(0);

    let workers = config.concurrency.max(1);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if first_error.lock().unwrap().is_some() {
                    return;
                }
                let Some((id, messages)) = queue.lock().unwrap().pop() else {
                    return;
                };
                match fetch_one(&agent, config, api_key.as_deref(), &messages, &requests) {
                    Ok((verdict, raw)) => {
                        if let Some(raw) = raw {
                            raws.lock().unwrap().push(FixtureLine { id: id.clone(), raw });
                        }
                        match verdict {
                            Some(v) => {
                                verdicts.lock().unwrap().insert(id, v);
                            }
                            None => {
                                absent.fetch_add(1, Ordering::Relaxed);
                            }
                        }
                    }
                    Err(e) => {
                        let mut slot = first_error.lock().unwrap();
                        if slot.is_none() {
                            *slot = Some(e);
                        }
                        return;
                    }
                }
            });
        }
    });

    if let Some(e) = first_error.into_inner().unwrap() {
        return Err(e);
    }

    if let Some(path) = &config.cache_path {
        let mut lines = raws.into_inner().unwrap();
        lines.sort_by(|a, b| a.id.cmp(&b.id));
        save_fixture(&lines, path)?;
    }

    let stats = FetchStats {
        requests: requests.load(Ordering::Relaxed),
        absent: absent.load(Ordering::Relaxed),
    };
    let set = PseudoLabelSet::new(verdicts.into_inner().unwrap(), VerdictSource::Live, ds)?;
    Ok((set, stats))
}

/// One record's request loop. Returns the parsed verdict (or `None` after
/// exhausting retries on unparseable responses) and the last raw response.
fn fetch_one(
    agent: &ureq::Agent,
    config: &EndpointConfig,
    api_key: Option<&str>,
    messages: &[ChatMessage],
    requests: &AtomicUsize,
) -> Result<(Option<LlmVerdict>, Option<String>)> {
    let body = ChatRequest { model: &config.model, messages, temperature: 0.0 };
    let mut last_raw = None;
    let mut attempt = 0;
    loop {
        requests.fetch_add(1, Ordering::Relaxed);
        let mut req = agent.post(&config.url).header("Content-Type", "application/json");
        if let Some(key) = api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let failure = match req.send_json(&body) {
            Ok(mut response) => match response.body_mut().read_json::<ChatResponse>() {
                Ok(parsed) => match parsed.choices.first() {
                    Some(choice) => {
                        let raw = choice.message.content.clone();
                        let verdict = parse_verdict(&raw).ok();
                        last_raw = Some(raw);
                        match verdict {
                            Some(v) => return Ok((Some(v), last_raw)),
                            None => format!("unparseable verdict (attempt {})", attempt + 1),
                        }
                    }
                    None => "response had no choices".to_string(),
                },
                Err(e) => format!("malformed response body: {e}"),
            },
            Err(ureq::Error::StatusCode(code)) if is_retryable_status(code) => {
                format!("retryable HTTP status {code}")
            }
            Err(ureq::Error::StatusCode(code)) => {
                return Err(GlpnError::Transport(format!("HTTP status {code}")));
            }
            Err(e) => format!("{e}"),
        };

        if attempt >= config.max_retries {
            // Distinguish "the wire kept failing" from "the model kept
            // producing something unreadable": only the former is an error.
            if last_raw.is_some() {
                return Ok((None, last_raw));
            }
            return Err(GlpnError::Transport(format!(
                "{failure} after {} attempts",
                attempt + 1
            )));
        }
        let delay = config.initial_backoff_ms.saturating_mul(1 << attempt.min(16));
        log::warn!("request failed ({failure}); retrying in {delay} ms");
        std::thread::sleep(Duration::from_millis(delay));
        attempt += 1;
    }
}
