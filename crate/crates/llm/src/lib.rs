//! Chat-completion client used to annotate pose samples with LLM-written
//! descriptions.
//!
//! Requests are retried on HTTP 429 and 5xx with jittered exponential
//! backoff, the number of outstanding requests is bounded by a semaphore,
//! and replies are parsed strictly into the requested number of
//! descriptions.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;
use tokio::sync::Semaphore;
use tokio::task::JoinSet;

use tog_core::annotation::{build_prompt, Precision, PromptSpec, Source};
use tog_core::dataset::TextRecord;
use tog_core::grid::PoseSample;

pub const DEFAULT_KEY_ENV: &str = "TOG_LLM_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub temperature: f64,
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
    pub max_in_flight: usize,
    pub timeout_secs: u64,
    /// Seed for backoff jitter.
    pub jitter_seed: u64,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4-turbo".into(),
            api_key_env: DEFAULT_KEY_ENV.into(),
            temperature: 0.7,
            max_attempts: 5,
            backoff_base_ms: 500,
            max_in_flight: 4,
            timeout_secs: 60,
            jitter_seed: 0,
        }
    }
}

impl LlmConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.max_attempts == 0 {
            return Err(LlmError::Config("max_attempts must be at least 1".into()));
        }
        if self.max_in_flight == 0 {
            return Err(LlmError::Config("max_in_flight must be at least 1".into()));
        }
        if self.timeout_secs == 0 {
            return Err(LlmError::Config("timeout must be positive".into()));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(LlmError::Config(format!("temperature {} is invalid", self.temperature)));
        }
        if self.endpoint.is_empty() {
            return Err(LlmError::Config("endpoint is empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("API key variable `{0}` is not set")]
    MissingKey(String),
    #[error("invalid LLM configuration: {0}")]
    Config(String),
    #[error("request failed after {attempts} attempt(s): {detail}")]
    Transport { attempts: u32, detail: String },
    #[error("protocol error{}: {detail}", status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
    Protocol { status: Option<u16>, detail: String },
    #[error("malformed reply: expected {expected} description(s), found {found}")]
    Malformed { expected: usize, found: usize },
    #[error("all {} sample(s) failed; first: {}", .0.len(), .0.first().map(|f| f.reason.as_str()).unwrap_or(""))]
    AllFailed(Vec<Failure>),
}

/// Delay before retry number `k` (0-based): `base·2^k` stretched by up to
/// half again by `jitter` in [0, 1). Each delay is at least the largest
/// possible previous one, so the sequence never decreases.
pub fn backoff_delay(base_ms: u64, k: u32, jitter: f64) -> Duration {
    let nominal = base_ms as f64 * 2f64.powi(k.min(20) as i32);
    Duration::from_secs_f64(nominal * (1.0 + 0.5 * jitter.clamp(0.0, 0.999_999)) / 1000.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatOutcome {
    pub content: String,
    pub attempts: u32,
}

pub struct LlmClient {
    http: reqwest::Client,
    cfg: LlmConfig,
    key: String,
    permits: Semaphore,
    jitter: Mutex<ChaCha8Rng>,
    attempts: AtomicUsize,
}

impl LlmClient {
    /// Reads the API key from the configured environment variable.
    pub fn from_env(cfg: LlmConfig) -> Result<Self, LlmError> {
        let key = std::env::var(&cfg.api_key_env).map_err(|_| LlmError::MissingKey(cfg.api_key_env.clone()))?;
        Self::with_key(cfg, key)
    }

    pub fn with_key(cfg: LlmConfig, key: String) -> Result<Self, LlmError> {
        cfg.validate()?;
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| LlmError::Config(e.to_string()))?;
        Ok(Self {
            http,
            permits: Semaphore::new(cfg.max_in_flight),
            jitter: Mutex::new(ChaCha8Rng::seed_from_u64(cfg.jitter_seed)),
            cfg,
            key,
            attempts: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &LlmConfig {
        &self.cfg
    }

    /// HTTP attempts made so far across all requests.
    pub fn attempts_made(&self) -> usize {
        self.attempts.load(Ordering::SeqCst)
    }

    /// POSTs one chat request and returns `choices[0].message.content`.
    pub async fn send_chat_request(&self, prompt: &str) -> Result<ChatOutcome, LlmError> {
        let body = json!({
            "model": self.cfg.model,
            "messages": [{ "role": "user", "content": prompt }],
            "temperature": self.cfg.temperature,
        });
        let mut last = String::new();
        for attempt in 1..=self.cfg.max_attempts {
            let result = {
                let _permit = self.permits.acquire().await.expect("semaphore is never closed");
                self.attempts.fetch_add(1, Ordering::SeqCst);
                match self.http.post(&self.cfg.endpoint).bearer_auth(&self.key).json(&body).send().await {
                    Ok(resp) => {
                        let status = resp.status();
                        let text = resp.text().await;
                        Ok((status, text))
                    }
                    Err(e) => Err(e),
                }
            };
            match result {
                Ok((status, Ok(text))) if status.is_success() => {
                    return extract_content(&text).map(|content| ChatOutcome { content, attempts: attempt });
                }
                Ok((status, text)) if status.as_u16() == 429 || status.is_server_error() => {
                    last = format!("HTTP {status}: {}", text.unwrap_or_default());
                }
                Ok((status, Err(e))) if status.is_success() => last = format!("reading body: {e}"),
                Ok((status, text)) => {
                    return Err(LlmError::Protocol {
                        status: Some(status.as_u16()),
                        detail: text.unwrap_or_default(),
                    });
                }
                Err(e) => last = e.to_string(),
            }
            if attempt < self.cfg.max_attempts {
                let u: f64 = self.jitter.lock().expect("jitter lock").random();
                tokio::time::sleep(backoff_delay(self.cfg.backoff_base_ms, attempt - 1, u)).await;
            }
        }
        Err(LlmError::Transport { attempts: self.cfg.max_attempts, detail: last })
    }
}

/// Convenience wrapper that builds a client from the environment.
pub async fn send_chat_request(prompt: &str, cfg: &LlmConfig) -> Result<String, LlmError> {
    Ok(LlmClient::from_env(cfg.clone())?.send_chat_request(prompt).await?.content)
}

fn extract_content(body: &str) -> Result<String, LlmError> {
    let v: serde_json::Value = serde_json::from_str(body)
        .map_err(|e| LlmError::Protocol { status: None, detail: format!("response is not JSON: {e}") })?;
    v.pointer("/choices/0/message/content")
        .and_then(|c| c.as_str())
        .map(str::to_string)
        .ok_or_else(|| LlmError::Protocol { status: None, detail: "missing choices[0].message.content".into() })
}

fn clean_item(s: &str) -> String {
    let s = s.trim();
    let s = s.strip_prefix("- ").unwrap_or(s).trim();
    s.trim_matches(|c| matches!(c, '"' | '\u{201c}' | '\u{201d}' | '\'' | '*')).trim().to_string()
}

/// Length of a leading `12.` / `3)` list marker, if any.
fn marker_len(line: &str) -> Option<usize> {
    let digits = line.bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 {
        return None;
    }
    match line.as_bytes().get(digits) {
        Some(b'.') | Some(b')') => Some(digits + 1),
        _ => None,
    }
}

/// Splits a reply into exactly `n` descriptions.
pub fn parse_llm_reply(content: &str, n: usize) -> Result<Vec<String>, LlmError> {
    if n == 0 {
        return Err(LlmError::Config("expected description count must be at least 1".into()));
    }
    let items: Vec<String> = if n == 1 {
        let s = clean_item(content);
        if s.is_empty() {
            Vec::new()
        } else {
            vec![s.split_whitespace().collect::<Vec<_>>().join(" ")]
        }
    } else if content.lines().any(|l| marker_len(l.trim_start()).is_some()) {
        let mut items: Vec<String> = Vec::new();
        for line in content.lines() {
            let t = line.trim();
            match marker_len(t) {
                Some(k) => items.push(t[k..].to_string()),
                None if !t.is_empty() => {
                    if let Some(cur) = items.last_mut() {
                        cur.push(' ');
                        cur.push_str(t);
                    }
                }
                None => {}
            }
        }
        items.iter().map(|s| clean_item(s)).filter(|s| !s.is_empty()).collect()
    } else {
        content
            .split("\n\n")
            .map(|p| clean_item(&p.split_whitespace().collect::<Vec<_>>().join(" ")))
            .filter(|s| !s.is_empty())
            .collect()
    };
    if items.len() != n {
        return Err(LlmError::Malformed { expected: n, found: items.len() });
    }
    Ok(items)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub sample_id: u32,
    pub precision: Precision,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BatchOutcome {
    /// Four records per successful sample, ordered by sample id, then low
    /// before high, then variant.
    pub records: Vec<TextRecord>,
    pub failures: Vec<Failure>,
}

async fn request_descriptions(client: &LlmClient, prompt: &str, n: usize) -> Result<Vec<String>, LlmError> {
    let first = client.send_chat_request(prompt).await?;
    match parse_llm_reply(&first.content, n) {
        Err(LlmError::Malformed { .. }) if n > 1 => {
            let second = client.send_chat_request(prompt).await?;
            parse_llm_reply(&second.content, n)
        }
        other => other,
    }
}

/// Annotates every sample with one low- and three high-precision
/// descriptions. A sample with any failed request contributes no records
/// and one failure entry.
pub async fn annotate_batch(
    client: Arc<LlmClient>,
    samples: &[PoseSample],
    subject: &str,
) -> Result<BatchOutcome, LlmError> {
    if samples.is_empty() {
        return Err(LlmError::Config("no samples to annotate".into()));
    }
    let mut set = JoinSet::new();
    for (idx, s) in samples.iter().enumerate() {
        for precision in [Precision::Low, Precision::High] {
            let spec = PromptSpec { subject: subject.to_string(), ..PromptSpec::new(precision) };
            let prompt = build_prompt(s, &spec);
            let client = Arc::clone(&client);
            set.spawn(async move {
                let r = request_descriptions(&client, &prompt, spec.n_variants).await;
                (idx, precision, r)
            });
        }
    }
    type Slot = Option<Result<Vec<String>, String>>;
    let mut results: Vec<[Slot; 2]> = vec![[None, None]; samples.len()];
    while let Some(joined) = set.join_next().await {
        let (idx, precision, r) = joined.map_err(|e| LlmError::Config(format!("annotation task failed: {e}")))?;
        let slot = if precision == Precision::Low { 0 } else { 1 };
        results[idx][slot] = Some(r.map_err(|e| e.to_string()));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by_key(|&i| samples[i].id);
    let mut out = BatchOutcome::default();
    for i in order {
        let s = &samples[i];
        let [low, high] = std::mem::take(&mut results[i]);
        match (low.expect("low result"), high.expect("high result")) {
            (Ok(low), Ok(high)) => {
                for (precision, texts) in [(Precision::Low, low), (Precision::High, high)] {
                    for (v, text) in texts.into_iter().enumerate() {
                        out.records.push(TextRecord::from_sample(s, precision, text, Source::Llm, v as u32));
                    }
                }
            }
            (Err(reason), _) => out.failures.push(Failure { sample_id: s.id, precision: Precision::Low, reason }),
            (_, Err(reason)) => out.failures.push(Failure { sample_id: s.id, precision: Precision::High, reason }),
        }
    }
    if out.records.is_empty() {
        return Err(LlmError::AllFailed(out.failures));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbered_list() {
        assert_eq!(parse_llm_reply("1. A\n2. B\n3. C", 3).unwrap(), ["A", "B", "C"]);
        let r = parse_llm_reply("Here you go:\n1) \"The person looks up.\"\n  still item one\n2. Two\n3. Three", 3).unwrap();
        assert_eq!(r[0], "The person looks up.\" still item one");
        assert_eq!(r[2], "Three");
    }

    #[test]
    fn single_and_paragraphs() {
        assert_eq!(parse_llm_reply("  The person looks left.\n", 1).unwrap(), ["The person looks left."]);
        assert_eq!(parse_llm_reply("A one.\n\nB two.\n\nC three.", 3).unwrap(), ["A one.", "B two.", "C three."]);
    }

    #[test]
    fn wrong_count() {
        assert!(matches!(parse_llm_reply("1. A\n2. B", 3), Err(LlmError::Malformed { expected: 3, found: 2 })));
        assert!(matches!(parse_llm_reply("   ", 1), Err(LlmError::Malformed { expected: 1, found: 0 })));
        assert!(matches!(parse_llm_reply("x", 0), Err(LlmError::Config(_))));
    }

    #[test]
    fn content_extraction() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":"hi"}}]}"#;
        assert_eq!(extract_content(body).unwrap(), "hi");
        assert!(matches!(extract_content("{}"), Err(LlmError::Protocol { .. })));
    }

    #[test]
    fn config_checks() {
        assert!(LlmConfig { max_attempts: 0, ..Default::default() }.validate().is_err());
        assert!(LlmConfig { max_in_flight: 0, ..Default::default() }.validate().is_err());
        let cfg = LlmConfig { api_key_env: "TOG_TEST_SURELY_UNSET_KEY".into(), ..Default::default() };
        assert!(matches!(LlmClient::from_env(cfg), Err(LlmError::MissingKey(_))));
    }
}
