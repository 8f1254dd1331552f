//! Text-completion backends: an offline deterministic mock, a scripted
//! stand-in for tests, and an OpenAI-style HTTP client.

use std::collections::HashMap;
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

use super::prompt::split_sections;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub seed: u64,
    /// Repeated runs per persona, merged by majority vote.
    pub votes: usize,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            temperature: 0.6,
            top_p: 0.7,
            max_tokens: 8192,
            seed: 17,
            votes: 3,
        }
    }
}

impl SamplingParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0) {
            return Err(Error::Config(format!("temperature must be >= 0, got {}", self.temperature)));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Config(format!("top_p must be in (0, 1], got {}", self.top_p)));
        }
        if self.max_tokens == 0 {
            return Err(Error::Config("max_tokens must be >= 1".into()));
        }
        if self.votes == 0 || self.votes % 2 == 0 {
            return Err(Error::Config(format!("votes must be odd and >= 1, got {}", self.votes)));
        }
        Ok(())
    }

    pub fn request(&self, system: &str, user: &str, seed: u64) -> CompletionRequest {
        CompletionRequest {
            system: system.to_string(),
            user: user.to_string(),
            temperature: self.temperature,
            top_p: self.top_p,
            max_tokens: self.max_tokens,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub system: String,
    pub user: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub seed: u64,
}

impl CompletionRequest {
    /// Content hash identifying the request in completion logs.
    pub fn key(&self) -> String {
        let mut h = Sha256::new();
        for part in [self.system.as_bytes(), self.user.as_bytes()] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part);
        }
        h.update(self.temperature.to_bits().to_le_bytes());
        h.update(self.top_p.to_bits().to_le_bytes());
        h.update(self.max_tokens.to_le_bytes());
        h.update(self.seed.to_le_bytes());
        hex::encode(&h.finalize()[..16])
    }
}

/// Anything that turns a prompt into completion text. Implementations must
/// tolerate concurrent calls; a call is an idempotent request.
pub trait ReasonerBackend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<String>;
}

impl<F> ReasonerBackend for F
where
    F: Fn(&CompletionRequest) -> Result<String> + Send + Sync,
{
    fn complete(&self, request: &CompletionRequest) -> Result<String> {
        self(request)
    }
}

/// Offline backend whose reply is a pure function of the user text and seed.
///
/// Each depth gets the plurality label of the listed candidates (refinement
/// prompts), else the majority label of its retrieved neighbours, else the
/// top base-model class. Ties are broken by a hash of (seed, prompt, depth).
#[derive(Debug, Clone, Copy, Default)]
pub struct MockBackend;

fn tie_break<'a>(mut tied: Vec<&'a str>, seed: u64, user: &str, idx: usize) -> &'a str {
    tied.sort_unstable();
    tied.dedup();
    if tied.len() == 1 {
        return tied[0];
    }
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((idx as u64).to_le_bytes());
    h.update(user.as_bytes());
    let d = h.finalize();
    let v = u64::from_le_bytes(d[..8].try_into().expect("8 bytes"));
    tied[(v % tied.len() as u64) as usize]
}

fn plurality<'a>(votes: &[&'a str], seed: u64, user: &str, idx: usize) -> Option<&'a str> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for v in votes {
        *counts.entry(v).or_default() += 1;
    }
    let best = *counts.values().max()?;
    let tied = counts.into_iter().filter(|&(_, c)| c == best).map(|(l, _)| l).collect();
    Some(tie_break(tied, seed, user, idx))
}

/// `"12: SS 0.612, SH 0.300"` -> (12, ["SS", "SH"]); the label is the first word of each item.
fn depth_row(line: &str) -> Option<(usize, Vec<&str>)> {
    let (idx, rest) = line.split_once(':')?;
    let idx = idx.trim().parse().ok()?;
    let labels = rest
        .split(',')
        .filter_map(|item| item.split_whitespace().next())
        .collect();
    Some((idx, labels))
}

impl MockBackend {
    pub fn respond(user: &str, seed: u64) -> String {
        let sections = split_sections(user);
        let body = |title: &str| sections.iter().find(|(t, _)| *t == title).map(|(_, b)| b.as_slice());

        let Some(window) = body("WINDOW VALUES") else {
            return "I cannot find the window to classify.".into();
        };
        let indices: Vec<usize> = window
            .iter()
            .filter_map(|l| l.split(" | ").next()?.trim().parse().ok())
            .collect();
        if indices.is_empty() {
            return "The window has no depths.".into();
        }

        let rows = |title: &str| -> HashMap<usize, Vec<&str>> {
            body(title)
                .map(|b| b.iter().filter_map(|l| depth_row(l)).collect())
                .unwrap_or_default()
        };
        let base = rows("BASE PROBABILITIES");
        let neighbors = rows("NEIGHBORS");
        // candidate lines: "<persona>: L1, L2, ..." aligned with the window
        let candidates: Vec<Vec<&str>> = body("CANDIDATES")
            .map(|b| {
                b.iter()
                    .filter_map(|l| l.split_once(':'))
                    .map(|(_, rest)| rest.split(',').map(str::trim).filter(|s| !s.is_empty()).collect())
                    .collect()
            })
            .unwrap_or_default();

        let mut lines = Vec::with_capacity(indices.len());
        let mut source = "base model";
        for (i, &idx) in indices.iter().enumerate() {
            let column: Vec<&str> = candidates.iter().filter_map(|c| c.get(i).copied()).collect();
            let label = if !column.is_empty() {
                source = "candidate plurality";
                plurality(&column, seed, user, idx)
            } else if let Some(n) = neighbors.get(&idx).filter(|n| !n.is_empty()) {
                source = "neighbour majority";
                plurality(n, seed, user, idx)
            } else {
                base.get(&idx).and_then(|b| b.first().copied())
            };
            match label {
                Some(l) => lines.push(format!("{idx}: {l}")),
                None => return format!("No evidence for depth {idx}."),
            }
        }
        format!(
            "Offline heuristic ({source}) over {} depths.\n```answer\n{}\n```\n",
            indices.len(),
            lines.join("\n")
        )
    }
}

impl ReasonerBackend for MockBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String> {
        Ok(Self::respond(&request.user, request.seed))
    }
}

/// Returns canned replies in order, repeating the last one.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    replies: Vec<String>,
    calls: Mutex<Vec<CompletionRequest>>,
}

impl ScriptedBackend {
    pub fn new<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> Self {
        Self {
            replies: replies.into_iter().map(Into::into).collect(),
            calls: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> Vec<CompletionRequest> {
        self.calls.lock().expect("poisoned").clone()
    }
}

impl ReasonerBackend for ScriptedBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String> {
        let mut calls = self.calls.lock().expect("poisoned");
        let n = calls.len();
        calls.push(request.clone());
        self.replies
            .get(n)
            .or(self.replies.last())
            .cloned()
            .ok_or_else(|| Error::Backend("scripted backend has no replies".into()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HttpConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub attempts: u32,
    pub base_delay: Duration,
}

pub const ENV_ENDPOINT: &str = "LITHOROUTE_ENDPOINT";
pub const ENV_MODEL: &str = "LITHOROUTE_MODEL";
pub const ENV_API_KEY: &str = "LITHOROUTE_API_KEY";

impl HttpConfig {
    /// Explicit values win; otherwise the environment supplies endpoint and
    /// model. The credential always comes from the environment.
    pub fn resolve(endpoint: Option<&str>, model: Option<&str>, timeout: Duration) -> Result<Self> {
        let pick = |given: Option<&str>, var: &str| {
            given
                .map(str::to_string)
                .or_else(|| std::env::var(var).ok())
                .filter(|v| !v.trim().is_empty())
                .ok_or_else(|| Error::Config(format!("remote backend needs {var} or the matching config key")))
        };
        Ok(Self {
            endpoint: pick(endpoint, ENV_ENDPOINT)?,
            model: pick(model, ENV_MODEL)?,
            api_key: std::env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty()),
            timeout,
            attempts: 3,
            base_delay: Duration::from_millis(500),
        })
    }
}

pub struct HttpBackend {
    config: HttpConfig,
    client: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: Option<String>,
}

enum Failure {
    Transient(String),
    Fatal(String),
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| Error::Backend(format!("cannot build http client: {e}")))?;
        Ok(Self { config, client })
    }

    fn attempt(&self, body: &serde_json::Value) -> std::result::Result<String, Failure> {
        let mut req = self.client.post(&self.config.endpoint).json(body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Failure::Transient(format!("request failed: {e}")))?;
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(Failure::Transient(format!("server returned {status}")));
        }
        let text = resp.text().map_err(|e| Failure::Transient(format!("reading body: {e}")))?;
        if !status.is_success() {
            return Err(Failure::Fatal(format!("server returned {status}: {}", text.trim())));
        }
        let parsed: ChatResponse =
            serde_json::from_str(&text).map_err(|e| Failure::Fatal(format!("unexpected response body: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| Failure::Fatal("response has no message content".into()))
    }
}

impl ReasonerBackend for HttpBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String> {
        let body = serde_json::json!({
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": request.user},
            ],
            "temperature": request.temperature,
            "top_p": request.top_p,
            "max_tokens": request.max_tokens,
            "seed": request.seed,
        });
        let mut last = String::new();
        for attempt in 0..self.config.attempts {
            if attempt > 0 {
                thread::sleep(self.config.base_delay * 2u32.pow(attempt - 1));
            }
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err(Failure::Fatal(msg)) => return Err(Error::Backend(msg)),
                Err(Failure::Transient(msg)) => {
                    log::warn!("backend attempt {} of {} failed: {msg}", attempt + 1, self.config.attempts);
                    last = msg;
                }
            }
        }
        Err(Error::Backend(format!(
            "gave up after {} attempts: {last}",
            self.config.attempts
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampling_validation() {
        assert!(SamplingParams::default().validate().is_ok());
        for bad in [
            SamplingParams { votes: 2, ..Default::default() },
            SamplingParams { votes: 0, ..Default::default() },
            SamplingParams { top_p: 0.0, ..Default::default() },
            SamplingParams { temperature: -0.1, ..Default::default() },
            SamplingParams { max_tokens: 0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    const PROMPT: &str = "## BASE PROBABILITIES\n3: SH 0.6, SS 0.4\n4: SS 0.9\n\
                          ## WINDOW VALUES\nwell W, depth indices 3..4\nindex | depth | GR\n\
                          3 | 1.0 | 2.0\n4 | 1.5 | 2.5\n## NEIGHBORS\n3: LS (0.1), LS (0.2), SS (0.3)\n4: \n";

    #[test]
    fn mock_prefers_neighbours_then_base() {
        let reply = MockBackend::respond(PROMPT, 1);
        assert!(reply.contains("```answer\n3: LS\n4: SS\n```"), "{reply}");
        assert_eq!(reply, MockBackend::respond(PROMPT, 1));
    }

    #[test]
    fn mock_tie_break_depends_only_on_seed() {
        let p = "## WINDOW VALUES\nindex | depth | GR\n0 | 1.0 | 2.0\n## NEIGHBORS\n0: A (0.1), B (0.1)\n";
        let picks: std::collections::BTreeSet<String> =
            (0..32).map(|s| MockBackend::respond(p, s)).collect();
        assert_eq!(picks.len(), 2);
        assert_eq!(MockBackend::respond(p, 5), MockBackend::respond(p, 5));
    }

    #[test]
    fn mock_without_window_is_malformed() {
        assert!(!MockBackend::respond("hello", 0).contains("```"));
    }

    #[test]
    fn scripted_repeats_last() {
        let b = ScriptedBackend::new(["a", "b"]);
        let r = SamplingParams::default().request("s", "u", 0);
        let got: Vec<String> = (0..3).map(|_| b.complete(&r).unwrap()).collect();
        assert_eq!(got, vec!["a", "b", "b"]);
        assert_eq!(b.calls().len(), 3);
    }

    #[test]
    fn request_key_changes_with_seed() {
        let p = SamplingParams::default();
        assert_ne!(p.request("s", "u", 0).key(), p.request("s", "u", 1).key());
        assert_eq!(p.request("s", "u", 0).key(), p.request("s", "u", 0).key());
    }
}
