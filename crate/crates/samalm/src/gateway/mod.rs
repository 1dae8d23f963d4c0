//! Uniform completion interface over three interchangeable backends:
//! a live OpenAI-compatible HTTP endpoint, a deterministic scripted
//! oracle, and record/replay from a transcript file.
//!
//! The gateway is side-effect free apart from transcript IO and is safe
//! to call from any number of threads; responses are matched to requests
//! by call site (or by index in [`Gateway::complete_batch`]), never by
//! arrival order.

pub mod scripted;

use crate::vec2::Vec2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::{Duration, Instant};
use thiserror::Error;

/// Which pipeline role a prompt serves; part of every transcript key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "role", content = "robot_id")]
pub enum PromptTag {
    Actor(usize),
    LocalCritic(usize),
    GlobalCritic,
}

impl PromptTag {
    pub fn label(&self) -> String {
        match self {
            PromptTag::Actor(id) => format!("actor-{id}"),
            PromptTag::LocalCritic(id) => format!("local-critic-{id}"),
            PromptTag::GlobalCritic => "global-critic".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub system: String,
    pub user: String,
    pub tag: PromptTag,
    /// Re-query attempt index: byte-identical prompts with equal nonce are
    /// cache-equal for replay purposes.
    pub nonce: u32,
}

impl Prompt {
    /// Stable hash of the prompt bytes (system and user sections).
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.system.as_bytes());
        hasher.update([0u8]);
        hasher.update(self.user.as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    fn replay_key(&self) -> String {
        format!("{}|{}|{}", self.tag.label(), self.nonce, self.hash())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Http,
    Scripted,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub backend: BackendKind,
    pub latency_ms: u64,
    pub token_estimate: usize,
}

/// Behavior of the scripted oracle, per robot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptedProfile {
    /// Penalty-aware candidate search.
    Normal,
    /// Unsafe proposal until critic feedback appears in the prompt.
    AdversarialFirst,
    /// Unsafe proposal on every attempt, feedback or not.
    Incorrigible,
    /// Unparseable output (exercises the parse-failure path).
    Garbage,
    /// Unsafe proposal with probability `fault_rate` per prompt.
    Faulty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScriptedConfig {
    pub default_profile: ScriptedProfile,
    /// Per-robot overrides keyed by robot id.
    pub per_robot: BTreeMap<usize, ScriptedProfile>,
    pub fault_rate: f64,
    pub fault_seed: u64,
    /// Control interval assumed by the oracle's one-step predictions.
    pub dt: f64,
    /// Crowding lookahead horizon in steps.
    pub lookahead_steps: usize,
}

impl Default for ScriptedConfig {
    fn default() -> Self {
        ScriptedConfig {
            default_profile: ScriptedProfile::Normal,
            per_robot: BTreeMap::new(),
            fault_rate: 0.0,
            fault_seed: 0,
            dt: 0.25,
            lookahead_steps: 2,
        }
    }
}

impl ScriptedConfig {
    pub fn profile_for(&self, robot_id: usize) -> ScriptedProfile {
        self.per_robot.get(&robot_id).copied().unwrap_or(self.default_profile)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub mode: BackendKind,
    pub endpoint_url: Option<String>,
    /// Never serialized; supply via SAMALM_API_KEY.
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub model_name: String,
    /// Sampling temperature for actor prompts; critics always run at 0.
    pub temperature: f64,
    pub timeout_s: f64,
    pub max_retries: u32,
    pub retry_backoff_ms: u64,
    pub transcript_path: Option<PathBuf>,
    pub scripted: ScriptedConfig,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            mode: BackendKind::Scripted,
            endpoint_url: None,
            api_key: None,
            model_name: "scripted-oracle".to_string(),
            temperature: 0.2,
            timeout_s: 30.0,
            max_retries: 2,
            retry_backoff_ms: 250,
            transcript_path: None,
            scripted: ScriptedConfig::default(),
        }
    }
}

impl BackendConfig {
    /// Live backend configured from SAMALM_API_URL / SAMALM_API_KEY /
    /// SAMALM_MODEL.
    pub fn http_from_env() -> Result<BackendConfig, GatewayError> {
        let url = std::env::var("SAMALM_API_URL")
            .map_err(|_| GatewayError::InvalidConfig { detail: "SAMALM_API_URL is not set".into() })?;
        let model = std::env::var("SAMALM_MODEL").unwrap_or_else(|_| "gpt-4o".to_string());
        Ok(BackendConfig {
            mode: BackendKind::Http,
            endpoint_url: Some(url),
            api_key: std::env::var("SAMALM_API_KEY").ok(),
            model_name: model,
            ..BackendConfig::default()
        })
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("request timed out after {timeout_s}s: {url}")]
    HttpTimeout { url: String, timeout_s: f64 },
    #[error("endpoint returned HTTP {code}: {body_snippet}")]
    HttpStatus { code: u16, body_snippet: String },
    #[error("rate limited by endpoint (HTTP 429)")]
    RateLimited,
    #[error("transport error talking to {url}: {detail}")]
    Transport { url: String, detail: String },
    #[error("no recorded completion for replay key {key}")]
    ReplayMiss { key: String },
    #[error("malformed completion payload: {detail}")]
    MalformedResponse { detail: String },
    #[error("invalid backend config: {detail}")]
    InvalidConfig { detail: String },
    #[error("transcript IO failed: {0}")]
    Io(#[from] std::io::Error),
}

impl GatewayError {
    fn is_transient(&self) -> bool {
        matches!(
            self,
            GatewayError::HttpTimeout { .. }
                | GatewayError::RateLimited
                | GatewayError::Transport { .. }
                | GatewayError::HttpStatus { code: 500..=599, .. }
        )
    }
}

/// One transcript line; replay reads the same records back.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub tag: PromptTag,
    pub nonce: u32,
    pub prompt_hash: String,
    pub prompt: PromptBody,
    pub completion: String,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptBody {
    pub system: String,
    pub user: String,
}

pub struct Gateway {
    cfg: BackendConfig,
    http: Option<reqwest::blocking::Client>,
    replay: Option<HashMap<String, String>>,
    transcript: Option<Mutex<BufWriter<File>>>,
}

impl Gateway {
    pub fn new(cfg: BackendConfig) -> Result<Self, GatewayError> {
        let http = match cfg.mode {
            BackendKind::Http => {
                let url = cfg.endpoint_url.as_deref().ok_or_else(|| GatewayError::InvalidConfig {
                    detail: "http mode requires endpoint_url".into(),
                })?;
                if url.is_empty() {
                    return Err(GatewayError::InvalidConfig { detail: "endpoint_url is empty".into() });
                }
                let client = reqwest::blocking::Client::builder()
                    .timeout(Duration::from_secs_f64(cfg.timeout_s))
                    .build()
                    .map_err(|e| GatewayError::InvalidConfig { detail: e.to_string() })?;
                Some(client)
            }
            _ => None,
        };

        let replay = match cfg.mode {
            BackendKind::Replay => {
                let path = cfg.transcript_path.as_ref().ok_or_else(|| GatewayError::InvalidConfig {
                    detail: "replay mode requires transcript_path".into(),
                })?;
                let file = File::open(path)?;
                let mut map = HashMap::new();
                for line in BufReader::new(file).lines() {
                    let line = line?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    let entry: TranscriptEntry =
                        serde_json::from_str(&line).map_err(|e| GatewayError::MalformedResponse {
                            detail: format!("bad transcript line: {e}"),
                        })?;
                    let key = format!("{}|{}|{}", entry.tag.label(), entry.nonce, entry.prompt_hash);
                    map.insert(key, entry.completion);
                }
                Some(map)
            }
            _ => None,
        };

        // In replay mode the transcript file is the input, not a sink.
        let transcript = match (&cfg.mode, &cfg.transcript_path) {
            (BackendKind::Replay, _) | (_, None) => None,
            (_, Some(path)) => {
                if let Some(dir) = path.parent() {
                    std::fs::create_dir_all(dir)?;
                }
                let file = OpenOptions::new().create(true).append(true).open(path)?;
                Some(Mutex::new(BufWriter::new(file)))
            }
        };

        Ok(Gateway { cfg, http, replay, transcript })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.cfg
    }

    /// Resolve one prompt to a completion through the configured backend.
    pub fn complete(&self, prompt: &Prompt) -> Result<Completion, GatewayError> {
        let completion = match self.cfg.mode {
            BackendKind::Scripted => self.complete_scripted(prompt),
            BackendKind::Replay => self.complete_replay(prompt),
            BackendKind::Http => self.complete_http(prompt),
        }?;
        if completion.text.is_empty() {
            return Err(GatewayError::MalformedResponse { detail: "empty completion text".into() });
        }
        self.record(prompt, &completion)?;
        Ok(completion)
    }

    /// Resolve many prompts concurrently; results come back in input order.
    pub fn complete_batch(&self, prompts: &[Prompt]) -> Vec<Result<Completion, GatewayError>> {
        std::thread::scope(|scope| {
            let handles: Vec<_> = prompts
                .iter()
                .map(|p| scope.spawn(move || self.complete(p)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("completion thread panicked")).collect()
        })
    }

    fn complete_scripted(&self, prompt: &Prompt) -> Result<Completion, GatewayError> {
        let text = scripted::scripted_completion(prompt, &self.cfg.scripted)?;
        Ok(Completion {
            token_estimate: estimate_tokens(prompt, &text),
            text,
            backend: BackendKind::Scripted,
            latency_ms: 0,
        })
    }

    fn complete_replay(&self, prompt: &Prompt) -> Result<Completion, GatewayError> {
        let key = prompt.replay_key();
        let map = self.replay.as_ref().expect("replay map built in new()");
        let text = map.get(&key).ok_or(GatewayError::ReplayMiss { key })?.clone();
        Ok(Completion {
            token_estimate: estimate_tokens(prompt, &text),
            text,
            backend: BackendKind::Replay,
            latency_ms: 0,
        })
    }

    fn complete_http(&self, prompt: &Prompt) -> Result<Completion, GatewayError> {
        let mut attempt = 0;
        loop {
            let started = Instant::now();
            match self.http_once(prompt) {
                Ok(text) => {
                    return Ok(Completion {
                        token_estimate: estimate_tokens(prompt, &text),
                        text,
                        backend: BackendKind::Http,
                        latency_ms: started.elapsed().as_millis() as u64,
                    });
                }
                Err(err) if err.is_transient() && attempt < self.cfg.max_retries => {
                    let backoff = self.cfg.retry_backoff_ms.saturating_mul(1 << attempt.min(6));
                    std::thread::sleep(Duration::from_millis(backoff));
                    attempt += 1;
                }
                Err(err) => return Err(err),
            }
        }
    }

    fn http_once(&self, prompt: &Prompt) -> Result<String, GatewayError> {
        let url = self.cfg.endpoint_url.as_deref().expect("validated in new()");
        let client = self.http.as_ref().expect("client built in new()");
        let temperature = match prompt.tag {
            PromptTag::Actor(_) => self.cfg.temperature,
            _ => 0.0,
        };
        let body = serde_json::json!({
            "model": self.cfg.model_name,
            "messages": [
                {"role": "system", "content": prompt.system},
                {"role": "user", "content": prompt.user},
            ],
            "temperature": temperature,
        });
        let mut request = client.post(url).json(&body);
        if let Some(key) = &self.cfg.api_key {
            request = request.bearer_auth(key);
        }
        let response = request.send().map_err(|e| {
            if e.is_timeout() {
                GatewayError::HttpTimeout { url: url.to_string(), timeout_s: self.cfg.timeout_s }
            } else {
                GatewayError::Transport { url: url.to_string(), detail: e.to_string() }
            }
        })?;
        let status = response.status();
        let text = response.text().map_err(|e| GatewayError::Transport {
            url: url.to_string(),
            detail: e.to_string(),
        })?;
        if status.as_u16() == 429 {
            return Err(GatewayError::RateLimited);
        }
        if !status.is_success() {
            let snippet: String = text.chars().take(200).collect();
            return Err(GatewayError::HttpStatus { code: status.as_u16(), body_snippet: snippet });
        }
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| GatewayError::MalformedResponse { detail: format!("invalid JSON: {e}") })?;
        let content = value["choices"][0]["message"]["content"].as_str().ok_or_else(|| {
            GatewayError::MalformedResponse { detail: "missing choices[0].message.content".into() }
        })?;
        if content.is_empty() {
            return Err(GatewayError::MalformedResponse { detail: "empty completion content".into() });
        }
        Ok(content.to_string())
    }

    fn record(&self, prompt: &Prompt, completion: &Completion) -> Result<(), GatewayError> {
        let Some(writer) = &self.transcript else {
            return Ok(());
        };
        let entry = TranscriptEntry {
            tag: prompt.tag,
            nonce: prompt.nonce,
            prompt_hash: prompt.hash(),
            prompt: PromptBody { system: prompt.system.clone(), user: prompt.user.clone() },
            completion: completion.text.clone(),
            latency_ms: completion.latency_ms,
        };
        let line = serde_json::to_string(&entry)
            .map_err(|e| GatewayError::MalformedResponse { detail: e.to_string() })?;
        let mut guard = writer.lock().expect("transcript lock poisoned");
        writeln!(guard, "{line}")?;
        guard.flush()?;
        Ok(())
    }
}

fn estimate_tokens(prompt: &Prompt, text: &str) -> usize {
    (prompt.system.len() + prompt.user.len() + text.len()) / 4
}

/// Parsed action payload emitted by actors (single robot).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorResponse {
    pub reasoning: Vec<String>,
    pub action: [f64; 2],
}

impl ActorResponse {
    pub fn action_vec(&self) -> Vec2 {
        Vec2::new(self.action[0], self.action[1])
    }
}

#[cfg(test)]
mod tests;
