//! Collects stochastic predictions from an OpenAI-compatible chat endpoint.
//!
//! Texts are persisted as JSONL sample sets so that sampling and voting can
//! run on different machines.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_jsonl, write_jsonl, Reject};
use crate::types::RcConfig;

pub const INSTRUCTION_PLACEHOLDER: &str = "{instruction}";
pub const API_KEY_ENV: &str = "GUIRC_API_KEY";

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    /// Base URL (`http://host:port`) or a full `.../chat/completions` URL.
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub max_tokens: u32,
    pub timeout: Duration,
    pub max_retries: u32,
    pub backoff_base: Duration,
    /// Upper bound on in-flight requests.
    pub concurrency: usize,
    /// Ask for all K completions in one request via `n`.
    pub use_n: bool,
}

impl SamplerConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            max_tokens: 64,
            timeout: Duration::from_secs(60),
            max_retries: 3,
            backoff_base: Duration::from_millis(250),
            concurrency: 4,
            use_n: true,
        }
    }

    pub fn url(&self) -> String {
        let base = self.endpoint.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else if base.ends_with("/v1") {
            format!("{base}/chat/completions")
        } else {
            format!("{base}/v1/chat/completions")
        }
    }
}

/// Screenshot encoded as a `data:` URI.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImagePayload {
    data_uri: String,
}

impl ImagePayload {
    pub fn from_bytes(bytes: &[u8], mime: &str) -> Self {
        let b64 = base64::engine::general_purpose::STANDARD.encode(bytes);
        Self {
            data_uri: format!("data:{mime};base64,{b64}"),
        }
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .unwrap_or("")
            .to_ascii_lowercase();
        let mime = match ext.as_str() {
            "jpg" | "jpeg" => "image/jpeg",
            "webp" => "image/webp",
            "gif" => "image/gif",
            _ => "image/png",
        };
        Ok(Self::from_bytes(&bytes, mime))
    }

    pub fn data_uri(&self) -> &str {
        &self.data_uri
    }
}

pub fn render_prompt(template: &str, instruction: &str) -> Result<String> {
    if !template.contains(INSTRUCTION_PLACEHOLDER) {
        return Err(Error::InvalidConfig(format!(
            "prompt template lacks the {INSTRUCTION_PLACEHOLDER} placeholder"
        )));
    }
    Ok(template.replace(INSTRUCTION_PLACEHOLDER, instruction))
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [Message<'a>; 1],
    temperature: f64,
    top_p: f64,
    n: usize,
    max_tokens: u32,
}

#[derive(Serialize)]
struct Message<'a> {
    role: &'static str,
    content: [ContentPart<'a>; 2],
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum ContentPart<'a> {
    ImageUrl { image_url: ImageUrl<'a> },
    Text { text: &'a str },
}

#[derive(Serialize)]
struct ImageUrl<'a> {
    url: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    #[serde(default)]
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

/// Decoding parameters for one request.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decoding {
    pub temperature: f64,
    pub top_p: f64,
    pub n: usize,
}

impl Decoding {
    pub const GREEDY: Decoding = Decoding {
        temperature: 0.0,
        top_p: 1.0,
        n: 1,
    };
}

/// Serialized request body. Field order is fixed, so equal inputs give equal bytes.
pub fn build_request_body(
    cfg: &SamplerConfig,
    image: &ImagePayload,
    prompt: &str,
    decoding: Decoding,
) -> Vec<u8> {
    let req = ChatRequest {
        model: &cfg.model,
        messages: [Message {
            role: "user",
            content: [
                ContentPart::ImageUrl {
                    image_url: ImageUrl {
                        url: &image.data_uri,
                    },
                },
                ContentPart::Text { text: prompt },
            ],
        }],
        temperature: decoding.temperature,
        top_p: decoding.top_p,
        n: decoding.n,
        max_tokens: cfg.max_tokens,
    };
    serde_json::to_vec(&req).expect("request body is always serializable")
}

/// Marks requested completions that never arrived.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleGap {
    pub missing: usize,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleOutcome {
    pub texts: Vec<String>,
    pub gaps: Vec<SampleGap>,
}

impl SampleOutcome {
    pub fn is_complete(&self) -> bool {
        self.gaps.is_empty()
    }
}

enum Attempt {
    Retry(String),
    Fatal(String),
}

pub struct Sampler {
    cfg: SamplerConfig,
    http: reqwest::blocking::Client,
}

impl Sampler {
    pub fn new(cfg: SamplerConfig) -> Result<Self> {
        if cfg.concurrency == 0 {
            return Err(Error::InvalidConfig("concurrency must be >= 1".into()));
        }
        let http = reqwest::blocking::Client::builder()
            .timeout(cfg.timeout)
            .build()
            .map_err(|e| Error::Sampling(e.to_string()))?;
        Ok(Self { cfg, http })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.cfg
    }

    fn post_once(&self, body: &[u8]) -> std::result::Result<Vec<String>, Attempt> {
        let mut req = self
            .http
            .post(self.cfg.url())
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.to_vec());
        if let Some(key) = &self.cfg.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| Attempt::Retry(e.to_string()))?;
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(Attempt::Retry(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(Attempt::Fatal(format!("HTTP {status}: {text}")));
        }
        let parsed: ChatResponse =
            serde_json::from_str(&text).map_err(|e| Attempt::Retry(format!("bad response: {e}")))?;
        Ok(parsed
            .choices
            .into_iter()
            .map(|c| c.message.content.unwrap_or_default())
            .collect())
    }

    /// One request with exponential backoff between failed attempts.
    pub fn post_with_retries(&self, body: &[u8]) -> Result<Vec<String>> {
        let mut last = String::new();
        for attempt in 0..=self.cfg.max_retries {
            if attempt > 0 {
                thread::sleep(self.cfg.backoff_base * 2u32.saturating_pow(attempt - 1));
            }
            match self.post_once(body) {
                Ok(texts) => return Ok(texts),
                Err(Attempt::Fatal(e)) => return Err(Error::Sampling(e)),
                Err(Attempt::Retry(e)) => {
                    tracing::debug!(attempt, error = %e, "request failed");
                    last = e;
                }
            }
        }
        Err(Error::Sampling(format!(
            "gave up after {} attempts: {last}",
            self.cfg.max_retries + 1
        )))
    }

    /// Gathers up to `config.k_samples` texts at the configured temperature and top-p.
    pub fn sample_k(&self, image: &ImagePayload, prompt: &str, config: &RcConfig) -> SampleOutcome {
        let k = config.k_samples;
        if self.cfg.use_n {
            self.sample_with_n(image, prompt, config, k)
        } else {
            self.sample_fanout(image, prompt, config, k)
        }
    }

    fn sample_with_n(&self, image: &ImagePayload, prompt: &str, config: &RcConfig, k: usize) -> SampleOutcome {
        let mut out = SampleOutcome::default();
        // A server may cap `n`; keep asking for the remainder.
        for _ in 0..k {
            let remaining = k - out.texts.len();
            if remaining == 0 {
                break;
            }
            let decoding = Decoding {
                temperature: config.temperature,
                top_p: config.top_p,
                n: remaining,
            };
            let body = build_request_body(&self.cfg, image, prompt, decoding);
            match self.post_with_retries(&body) {
                Ok(texts) if texts.is_empty() => {
                    out.gaps.push(SampleGap {
                        missing: remaining,
                        error: "server returned no choices".into(),
                    });
                    return out;
                }
                Ok(texts) => out.texts.extend(texts.into_iter().take(remaining)),
                Err(e) => {
                    out.gaps.push(SampleGap {
                        missing: remaining,
                        error: e.to_string(),
                    });
                    return out;
                }
            }
        }
        out
    }

    fn sample_fanout(&self, image: &ImagePayload, prompt: &str, config: &RcConfig, k: usize) -> SampleOutcome {
        let decoding = Decoding {
            temperature: config.temperature,
            top_p: config.top_p,
            n: 1,
        };
        let body = build_request_body(&self.cfg, image, prompt, decoding);
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<Result<String>>>> = Mutex::new((0..k).map(|_| None).collect());
        let workers = self.cfg.concurrency.min(k.max(1));
        thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= k {
                        break;
                    }
                    let res = self.post_with_retries(&body).and_then(|texts| {
                        texts
                            .into_iter()
                            .next()
                            .ok_or_else(|| Error::Sampling("server returned no choices".into()))
                    });
                    slots.lock().expect("slot lock")[i] = Some(res);
                });
            }
        });
        let mut out = SampleOutcome::default();
        for slot in slots.into_inner().expect("slot lock") {
            match slot {
                Some(Ok(t)) => out.texts.push(t),
                Some(Err(e)) => out.gaps.push(SampleGap {
                    missing: 1,
                    error: e.to_string(),
                }),
                None => unreachable!("every index below k is claimed"),
            }
        }
        out
    }

    /// Single temperature-0 completion, the comparison arm for voting.
    pub fn greedy_baseline(&self, image: &ImagePayload, prompt: &str) -> Result<String> {
        let body = build_request_body(&self.cfg, image, prompt, Decoding::GREEDY);
        self.post_with_retries(&body)?
            .into_iter()
            .next()
            .ok_or_else(|| Error::Sampling("server returned no choices".into()))
    }
}

/// Decoding settings recorded alongside persisted texts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub model: String,
    pub k: usize,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

/// All texts gathered for one (image, instruction) query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub image_id: String,
    pub instruction: String,
    pub width: u32,
    pub height: u32,
    pub texts: Vec<String>,
    pub config: ConfigSnapshot,
    pub started_at_ms: u64,
    pub finished_at_ms: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gaps: Vec<SampleGap>,
}

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

pub fn persist_samples(path: &Path, sets: &[SampleSet]) -> Result<()> {
    write_jsonl(path, sets)
}

pub fn load_samples(path: &Path) -> Result<(Vec<SampleSet>, Vec<Reject>)> {
    read_jsonl(path)
}
