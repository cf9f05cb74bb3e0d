//! Text generation behind one interface: a deterministic stub, a replay
//! backend keyed by request hash, and a remote multimodal endpoint.

mod backends;

pub use backends::{RecordingBackend, RemoteBackend, RemoteConfig, ReplayBackend, ReplayFixture, StubBackend};
pub use crate::http::RetryPolicy;

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::packer::PackedContext;
use crate::seeding::sha256_hex;

pub const DEFAULT_MAX_TOKENS: u32 = 256;
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("no replay fixture for request {0}")]
    FixtureMiss(String),
    #[error("backend unavailable: {0}")]
    Retryable(String),
    #[error("backend error: {0}")]
    Backend(String),
    #[error("{path}: {reason}")]
    Fixture { path: String, reason: String },
}

impl GenerationError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, GenerationError::Retryable(_))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    /// The label is given and the model writes the finding.
    #[default]
    FindingOnly,
    /// The model writes both label and finding.
    LabelAndFinding,
    /// `prompt_text` is sent verbatim (text-only selection prompts).
    Raw,
}

/// One encoded patch image on the wire.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchImage {
    pub slide_id: String,
    pub row: usize,
    pub col: usize,
    pub png_base64: String,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ImagePayload {
    Packed(Arc<PackedContext>),
    Patches(Vec<PatchImage>),
    None,
}

impl ImagePayload {
    pub fn n_slides(&self) -> usize {
        match self {
            ImagePayload::Packed(c) => c.n_slides(),
            ImagePayload::Patches(p) => p.iter().map(|i| i.slide_id.as_str()).collect::<BTreeSet<_>>().len(),
            ImagePayload::None => 0,
        }
    }

    pub fn n_patches(&self) -> usize {
        match self {
            ImagePayload::Packed(c) => c.n_patches(),
            ImagePayload::Patches(p) => p.len(),
            ImagePayload::None => 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub max_tokens: u32,
    pub temperature: f64,
}

impl Default for DecodeParams {
    fn default() -> Self {
        DecodeParams { max_tokens: DEFAULT_MAX_TOKENS, temperature: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerationRequest {
    /// The part label for `FindingOnly`, the full prompt for `Raw`.
    pub prompt_text: String,
    pub mode: PromptMode,
    pub payload: ImagePayload,
    pub decode: DecodeParams,
}

#[derive(Serialize)]
pub(crate) struct WireRequest<'a> {
    pub prompt: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub images: Option<&'a [PatchImage]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<Vec<&'a [f64]>>,
    pub max_tokens: u32,
    pub temperature: f64,
}

impl GenerationRequest {
    pub fn finding(label: &str, payload: ImagePayload) -> Self {
        Self { prompt_text: label.to_string(), mode: PromptMode::FindingOnly, payload, decode: DecodeParams::default() }
    }

    pub fn raw(prompt: impl Into<String>) -> Self {
        Self { prompt_text: prompt.into(), mode: PromptMode::Raw, payload: ImagePayload::None, decode: DecodeParams::default() }
    }

    pub fn validate(&self) -> Result<(), GenerationError> {
        match self.mode {
            PromptMode::FindingOnly if self.prompt_text.trim().is_empty() => {
                Err(GenerationError::InvalidRequest("finding-only mode needs a label".into()))
            }
            PromptMode::Raw if self.prompt_text.trim().is_empty() => {
                Err(GenerationError::InvalidRequest("empty prompt".into()))
            }
            _ if !self.decode.temperature.is_finite() || self.decode.temperature < 0.0 => {
                Err(GenerationError::InvalidRequest("temperature must be finite and non-negative".into()))
            }
            _ => Ok(()),
        }
    }

    /// The prompt text actually sent ahead of the image tokens.
    pub fn rendered_prompt(&self) -> Result<String, GenerationError> {
        match self.mode {
            PromptMode::FindingOnly => build_finding_prompt(&self.prompt_text),
            PromptMode::LabelAndFinding => Ok("LABEL:".to_string()),
            PromptMode::Raw => Ok(self.prompt_text.clone()),
        }
    }

    pub(crate) fn wire(&self) -> Result<WireRequest<'_>, GenerationError> {
        self.validate()?;
        let (images, embeddings) = match &self.payload {
            ImagePayload::Packed(c) => (None, Some(c.tokens.iter().map(|t| t.vector.as_slice()).collect())),
            ImagePayload::Patches(p) => (Some(p.as_slice()), None),
            ImagePayload::None => (None, None),
        };
        Ok(WireRequest {
            prompt: self.rendered_prompt()?,
            images,
            embeddings,
            max_tokens: self.decode.max_tokens,
            temperature: self.decode.temperature,
        })
    }

    /// SHA-256 of the wire JSON body; the replay fixture key.
    pub fn sha256(&self) -> Result<String, GenerationError> {
        let body = serde_json::to_vec(&self.wire()?).expect("wire request serializes");
        Ok(sha256_hex(&body))
    }
}

/// `"LABEL: <label>\nFINDING:"` with the label trimmed.
pub fn build_finding_prompt(label: &str) -> Result<String, GenerationError> {
    let label = label.trim();
    if label.is_empty() {
        return Err(GenerationError::InvalidRequest("empty label".into()));
    }
    Ok(format!("LABEL: {label}\nFINDING:"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratedText {
    pub text: String,
    pub backend_id: String,
    pub latency_ms: u64,
    /// Set when the backend returned only whitespace.
    pub flagged_empty: bool,
}

impl GeneratedText {
    pub fn new(text: String, backend_id: &str, latency_ms: u64) -> Self {
        let flagged_empty = text.trim().is_empty();
        GeneratedText { text, backend_id: backend_id.to_string(), latency_ms, flagged_empty }
    }
}

pub trait GenerationBackend: Send + Sync {
    fn id(&self) -> &str;
    fn generate(&self, req: &GenerationRequest) -> Result<GeneratedText, GenerationError>;
}

impl<T: GenerationBackend + ?Sized> GenerationBackend for Box<T> {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn generate(&self, req: &GenerationRequest) -> Result<GeneratedText, GenerationError> {
        (**self).generate(req)
    }
}

/// Issues `requests` with at most `max_in_flight` outstanding; results keep
/// input order.
pub fn generate_batch(
    backend: &dyn GenerationBackend,
    requests: &[GenerationRequest],
    max_in_flight: usize,
) -> Vec<Result<GeneratedText, GenerationError>> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<GeneratedText, GenerationError>>>> =
        Mutex::new((0..requests.len()).map(|_| None).collect());
    let workers = max_in_flight.max(1).min(requests.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= requests.len() {
                    break;
                }
                let out = backend.generate(&requests[i]);
                results.lock().expect("results lock")[i] = Some(out);
            });
        }
    });
    results.into_inner().expect("results lock").into_iter().map(|r| r.expect("every request ran")).collect()
}
