use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{GeneratedText, GenerationBackend, GenerationError, GenerationRequest, PromptMode};
use crate::http::{self, CallError, RetryPolicy};

fn elapsed_ms(start: Instant) -> u64 {
    start.elapsed().as_millis() as u64
}

/// Answers `"<n_slides> slide(s); <n_patches> patch(es); label=<label>"`.
#[derive(Clone, Copy, Debug, Default)]
pub struct StubBackend;

impl GenerationBackend for StubBackend {
    fn id(&self) -> &str {
        "stub"
    }

    fn generate(&self, req: &GenerationRequest) -> Result<GeneratedText, GenerationError> {
        req.validate()?;
        let label = match req.mode {
            PromptMode::Raw => "",
            _ => req.prompt_text.trim(),
        };
        let text = format!("{} slide(s); {} patch(es); label={label}", req.payload.n_slides(), req.payload.n_patches());
        Ok(GeneratedText::new(text, self.id(), 0))
    }
}

/// One replay fixture line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayFixture {
    pub request_sha256: String,
    pub text: String,
}

#[derive(Clone, Debug, Default)]
pub struct ReplayBackend {
    fixtures: BTreeMap<String, String>,
}

impl ReplayBackend {
    pub fn new(fixtures: impl IntoIterator<Item = ReplayFixture>) -> Self {
        Self { fixtures: fixtures.into_iter().map(|f| (f.request_sha256, f.text)).collect() }
    }

    pub fn load(path: &Path) -> Result<Self, GenerationError> {
        let err = |reason: String| GenerationError::Fixture { path: path.display().to_string(), reason };
        let file = std::fs::File::open(path).map_err(|e| err(e.to_string()))?;
        let mut fixtures = Vec::new();
        for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| err(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            fixtures.push(serde_json::from_str(&line).map_err(|e| err(format!("line {}: {e}", n + 1)))?);
        }
        Ok(Self::new(fixtures))
    }

    pub fn len(&self) -> usize {
        self.fixtures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixtures.is_empty()
    }
}

impl GenerationBackend for ReplayBackend {
    fn id(&self) -> &str {
        "replay"
    }

    fn generate(&self, req: &GenerationRequest) -> Result<GeneratedText, GenerationError> {
        let hash = req.sha256()?;
        match self.fixtures.get(&hash) {
            Some(text) => Ok(GeneratedText::new(text.clone(), self.id(), 0)),
            None => Err(GenerationError::FixtureMiss(hash)),
        }
    }
}

/// Wraps a backend and keeps every successful response as a replay fixture.
pub struct RecordingBackend<B> {
    inner: B,
    recorded: Mutex<BTreeMap<String, String>>,
}

impl<B: GenerationBackend> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self { inner, recorded: Mutex::new(BTreeMap::new()) }
    }

    pub fn fixtures(&self) -> Vec<ReplayFixture> {
        self.recorded
            .lock()
            .expect("recording lock")
            .iter()
            .map(|(h, t)| ReplayFixture { request_sha256: h.clone(), text: t.clone() })
            .collect()
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), GenerationError> {
        let err = |e: std::io::Error| GenerationError::Fixture { path: path.display().to_string(), reason: e.to_string() };
        let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(err)?);
        for f in self.fixtures() {
            writeln!(out, "{}", serde_json::to_string(&f).expect("fixture serializes")).map_err(err)?;
        }
        out.flush().map_err(err)
    }
}

impl<B: GenerationBackend> GenerationBackend for RecordingBackend<B> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn generate(&self, req: &GenerationRequest) -> Result<GeneratedText, GenerationError> {
        let out = self.inner.generate(req)?;
        self.recorded.lock().expect("recording lock").insert(req.sha256()?, out.text.clone());
        Ok(out)
    }
}

#[derive(Clone, Debug)]
pub struct RemoteConfig {
    pub base_url: String,
    pub timeout: Duration,
    pub retry: RetryPolicy,
    pub bearer_token: Option<String>,
}

impl RemoteConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        RemoteConfig {
            base_url: base_url.into(),
            timeout: Duration::from_secs(120),
            retry: RetryPolicy::default(),
            bearer_token: None,
        }
    }
}

#[derive(Deserialize)]
struct WireResponse {
    text: String,
}

/// `POST <base>/v1/generate`; the response text is returned verbatim.
#[derive(Debug)]
pub struct RemoteBackend {
    url: String,
    agent: ureq::Agent,
    config: RemoteConfig,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Self {
        Self {
            url: format!("{}/v1/generate", config.base_url.trim_end_matches('/')),
            agent: http::agent(config.timeout),
            config,
        }
    }
}

impl GenerationBackend for RemoteBackend {
    fn id(&self) -> &str {
        "remote"
    }

    fn generate(&self, req: &GenerationRequest) -> Result<GeneratedText, GenerationError> {
        let body = req.wire()?;
        let start = Instant::now();
        let resp: WireResponse = http::with_retry(&self.config.retry, || {
            http::post_json(&self.agent, &self.url, &body, self.config.bearer_token.as_deref())
        })
        .map_err(|e| match e {
            CallError::Retryable(m) => GenerationError::Retryable(m),
            CallError::Fatal(m) => GenerationError::Backend(m),
        })?;
        Ok(GeneratedText::new(resp.text, self.id(), elapsed_ms(start)))
    }
}
