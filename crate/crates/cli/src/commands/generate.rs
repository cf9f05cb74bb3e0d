use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use base64::Engine;
use clap::{Args, ValueEnum};
use serde::Serialize;
use slidereport_core::dataset::{split_generated_text, Split};
use slidereport_core::generation::{
    generate_batch, GeneratedText, GenerationBackend, GenerationRequest, ImagePayload, PatchImage, PromptMode,
    RecordingBackend, RemoteBackend, RemoteConfig, ReplayBackend, RetryPolicy, StubBackend, DEFAULT_MAX_IN_FLIGHT,
};
use slidereport_core::packer::{
    check_budget, pack_part, DirLoader, Encoder, PackedContext, RemoteEncoder, ToyEncoder, DEFAULT_EMBED_DIM,
    DEFAULT_TOKEN_LIMIT,
};
use slidereport_core::seeding::derive_seed;
use slidereport_core::stats::TextSource;
use slidereport_core::tiler::{PatchSequence, PATCH_SIZE};

use crate::config::{pick, Config};
use crate::error::{CliError, Result};
use crate::jsonl;
use crate::pipeline::{filter_split, load_split, read_bundles, read_indices, GenerationRecord, PartBundle};

/// Environment variable with the bearer token for the remote generation endpoint.
pub const GENERATION_TOKEN_ENV: &str = "GENERATION_TOKEN";

#[derive(Args, Clone)]
pub struct EncoderArgs {
    /// Tiler output root.
    #[arg(long)]
    pub patches: PathBuf,
    /// Token budget per packed context.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Embedding dimension.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Patch edge length expected by the encoder.
    #[arg(long)]
    pub patch_size: Option<usize>,
    /// Base URL of a remote encoder (`POST /encode`); the built-in toy encoder otherwise.
    #[arg(long)]
    pub encoder_url: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Encodes patches and builds the image payload of a request.
pub struct ContextBuilder {
    encoder: Box<dyn Encoder>,
    loader: DirLoader,
    limit: usize,
}

impl ContextBuilder {
    pub fn new(args: &EncoderArgs, config: &Config, seed: u64) -> Result<Self> {
        let dim = pick(args.dim, config.embed_dim, DEFAULT_EMBED_DIM);
        let limit = pick(args.limit, config.token_limit, DEFAULT_TOKEN_LIMIT);
        let encoder: Box<dyn Encoder> = match args.encoder_url.clone().or_else(|| config.encoder_url.clone()) {
            Some(url) => Box::new(RemoteEncoder::new(&url, dim, timeout(config), RetryPolicy::default())),
            None => {
                let size = pick(args.patch_size, config.patch_size, PATCH_SIZE);
                Box::new(ToyEncoder::with_patch_size(size, dim, derive_seed(seed, &["encoder"]))?)
            }
        };
        Ok(Self { encoder, loader: DirLoader { root: args.patches.clone() }, limit })
    }

    pub fn root(&self) -> &Path {
        &self.loader.root
    }

    pub fn pack(
        &self,
        part_id: &str,
        slides: &[String],
        indices: &BTreeMap<String, PatchSequence>,
        label: &str,
    ) -> Result<PackedContext> {
        Ok(pack_part(part_id, slides, indices, label, self.limit, self.encoder.as_ref(), &self.loader)?)
    }

    /// The patch PNGs themselves, for endpoints that do their own encoding.
    pub fn images(
        &self,
        slides: &[String],
        indices: &BTreeMap<String, PatchSequence>,
        label: &str,
    ) -> Result<Vec<PatchImage>> {
        let n: usize = slides.iter().filter_map(|s| indices.get(s)).map(PatchSequence::len).sum();
        check_budget(n, label, self.limit)?;
        let mut out = Vec::with_capacity(n);
        for s in slides {
            let seq = indices.get(s).ok_or_else(|| CliError::Validation(format!("no patch index for slide {s}")))?;
            for r in seq.records() {
                let path = self.root().join(&r.slide_id).join(r.file_name());
                let bytes = std::fs::read(&path).map_err(|e| CliError::io(&path, e))?;
                out.push(PatchImage {
                    slide_id: r.slide_id.clone(),
                    row: r.row,
                    col: r.col,
                    png_base64: base64::engine::general_purpose::STANDARD.encode(bytes),
                });
            }
        }
        Ok(out)
    }

    pub fn payload(
        &self,
        kind: PayloadKind,
        part_id: &str,
        slides: &[String],
        indices: &BTreeMap<String, PatchSequence>,
        label: &str,
    ) -> Result<ImagePayload> {
        Ok(match kind {
            PayloadKind::Embeddings => ImagePayload::Packed(Arc::new(self.pack(part_id, slides, indices, label)?)),
            PayloadKind::Images => ImagePayload::Patches(self.images(slides, indices, label)?),
        })
    }
}

fn timeout(config: &Config) -> Duration {
    Duration::from_secs(config.timeout_secs.unwrap_or(120))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PayloadKind {
    /// Pooled patch embeddings from the encoder.
    Embeddings,
    /// Base64 patch PNGs.
    Images,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    Stub,
    Replay,
    Remote,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    FindingOnly,
    LabelAndFinding,
}

impl From<ModeArg> for PromptMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::FindingOnly => PromptMode::FindingOnly,
            ModeArg::LabelAndFinding => PromptMode::LabelAndFinding,
        }
    }
}

#[derive(Args, Clone)]
pub struct BackendArgs {
    #[arg(long, value_enum, default_value = "stub")]
    pub backend: BackendKind,
    /// Replay fixtures JSONL `{request_sha256, text}` for `--backend replay`.
    #[arg(long)]
    pub replay: Option<PathBuf>,
    /// Write every response as a replay fixture to this JSONL file.
    #[arg(long)]
    pub record: Option<PathBuf>,
    /// Base URL for `--backend remote` (`POST /v1/generate`); token from GENERATION_TOKEN.
    #[arg(long)]
    pub url: Option<String>,
    /// Maximum outstanding requests.
    #[arg(long)]
    pub max_in_flight: Option<usize>,
}

/// The configured backend, wrapped so responses can be saved as fixtures.
pub struct Backend {
    inner: RecordingBackend<Box<dyn GenerationBackend>>,
    record: Option<PathBuf>,
    pub max_in_flight: usize,
}

impl Backend {
    pub fn new(args: &BackendArgs, config: &Config) -> Result<Self> {
        let inner: Box<dyn GenerationBackend> = match args.backend {
            BackendKind::Stub => Box::new(StubBackend),
            BackendKind::Replay => {
                let path = args
                    .replay
                    .as_ref()
                    .ok_or_else(|| CliError::Validation("--backend replay needs --replay".into()))?;
                Box::new(ReplayBackend::load(path)?)
            }
            BackendKind::Remote => {
                let url = args
                    .url
                    .clone()
                    .or_else(|| config.backend_url.clone())
                    .ok_or_else(|| CliError::Validation("--backend remote needs --url".into()))?;
                let mut rc = RemoteConfig::new(url);
                rc.timeout = timeout(config);
                rc.bearer_token = std::env::var(GENERATION_TOKEN_ENV).ok().filter(|t| !t.is_empty());
                Box::new(RemoteBackend::new(rc))
            }
        };
        let max_in_flight = pick(args.max_in_flight, config.max_in_flight, DEFAULT_MAX_IN_FLIGHT).max(1);
        Ok(Self { inner: RecordingBackend::new(inner), record: args.record.clone(), max_in_flight })
    }

    pub fn as_dyn(&self) -> &dyn GenerationBackend {
        &self.inner
    }

    pub fn batch(&self, requests: &[GenerationRequest]) -> Result<Vec<GeneratedText>> {
        generate_batch(&self.inner, requests, self.max_in_flight)
            .into_iter()
            .map(|r| r.map_err(CliError::from))
            .collect()
    }

    /// Writes recorded fixtures when `--record` was given.
    pub fn finish(&self) -> Result<()> {
        if let Some(path) = &self.record {
            self.inner.write_jsonl(path)?;
            log::info!("recorded {} fixtures to {}", self.inner.fixtures().len(), path.display());
        }
        Ok(())
    }
}

#[derive(Args)]
pub struct PackArgs {
    #[arg(long)]
    pub bundles: PathBuf,
    /// Part to pack; repeat for several. All parts when omitted.
    #[arg(long)]
    pub part: Vec<String>,
    #[command(flatten)]
    pub encoder: EncoderArgs,
    /// Output directory for `<part_id>.json` and `budgets.jsonl`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct BudgetLine<'a> {
    part_id: &'a str,
    n_slides: usize,
    n_patches: usize,
    used: usize,
    limit: usize,
}

fn select_parts(bundles: Vec<PartBundle>, wanted: &[String]) -> Result<Vec<PartBundle>> {
    if wanted.is_empty() {
        return Ok(bundles);
    }
    let mut by_id: BTreeMap<String, PartBundle> = bundles.into_iter().map(|b| (b.record.part_id.clone(), b)).collect();
    wanted
        .iter()
        .map(|id| by_id.remove(id).ok_or_else(|| CliError::Validation(format!("unknown part {id}"))))
        .collect()
}

pub fn pack(args: PackArgs, config: &Config) -> Result<()> {
    let seed = config.seed(args.encoder.seed);
    let builder = ContextBuilder::new(&args.encoder, config, seed)?;
    let bundles = select_parts(read_bundles(&args.bundles)?, &args.part)?;
    std::fs::create_dir_all(&args.out).map_err(|e| CliError::io(&args.out, e))?;
    let mut budgets = jsonl::Writer::create(&args.out.join("budgets.jsonl"))?;
    for b in &bundles {
        let indices = read_indices(builder.root(), &b.sampled_slide_ids)?;
        let packed = builder.pack(&b.record.part_id, &b.sampled_slide_ids, &indices, &b.record.label)?;
        packed.export_json(&args.out.join(format!("{}.json", b.record.part_id)))?;
        log::info!(
            "{}: {} slides, {} patches, {}/{} tokens",
            packed.part_id,
            packed.n_slides(),
            packed.n_patches(),
            packed.budget.used,
            packed.budget.limit
        );
        budgets.write(&BudgetLine {
            part_id: &packed.part_id,
            n_slides: packed.n_slides(),
            n_patches: packed.n_patches(),
            used: packed.budget.used,
            limit: packed.budget.limit,
        })?;
    }
    budgets.finish()
}

#[derive(Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub bundles: PathBuf,
    #[command(flatten)]
    pub encoder: EncoderArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
    #[arg(long, value_enum, default_value = "finding-only")]
    pub mode: ModeArg,
    #[arg(long, value_enum, default_value = "embeddings")]
    pub payload: PayloadKind,
    /// Split JSON from `split`; combine with `--split`.
    #[arg(long)]
    pub split_file: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<Split>,
    /// Output generations JSONL.
    #[arg(long)]
    pub out: PathBuf,
}

/// Turns raw output into a candidate record; label-and-finding output is
/// split at its first line.
pub fn to_record(
    bundle: &PartBundle,
    slides: &[String],
    source: TextSource,
    mode: PromptMode,
    out: GeneratedText,
) -> GenerationRecord {
    let (label, finding) = match mode {
        PromptMode::LabelAndFinding => {
            let s = split_generated_text(&out.text);
            (s.label, s.finding)
        }
        _ => (bundle.record.label.clone(), out.text.trim().to_string()),
    };
    GenerationRecord {
        part_id: bundle.record.part_id.clone(),
        text_source: source,
        mode,
        label,
        finding,
        text: out.text,
        backend_id: out.backend_id,
        latency_ms: out.latency_ms,
        flagged_empty: out.flagged_empty,
        slide_ids: slides.to_vec(),
    }
}

pub fn generate(args: GenerateArgs, config: &Config) -> Result<()> {
    let seed = config.seed(args.encoder.seed);
    let split = load_split(args.split_file.as_deref(), args.split)?;
    let bundles = filter_split(read_bundles(&args.bundles)?, split.as_ref().map(|(a, s)| (a, *s)))?;
    let builder = ContextBuilder::new(&args.encoder, config, seed)?;
    let backend = Backend::new(&args.backend, config)?;
    let mode = PromptMode::from(args.mode);
    let mut out = jsonl::Writer::create(&args.out)?;
    let mut flagged = 0;
    // parts stream through in chunks so one batch keeps the backend busy
    for chunk in bundles.chunks(backend.max_in_flight * 2) {
        let mut requests = Vec::with_capacity(chunk.len());
        for b in chunk {
            let indices = read_indices(builder.root(), &b.sampled_slide_ids)?;
            let payload = builder.payload(args.payload, &b.record.part_id, &b.sampled_slide_ids, &indices, &b.record.label)?;
            let mut req = GenerationRequest::finding(&b.record.label, payload);
            req.mode = mode;
            requests.push(req);
        }
        for (b, text) in chunk.iter().zip(backend.batch(&requests)?) {
            let rec = to_record(b, &b.sampled_slide_ids, TextSource::MultiSlide, mode, text);
            flagged += usize::from(rec.flagged_empty);
            out.write(&rec)?;
        }
    }
    out.finish()?;
    backend.finish()?;
    log::info!("generated {} texts ({} empty) with {}", bundles.len(), flagged, backend.as_dyn().id());
    Ok(())
}
