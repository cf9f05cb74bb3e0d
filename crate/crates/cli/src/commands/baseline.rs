use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{Args, Subcommand};
use slidereport_core::baselines::{
    select_icl_examples, ss_llm_select, ss_random, IclExample, SelectionLog, SlideNote, ValidationPart,
    DEFAULT_ICL_EXAMPLES,
};
use slidereport_core::dataset::Split;
use slidereport_core::generation::{GeneratedText, GenerationRequest, PromptMode};
use slidereport_core::stats::TextSource;

use super::generate::{to_record, Backend, BackendArgs, ContextBuilder, EncoderArgs, PayloadKind};
use crate::config::{pick, Config};
use crate::error::{CliError, Result};
use crate::jsonl;
use crate::pipeline::{filter_split, load_split, read_bundles, read_indices, NoteRecord, PartBundle};

#[derive(Subcommand)]
pub enum BaselineCommand {
    /// Generate one finding per slide, the input of both single-slide baselines.
    Notes(NotesArgs),
    /// Report the note of one uniformly chosen slide per part.
    SsRandom(SsRandomArgs),
    /// Build in-context examples from validation parts.
    BuildIcl(BuildIclArgs),
    /// Let the language model pick one note per part.
    SsLlm(SsLlmArgs),
}

pub fn run(cmd: BaselineCommand, config: &Config) -> Result<()> {
    match cmd {
        BaselineCommand::Notes(a) => notes(a, config),
        BaselineCommand::SsRandom(a) => random(a, config),
        BaselineCommand::BuildIcl(a) => build_icl(a, config),
        BaselineCommand::SsLlm(a) => llm(a, config),
    }
}

#[derive(Args)]
pub struct NotesArgs {
    #[arg(long)]
    pub bundles: PathBuf,
    #[command(flatten)]
    pub encoder: EncoderArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
    #[arg(long, value_enum, default_value = "embeddings")]
    pub payload: PayloadKind,
    /// Output notes JSONL.
    #[arg(long)]
    pub out: PathBuf,
}

fn notes(args: NotesArgs, config: &Config) -> Result<()> {
    let seed = config.seed(args.encoder.seed);
    let bundles = read_bundles(&args.bundles)?;
    let builder = ContextBuilder::new(&args.encoder, config, seed)?;
    let backend = Backend::new(&args.backend, config)?;
    let mut out = jsonl::Writer::create(&args.out)?;
    for b in &bundles {
        let indices = read_indices(builder.root(), &b.record.slide_ids)?;
        // slides without tissue patches get an empty, flagged note and no request
        let mut requests = Vec::new();
        let mut with_tissue = Vec::new();
        for s in &b.record.slide_ids {
            if indices[s].is_empty() {
                continue;
            }
            let slides = std::slice::from_ref(s);
            let payload = builder.payload(args.payload, &b.record.part_id, slides, &indices, &b.record.label)?;
            requests.push(GenerationRequest::finding(&b.record.label, payload));
            with_tissue.push(s.clone());
        }
        let mut texts: BTreeMap<String, GeneratedText> = with_tissue.into_iter().zip(backend.batch(&requests)?).collect();
        let notes = b
            .record
            .slide_ids
            .iter()
            .map(|s| match texts.remove(s) {
                Some(t) => SlideNote { slide_id: s.clone(), text: t.text.trim().to_string(), flagged_empty: t.flagged_empty },
                None => SlideNote { slide_id: s.clone(), text: String::new(), flagged_empty: true },
            })
            .collect();
        out.write(&NoteRecord { part_id: b.record.part_id.clone(), notes })?;
    }
    out.finish()?;
    backend.finish()?;
    log::info!("wrote notes for {} parts", bundles.len());
    Ok(())
}

fn notes_by_part(path: &std::path::Path) -> Result<BTreeMap<String, NoteRecord>> {
    let records: Vec<NoteRecord> = jsonl::read(path)?;
    Ok(records.into_iter().map(|r| (r.part_id.clone(), r)).collect())
}

fn notes_for<'a>(notes: &'a BTreeMap<String, NoteRecord>, b: &PartBundle) -> Result<&'a NoteRecord> {
    notes
        .get(&b.record.part_id)
        .ok_or_else(|| CliError::Validation(format!("no notes for part {}", b.record.part_id)))
}

#[derive(Args)]
pub struct SsRandomArgs {
    #[arg(long)]
    pub bundles: PathBuf,
    #[arg(long)]
    pub notes: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output generations JSONL.
    #[arg(long)]
    pub out: PathBuf,
}

fn random(args: SsRandomArgs, config: &Config) -> Result<()> {
    let seed = config.seed(args.seed);
    let bundles = read_bundles(&args.bundles)?;
    let notes = notes_by_part(&args.notes)?;
    let mut out = jsonl::Writer::create(&args.out)?;
    for b in &bundles {
        let chosen = ss_random(&b.part()?, seed)?;
        let note = notes_for(&notes, b)?
            .notes
            .iter()
            .find(|n| n.slide_id == chosen)
            .ok_or_else(|| CliError::Validation(format!("part {} has no note for slide {chosen}", b.record.part_id)))?;
        let text = GeneratedText::new(note.text.clone(), "ss_random", 0);
        out.write(&to_record(b, &[chosen], TextSource::SsRandom, PromptMode::FindingOnly, text))?;
    }
    out.finish()?;
    log::info!("wrote {} random-slide baselines", bundles.len());
    Ok(())
}

#[derive(Args)]
pub struct BuildIclArgs {
    #[arg(long)]
    pub bundles: PathBuf,
    #[arg(long)]
    pub notes: PathBuf,
    /// Split JSON; examples then come only from `--split`.
    #[arg(long)]
    pub split_file: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<Split>,
    /// Number of examples.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output ICL JSONL.
    #[arg(long)]
    pub out: PathBuf,
}

fn build_icl(args: BuildIclArgs, config: &Config) -> Result<()> {
    let seed = config.seed(args.seed);
    let split = load_split(args.split_file.as_deref(), args.split)?;
    let bundles = filter_split(read_bundles(&args.bundles)?, split.as_ref().map(|(a, s)| (a, *s)))?;
    let notes = notes_by_part(&args.notes)?;
    let pool = bundles
        .iter()
        .map(|b| {
            Ok(ValidationPart {
                part_id: b.record.part_id.clone(),
                notes: notes_for(&notes, b)?.texts(),
                ground_truth: b.record.finding.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = pick(args.n, config.icl_examples, DEFAULT_ICL_EXAMPLES);
    let examples = select_icl_examples(&pool, n, seed)?;
    jsonl::write_all(&args.out, &examples)?;
    log::info!("built {} in-context examples from {} parts", examples.len(), pool.len());
    Ok(())
}

#[derive(Args)]
pub struct SsLlmArgs {
    #[arg(long)]
    pub bundles: PathBuf,
    #[arg(long)]
    pub notes: PathBuf,
    /// ICL JSONL from `build-icl`.
    #[arg(long)]
    pub icl: PathBuf,
    #[command(flatten)]
    pub backend: BackendArgs,
    /// Selection log JSONL with the notes, choice and parse flags per part.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Output generations JSONL.
    #[arg(long)]
    pub out: PathBuf,
}

fn llm(args: SsLlmArgs, config: &Config) -> Result<()> {
    let bundles = read_bundles(&args.bundles)?;
    let notes = notes_by_part(&args.notes)?;
    let icl: Vec<IclExample> = jsonl::read(&args.icl)?;
    let backend = Backend::new(&args.backend, config)?;
    let mut out = jsonl::Writer::create(&args.out)?;
    let mut logs: Vec<SelectionLog> = Vec::with_capacity(bundles.len());
    for b in &bundles {
        let record = notes_for(&notes, b)?;
        let texts = record.texts();
        let sel = ss_llm_select(&b.record.part_id, &texts, &icl, backend.as_dyn())?;
        let slide = record.notes.iter().find(|n| !n.flagged_empty && n.text == sel.selected).map(|n| n.slide_id.clone());
        let text = GeneratedText::new(sel.selected.clone(), backend.as_dyn().id(), 0);
        out.write(&to_record(b, slide.as_slice(), TextSource::SsLlm, PromptMode::FindingOnly, text))?;
        if !sel.flags.is_empty() {
            log::debug!("{}: selection flags {:?}", b.record.part_id, sel.flags);
        }
        logs.push(sel);
    }
    out.finish()?;
    if let Some(p) = &args.log {
        jsonl::write_all(p, &logs)?;
    }
    backend.finish()?;
    log::info!("selected notes for {} parts", bundles.len());
    Ok(())
}
