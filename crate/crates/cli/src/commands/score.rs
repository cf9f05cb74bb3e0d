use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Args;
use serde::Deserialize;
use slidereport_core::metrics::{avg_nlg, score_pair, PairRecord};
use slidereport_core::stats::{SourceScore, TextSource};

use crate::error::{CliError, Result};
use crate::jsonl;

#[derive(Args)]
pub struct ScoreArgs {
    /// Candidate JSONL with `part_id`, optional `text_source` (default original)
    /// and the text in `finding` or `text`. Repeat for several files.
    #[arg(long, required_unless_present = "pairs", num_args = 1..)]
    pub candidates: Vec<PathBuf>,
    /// Reference JSONL with `part_id` and `finding` (parts or bundles work).
    #[arg(long, required_unless_present = "pairs")]
    pub refs: Option<PathBuf>,
    /// Pair JSONL `{id, candidate, reference}` scored as-is instead.
    #[arg(long, conflicts_with_all = ["candidates", "refs"])]
    pub pairs: Option<PathBuf>,
    /// Output JSONL: scores `{part_id, text_source, rouge_l_f, meteor, avg}`,
    /// or `{id, rouge_l_f, meteor, avg}` with `--pairs`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Deserialize)]
struct TextLine {
    part_id: String,
    #[serde(default)]
    text_source: Option<TextSource>,
    #[serde(default)]
    finding: Option<String>,
    #[serde(default)]
    text: Option<String>,
}

impl TextLine {
    fn body(&self) -> Result<&str> {
        self.finding
            .as_deref()
            .or(self.text.as_deref())
            .ok_or_else(|| CliError::Validation(format!("part {} has neither finding nor text", self.part_id)))
    }
}

pub fn run(args: ScoreArgs) -> Result<()> {
    if let Some(pairs) = &args.pairs {
        let pairs: Vec<PairRecord> = jsonl::read(pairs)?;
        let scores: Vec<_> = pairs.iter().map(score_pair).collect();
        jsonl::write_all(&args.out, &scores)?;
        log::info!("scored {} pairs", scores.len());
        return Ok(());
    }
    let refs_path = args.refs.as_ref().expect("clap requires --refs");
    let mut refs = BTreeMap::new();
    for line in jsonl::read::<TextLine>(refs_path)? {
        let body = line.body()?.to_string();
        if refs.insert(line.part_id.clone(), body).is_some() {
            return Err(CliError::Validation(format!("reference for part {} given twice", line.part_id)));
        }
    }
    let mut out = jsonl::Writer::create(&args.out)?;
    let mut n = 0;
    for path in &args.candidates {
        for line in jsonl::read::<TextLine>(path)? {
            let reference = refs
                .get(&line.part_id)
                .ok_or_else(|| CliError::Validation(format!("no reference for part {}", line.part_id)))?;
            let m = avg_nlg(line.body()?, reference);
            out.write(&SourceScore {
                part_id: line.part_id.clone(),
                text_source: line.text_source.unwrap_or(TextSource::Original),
                rouge_l_f: m.rouge_l.f,
                meteor: m.meteor,
                avg: m.avg,
            })?;
            n += 1;
        }
    }
    out.finish()?;
    log::info!("scored {n} candidates");
    Ok(())
}
