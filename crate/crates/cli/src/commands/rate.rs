use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Args;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use slidereport_core::metrics::avg_nlg;
use slidereport_core::seeding::keyed_rng;
use slidereport_core::stats::{RatingRecord, Score, TextSource};
use slidereport_rating::{PartCandidates, RatingStore};

use crate::config::Config;
use crate::error::{CliError, Result};
use crate::jsonl;
use crate::pipeline::{read_bundles, GenerationRecord};

#[derive(Args)]
pub struct RateArgs {
    #[arg(long)]
    pub bundles: PathBuf,
    /// Generations JSONL files; the original finding always joins as a candidate.
    #[arg(long, required = true, num_args = 1..)]
    pub generations: Vec<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub raters: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Share of texts answered with NEED_MORE_INFO.
    #[arg(long, default_value_t = 0.02)]
    pub need_more_info_rate: f64,
    /// Session journal directory.
    #[arg(long)]
    pub journal: PathBuf,
    /// Output ratings JSONL.
    #[arg(long)]
    pub out: PathBuf,
}

/// Simulated rater: reads a blinded text, judges it by its overlap with the
/// original finding, adds a personal bias and per-text noise.
struct SyntheticRater {
    rng: rand_chacha::ChaCha8Rng,
    bias: f64,
    noise: Normal<f64>,
    need_more_info_rate: f64,
}

impl SyntheticRater {
    fn new(seed: u64, rater_id: &str, need_more_info_rate: f64) -> Self {
        let mut rng = keyed_rng(seed, &["synthetic_rater", rater_id]);
        let bias = Normal::new(0.0, 0.3).expect("valid normal").sample(&mut rng);
        Self { rng, bias, noise: Normal::new(0.0, 0.5).expect("valid normal"), need_more_info_rate }
    }

    fn rate(&mut self, text: &str, original: &str) -> Score {
        if self.rng.random::<f64>() < self.need_more_info_rate {
            return Score::NeedMoreInfo;
        }
        let quality = avg_nlg(text, original).avg;
        let latent = 1.5 + 3.5 * quality + self.bias + self.noise.sample(&mut self.rng);
        Score::Rated(latent.round().clamp(1.0, 5.0) as u8)
    }
}

pub fn run(args: RateArgs, config: &Config) -> Result<()> {
    let seed = config.seed(args.seed);
    if args.raters == 0 {
        return Err(CliError::Validation("--raters must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&args.need_more_info_rate) {
        return Err(CliError::Validation("--need-more-info-rate must lie in [0, 1)".into()));
    }
    let bundles = read_bundles(&args.bundles)?;
    let mut parts: BTreeMap<String, PartCandidates> = BTreeMap::new();
    let mut originals = BTreeMap::new();
    for b in &bundles {
        let mut candidates = BTreeMap::new();
        candidates.insert(TextSource::Original, b.record.finding.clone());
        originals.insert(b.record.part_id.clone(), b.record.finding.clone());
        parts.insert(
            b.record.part_id.clone(),
            PartCandidates { part_id: b.record.part_id.clone(), slide_ids: b.sampled_slide_ids.clone(), candidates },
        );
    }
    for path in &args.generations {
        for g in jsonl::read::<GenerationRecord>(path)? {
            let part = parts
                .get_mut(&g.part_id)
                .ok_or_else(|| CliError::Validation(format!("{}: unknown part {}", path.display(), g.part_id)))?;
            if part.candidates.insert(g.text_source, g.finding).is_some() {
                return Err(CliError::Validation(format!("part {} has two {} texts", g.part_id, g.text_source)));
            }
        }
    }
    let parts: Vec<PartCandidates> = parts.into_values().collect();
    let store = RatingStore::open(&args.journal)?;
    let mut records: Vec<RatingRecord> = Vec::new();
    for r in 0..args.raters {
        let rater_id = format!("rater{}", r + 1);
        let session = store.create_session(&parts, &rater_id, seed)?;
        let mut rater = SyntheticRater::new(seed, &rater_id, args.need_more_info_rate);
        for i in 0..parts.len() {
            let task = session.task_at(i).expect("index within session");
            let original = &originals[&task.part_id];
            for t in &task.texts {
                let score = rater.rate(&t.text, original);
                let comment = if score == Score::NeedMoreInfo { "insufficient detail" } else { "" };
                store.submit_rating(&session.session_id, &task.part_id, &t.blinded_text_id, score, comment)?;
            }
        }
        let done = store.session(&session.session_id)?;
        log::info!("{rater_id}: session {} {:?}", done.session_id, done.progress());
        records.extend(done.export());
    }
    jsonl::write_all(&args.out, &records)?;
    log::info!("wrote {} ratings", records.len());
    Ok(())
}
