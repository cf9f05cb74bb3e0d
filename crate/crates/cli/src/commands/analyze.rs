use std::path::PathBuf;

use clap::Args;
use slidereport_core::dataset::{read_parts_jsonl, SplitAssignment};
use slidereport_core::stats::{analyze, read_ratings_jsonl, AnalysisConfig, AnalysisInput, ExclusionRule, SourceScore, TextSource};

use crate::config::{pick, Config};
use crate::error::{CliError, Result};
use crate::jsonl;

#[derive(Args)]
pub struct AnalyzeArgs {
    /// Ratings JSONL.
    #[arg(long)]
    pub ratings: PathBuf,
    /// Scores JSONL from `score`; enables the metric tables.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// Parts or bundles JSONL; enables severity, category and tissue tables.
    #[arg(long)]
    pub parts: Option<PathBuf>,
    /// Split JSON; enables the tissue distribution per split.
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Comparison `text1:text2`, e.g. `multi_slide:original`. Repeatable;
    /// defaults to every rated source against the original.
    #[arg(long, value_parser = parse_comparison)]
    pub compare: Vec<(TextSource, TextSource)>,
    /// Keep every part in the preference tables.
    #[arg(long)]
    pub no_exclusion: bool,
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Confidence level of the bootstrap intervals.
    #[arg(long)]
    pub level: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for `report.json` and the CSV tables.
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_comparison(s: &str) -> std::result::Result<(TextSource, TextSource), String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected text1:text2, got {s:?}"))?;
    Ok((a.trim().parse()?, b.trim().parse()?))
}

pub fn run(args: AnalyzeArgs, config: &Config) -> Result<()> {
    let defaults = AnalysisConfig::default();
    let analysis = AnalysisConfig {
        replicates: pick(args.replicates, config.replicates, defaults.replicates),
        level: pick(args.level, config.level, defaults.level),
        seed: config.seed(args.seed),
        exclusion: if args.no_exclusion { ExclusionRule::None } else { ExclusionRule::AnyRaterBothLow },
        comparisons: args.compare,
        ..defaults
    };
    if analysis.replicates == 0 || !(analysis.level > 0.0 && analysis.level < 1.0) {
        return Err(CliError::Validation("need --replicates >= 1 and --level in (0, 1)".into()));
    }
    let ratings = read_ratings_jsonl(&args.ratings)?;
    let scores: Vec<SourceScore> = match &args.scores {
        Some(p) => jsonl::read(p)?,
        None => Vec::new(),
    };
    let parts = args.parts.as_deref().map(read_parts_jsonl).transpose()?;
    let split: Option<SplitAssignment> = args.split.as_deref().map(jsonl::read_json).transpose()?;
    let input = AnalysisInput { ratings: &ratings, scores: &scores, parts: parts.as_deref(), split: split.as_ref() };
    let report = analyze(&input, &analysis)?;
    report.check_invariants().map_err(|e| CliError::Validation(format!("report failed its own checks: {e}")))?;
    report.write_dir(&args.out)?;
    for m in &report.means {
        log::info!("{}: mean {:.3} [{:.3}, {:.3}] over {} parts", m.text_source, m.mean, m.ci.lo, m.ci.hi, m.n_parts);
    }
    for p in &report.preferences {
        log::info!(
            "{} vs {}: at least as good {:.3} [{:.3}, {:.3}], {} parts excluded",
            p.text1,
            p.text2,
            p.at_least_as_good,
            p.at_least_as_good_ci.lo,
            p.at_least_as_good_ci.hi,
            p.excluded_parts.len()
        );
    }
    for s in &report.skipped_comparisons {
        log::warn!("skipped: {s}");
    }
    log::info!("analysis written to {}", args.out.display());
    Ok(())
}
