//! `slidereport`: tiles slides, packs multi-slide contexts, generates and
//! scores report text, runs blinded rating sessions and the statistics.
//!
//! Record formats (all JSON Lines unless noted):
//!
//! - parts: `{case_id, part_id, slide_ids, label, finding, tissue?, severity?}`
//! - bundles: a parts line plus `{category, sampled_slide_ids, patch_counts}`
//! - generations: `{part_id, text_source, mode, label, finding, text, backend_id,
//!   latency_ms, flagged_empty, slide_ids}`
//! - notes: `{part_id, notes: [{slide_id, text, flagged_empty}]}`
//! - icl: `{notes: [..], response}`
//! - scores: `{part_id, text_source, rouge_l_f, meteor, avg}`
//! - ratings: `{part_id, rater_id, text_source, score, comment}` where score is
//!   1..5 or `"NEED_MORE_INFO"`
//! - split (JSON): `{seed, ratios, assignment: {case_id: train|validation|test}}`

mod commands;
mod config;
mod error;
mod jsonl;
mod pipeline;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::Config;

#[derive(Parser)]
#[command(name = "slidereport", version, about = "Multi-slide pathology report generation pipeline")]
struct Cli {
    /// TOML (or .json) file with default values for seeds, limits and endpoints.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cut slides into tissue patches at the working resolution.
    Tile(commands::tile::TileArgs),
    /// Join parts with patch indices into bundles with categories and sampled slides.
    Assemble(commands::dataset::AssembleArgs),
    /// Assign whole cases to train/validation/test.
    Split(commands::dataset::SplitArgs),
    /// Draw the stratified evaluation sample of parts.
    Sample(commands::dataset::SampleArgs),
    /// Encode and pack one or more parts into model contexts.
    Pack(commands::generate::PackArgs),
    /// Generate multi-slide findings for parts.
    Generate(commands::generate::GenerateArgs),
    /// Single-slide baselines.
    #[command(subcommand)]
    Baseline(commands::baseline::BaselineCommand),
    /// Score candidate texts against references with ROUGE-L and METEOR.
    Score(commands::score::ScoreArgs),
    /// Rate candidates with simulated raters through the rating store.
    RateSynthetic(commands::rate::RateArgs),
    /// Statistics and tables over ratings and scores.
    Analyze(commands::analyze::AnalyzeArgs),
    /// Start the blinded rating HTTP service.
    Serve(commands::serve::ServeArgs),
    /// Write the bundled synthetic slide fixture.
    DemoFixture(commands::fixture::FixtureArgs),
}

fn run(cli: Cli) -> error::Result<()> {
    let config = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    match cli.command {
        Command::Tile(a) => commands::tile::run(a, &config),
        Command::Assemble(a) => commands::dataset::assemble(a, &config),
        Command::Split(a) => commands::dataset::split(a, &config),
        Command::Sample(a) => commands::dataset::sample(a, &config),
        Command::Pack(a) => commands::generate::pack(a, &config),
        Command::Generate(a) => commands::generate::generate(a, &config),
        Command::Baseline(c) => commands::baseline::run(c, &config),
        Command::Score(a) => commands::score::run(a),
        Command::RateSynthetic(a) => commands::rate::run(a, &config),
        Command::Analyze(a) => commands::analyze::run(a, &config),
        Command::Serve(a) => commands::serve::run(a),
        Command::DemoFixture(a) => commands::fixture::run(a, &config),
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        log::error!("{e}");
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
