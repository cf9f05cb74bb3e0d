use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use clap::Args;
use slidereport_core::dataset::{group_cases, read_parts_jsonl, sample_slides, split_dataset, PartRecord, Split};
use slidereport_core::stats::{select_eval_sample, DEFAULT_COMMON_TISSUES};

use crate::config::{pick, Config};
use crate::error::{CliError, Result};
use crate::jsonl;
use crate::pipeline::{read_indices, PartBundle};

#[derive(Args)]
pub struct AssembleArgs {
    /// Parts JSONL.
    #[arg(long)]
    pub parts: PathBuf,
    /// Tiler output root.
    #[arg(long)]
    pub patches: PathBuf,
    /// Output directory; receives `bundles.jsonl`.
    #[arg(long)]
    pub out: PathBuf,
    /// Maximum slides sampled per part.
    #[arg(long)]
    pub slide_cap: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn assemble(args: AssembleArgs, config: &Config) -> Result<()> {
    let seed = config.seed(args.seed);
    let cap = pick(args.slide_cap, config.slide_cap, slidereport_core::dataset::DEFAULT_SLIDE_CAP);
    if cap == 0 {
        return Err(CliError::Validation("--slide-cap must be at least 1".into()));
    }
    let parts = read_parts_jsonl(&args.parts)?;
    let mut out = jsonl::Writer::create(&args.out.join("bundles.jsonl"))?;
    let mut by_category = BTreeMap::new();
    for part in &parts {
        let indices = read_indices(&args.patches, &part.slide_ids)?;
        let bundle = PartBundle {
            record: PartRecord::from(part),
            category: part.category(),
            sampled_slide_ids: sample_slides(part, cap, seed),
            patch_counts: indices.iter().map(|(k, v)| (k.clone(), v.len())).collect(),
        };
        *by_category.entry(part.category().as_str()).or_insert(0usize) += 1;
        out.write(&bundle)?;
    }
    out.finish()?;
    log::info!("assembled {} parts {:?}", parts.len(), by_category);
    Ok(())
}

#[derive(Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub parts: PathBuf,
    /// Train, validation and test shares.
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0.7, 0.2, 0.1])]
    pub ratios: Vec<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON object mapping case ids to a fixed split.
    #[arg(long)]
    pub pinned: Option<PathBuf>,
    /// Output JSON; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn split(args: SplitArgs, config: &Config) -> Result<()> {
    let seed = config.seed(args.seed);
    let ratios: [f64; 3] = args
        .ratios
        .as_slice()
        .try_into()
        .map_err(|_| CliError::Validation("--ratios needs exactly three values".into()))?;
    let pinned: BTreeMap<String, Split> = match &args.pinned {
        Some(p) => jsonl::read_json(p)?,
        None => BTreeMap::new(),
    };
    let cases = group_cases(read_parts_jsonl(&args.parts)?)?;
    let assignment = split_dataset(&cases, ratios, seed, &pinned)?;
    let counts = assignment.part_counts(&cases);
    for (s, row) in Split::ALL.iter().zip(counts) {
        log::info!("{}: {} parts by category {:?}", s.as_str(), row.iter().sum::<usize>(), row);
    }
    match &args.out {
        Some(p) => jsonl::write_json(p, &assignment),
        None => {
            println!("{}", serde_json::to_string_pretty(&assignment).expect("split serializes"));
            Ok(())
        }
    }
}

#[derive(Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub parts: PathBuf,
    /// Sample size; half (rounded up) comes from the common tissues.
    #[arg(long)]
    pub n: usize,
    /// Comma-separated common tissue names.
    #[arg(long, value_delimiter = ',')]
    pub common: Option<Vec<String>>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output parts JSONL.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn sample(args: SampleArgs, config: &Config) -> Result<()> {
    let seed = config.seed(args.seed);
    let common: BTreeSet<String> = match args.common {
        Some(list) => list.into_iter().map(|s| s.trim().to_lowercase()).collect(),
        None => DEFAULT_COMMON_TISSUES.iter().map(|s| s.to_string()).collect(),
    };
    let parts = read_parts_jsonl(&args.parts)?;
    let picked = select_eval_sample(&parts, args.n, &common, seed)?;
    let records: Vec<PartRecord> = picked.iter().map(PartRecord::from).collect();
    jsonl::write_all(&args.out, &records)?;
    log::info!("sampled {} of {} parts", records.len(), parts.len());
    Ok(())
}
