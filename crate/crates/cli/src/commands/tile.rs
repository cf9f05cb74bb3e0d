use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;
use slidereport_core::tiler::{load_slide, tile_slide, write_patch_sequence, EdgePolicy, PatchConfig};

use crate::config::{pick, Config};
use crate::error::{CliError, Result};
use crate::jsonl;

#[derive(Args)]
pub struct TileArgs {
    /// A slide manifest, or a directory holding `<slide>/manifest.json` entries.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output root; each slide gets `<out>/<slide_id>/index.jsonl` and patch PNGs.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub min_tissue: Option<f64>,
    #[arg(long)]
    pub patch_size: Option<usize>,
    /// `drop` discards tiles crossing the border, `pad` fills them with white.
    #[arg(long, value_parser = parse_edge)]
    pub edge: Option<EdgePolicy>,
    /// Working resolution in microns per pixel.
    #[arg(long)]
    pub target_mpp: Option<f64>,
}

fn parse_edge(s: &str) -> std::result::Result<EdgePolicy, String> {
    match s {
        "drop" => Ok(EdgePolicy::Drop),
        "pad" => Ok(EdgePolicy::Pad),
        other => Err(format!("unknown edge policy {other:?} (drop|pad)")),
    }
}

#[derive(Serialize)]
struct TileSummary<'a> {
    slide_id: &'a str,
    manifest: String,
    n_patches: usize,
}

/// Manifest files named by `path`, sorted.
pub fn find_manifests(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    if !path.is_dir() {
        return Err(CliError::Validation(format!("{} is neither a manifest nor a directory", path.display())));
    }
    let own = path.join("manifest.json");
    if own.is_file() {
        return Ok(vec![own]);
    }
    let mut found = Vec::new();
    for entry in std::fs::read_dir(path).map_err(|e| CliError::io(path, e))? {
        let p = entry.map_err(|e| CliError::io(path, e))?.path();
        if p.is_dir() && p.join("manifest.json").is_file() {
            found.push(p.join("manifest.json"));
        }
    }
    found.sort();
    if found.is_empty() {
        return Err(CliError::Validation(format!("no manifest.json under {}", path.display())));
    }
    Ok(found)
}

pub fn run(args: TileArgs, config: &Config) -> Result<()> {
    let defaults = PatchConfig::default();
    let patch_config = PatchConfig {
        patch_size: pick(args.patch_size, config.patch_size, defaults.patch_size),
        min_tissue_fraction: pick(args.min_tissue, config.min_tissue, defaults.min_tissue_fraction),
        edge: args.edge.unwrap_or(defaults.edge),
        target_mpp: pick(args.target_mpp, config.target_mpp, defaults.target_mpp),
        ..defaults
    };
    if !(0.0..=1.0).contains(&patch_config.min_tissue_fraction) {
        return Err(CliError::Validation("--min-tissue must lie in [0, 1]".into()));
    }
    let manifests = find_manifests(&args.manifest)?;
    let mut summary = jsonl::Writer::create(&args.out.join("tiles.jsonl"))?;
    for m in &manifests {
        let slide = load_slide(m)?;
        let seq = tile_slide(&slide, &patch_config)?;
        write_patch_sequence(&seq, &args.out)?;
        log::info!("{}: {} patches", slide.slide_id, seq.len());
        summary.write(&TileSummary { slide_id: &slide.slide_id, manifest: m.display().to_string(), n_patches: seq.len() })?;
    }
    summary.finish()?;
    log::info!("tiled {} slides into {}", manifests.len(), args.out.display());
    Ok(())
}
