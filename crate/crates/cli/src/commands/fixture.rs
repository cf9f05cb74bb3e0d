//! The bundled synthetic fixture: twelve two-level slides spread over four
//! single-part cases with 1, 3, 6 and 2 slides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use rand::Rng;
use slidereport_core::dataset::{PartRecord, Split};
use slidereport_core::raster::RgbRaster;
use slidereport_core::seeding::keyed_rng;
use slidereport_core::tiler::{LevelManifest, SlideManifest};

use crate::config::Config;
use crate::error::{CliError, Result};
use crate::jsonl;

pub const FIXTURE_SIDE: usize = 1536;

#[derive(Args)]
pub struct FixtureArgs {
    /// Output directory; receives `slides/`, `parts.jsonl` and `pinned.json`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

struct FixturePart {
    case_id: &'static str,
    tissue: &'static str,
    label: &'static str,
    finding: &'static str,
    n_slides: usize,
    split: Split,
}

const PARTS: [FixturePart; 4] = [
    FixturePart {
        case_id: "case01",
        tissue: "colorectal",
        label: "colon, sigmoid, biopsy",
        finding: "tubular adenoma.",
        n_slides: 1,
        split: Split::Test,
    },
    FixturePart {
        case_id: "case02",
        tissue: "skin",
        label: "skin, left cheek, shave biopsy",
        finding: "basal cell carcinoma, nodular type, extending to the deep margin.",
        n_slides: 3,
        split: Split::Validation,
    },
    FixturePart {
        case_id: "case03",
        tissue: "stomach",
        label: "stomach, antrum, biopsy",
        finding: "mild chronic gastritis. negative for helicobacter pylori.",
        n_slides: 6,
        split: Split::Test,
    },
    FixturePart {
        case_id: "case04",
        tissue: "cervix",
        label: "cervix, biopsy",
        finding: "benign squamous mucosa.",
        n_slides: 2,
        split: Split::Train,
    },
];

struct Blob {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    rgb: [f64; 3],
}

/// Pink-purple ellipses on a near-white background with per-pixel jitter.
fn render_slide(seed: u64, slide_id: &str, side: usize) -> RgbRaster {
    let mut rng = keyed_rng(seed, &["fixture_slide", slide_id]);
    let n_blobs = rng.random_range(1..=3);
    let s = side as f64;
    let blobs: Vec<Blob> = (0..n_blobs)
        .map(|_| Blob {
            cx: rng.random_range(0.25..0.75) * s,
            cy: rng.random_range(0.25..0.75) * s,
            rx: rng.random_range(0.15..0.3) * s,
            ry: rng.random_range(0.15..0.3) * s,
            rgb: [rng.random_range(190.0..230.0), rng.random_range(110.0..160.0), rng.random_range(170.0..210.0)],
        })
        .collect();
    let noise_key = rng.random::<u64>();
    RgbRaster::from_fn(side, side, |x, y| {
        let (fx, fy) = (x as f64, y as f64);
        let inside = blobs
            .iter()
            .find(|b| ((fx - b.cx) / b.rx).powi(2) + ((fy - b.cy) / b.ry).powi(2) <= 1.0);
        // cheap hash noise keeps rendering fast and independent of iteration order
        let h = (x as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (y as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F) ^ noise_key;
        let h = (h ^ (h >> 29)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        let jitter = ((h >> 56) as f64 / 255.0 - 0.5) * 16.0;
        let base = match inside {
            Some(b) => b.rgb,
            None => [244.0, 242.0, 245.0],
        };
        base.map(|c| (c + jitter).clamp(0.0, 255.0) as u8)
    })
}

fn write_slide(dir: &Path, slide_id: &str, raster: &RgbRaster) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let half = raster.downsample_area(2.0);
    raster.save(&dir.join("level0.png"))?;
    half.save(&dir.join("level1.png"))?;
    let manifest = SlideManifest {
        slide_id: slide_id.to_string(),
        stain: "H&E".into(),
        levels: vec![
            LevelManifest { mpp: 1.0, width: raster.width(), height: raster.height(), image: "level0.png".into() },
            LevelManifest { mpp: 2.0, width: half.width(), height: half.height(), image: "level1.png".into() },
        ],
    };
    jsonl::write_json(&dir.join("manifest.json"), &manifest)
}

pub fn run(args: FixtureArgs, config: &Config) -> Result<()> {
    let seed = config.seed(args.seed);
    let mut records = Vec::new();
    let mut pinned = BTreeMap::new();
    for p in &PARTS {
        let part_id = format!("{}-A", p.case_id);
        let slide_ids: Vec<String> = (1..=p.n_slides).map(|i| format!("{part_id}-s{i:02}")).collect();
        for id in &slide_ids {
            write_slide(&args.out.join("slides").join(id), id, &render_slide(seed, id, FIXTURE_SIDE))?;
        }
        records.push(PartRecord {
            case_id: p.case_id.into(),
            part_id,
            slide_ids,
            label: p.label.into(),
            finding: p.finding.into(),
            tissue: Some(p.tissue.into()),
            severity: None,
        });
        pinned.insert(p.case_id.to_string(), p.split);
    }
    jsonl::write_all(&args.out.join("parts.jsonl"), &records)?;
    jsonl::write_json(&args.out.join("pinned.json"), &pinned)?;
    let n: usize = records.iter().map(|r| r.slide_ids.len()).sum();
    log::info!("fixture with {} parts and {n} slides in {}", records.len(), args.out.display());
    Ok(())
}
