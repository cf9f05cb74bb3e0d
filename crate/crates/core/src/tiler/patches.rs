use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{compute_tissue_mask, select_working_level, MaskParams, SlideImage, TileError, TissueMask};
use crate::raster::RgbRaster;

pub const PATCH_SIZE: usize = 768;
pub const DEFAULT_MIN_TISSUE_FRACTION: f64 = 0.1;

const PAD_RGB: [u8; 3] = [255, 255, 255];

/// What to do with tiles that cross the right or bottom border.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgePolicy {
    #[default]
    Drop,
    /// Keep the tile, filling the part outside the slide with white background.
    Pad,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchConfig {
    pub patch_size: usize,
    pub min_tissue_fraction: f64,
    pub edge: EdgePolicy,
    pub target_mpp: f64,
    pub level_tolerance: f64,
    pub mask: MaskParams,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self {
            patch_size: PATCH_SIZE,
            min_tissue_fraction: DEFAULT_MIN_TISSUE_FRACTION,
            edge: EdgePolicy::Drop,
            target_mpp: super::DEFAULT_TARGET_MPP,
            level_tolerance: super::DEFAULT_LEVEL_TOLERANCE,
            mask: MaskParams::default(),
        }
    }
}

/// Patch metadata as written to `index.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchRecord {
    pub slide_id: String,
    pub row: usize,
    pub col: usize,
    /// Top-left corner `(x, y)` at the working level.
    pub origin: (usize, usize),
    pub size: usize,
    pub tissue_fraction: f64,
}

impl PatchRecord {
    pub fn file_name(&self) -> String {
        format!("patch_{}_{}.png", self.row, self.col)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub record: PatchRecord,
    /// `None` when only the index was loaded; pixels then live on disk.
    pub pixels: Option<RgbRaster>,
}

/// Patches of one slide in strictly increasing `(row, col)` order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct PatchSequence {
    pub slide_id: String,
    pub patches: Vec<Patch>,
}

impl PatchSequence {
    pub fn new(slide_id: impl Into<String>, patches: Vec<Patch>) -> Result<Self, TileError> {
        let seq = Self { slide_id: slide_id.into(), patches };
        if !seq.is_row_major() {
            return Err(TileError::Index {
                path: seq.slide_id.clone(),
                reason: "patches are not in strictly increasing row-major order".into(),
            });
        }
        Ok(seq)
    }

    pub fn empty(slide_id: impl Into<String>) -> Self {
        Self { slide_id: slide_id.into(), patches: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn is_row_major(&self) -> bool {
        self.patches
            .windows(2)
            .all(|w| (w[0].record.row, w[0].record.col) < (w[1].record.row, w[1].record.col))
    }

    pub fn records(&self) -> impl Iterator<Item = &PatchRecord> {
        self.patches.iter().map(|p| &p.record)
    }
}

/// Tissue-pixel share of the tile footprint, with the mask upsampled to pixels.
/// Footprint area outside the raster counts as background.
fn tile_tissue_fraction(mask: &TissueMask, x0: usize, y0: usize, size: usize) -> f64 {
    let ds = mask.downsample;
    let x1 = (x0 + size).min(mask.level_width);
    let y1 = (y0 + size).min(mask.level_height);
    if x0 >= x1 || y0 >= y1 {
        return 0.0;
    }
    let mut tissue: u64 = 0;
    for cy in y0 / ds..=(y1 - 1) / ds {
        let cell_y0 = (cy * ds).max(y0);
        let cell_y1 = ((cy + 1) * ds).min(y1);
        for cx in x0 / ds..=(x1 - 1) / ds {
            if mask.cell(cx, cy) {
                let cell_x0 = (cx * ds).max(x0);
                let cell_x1 = ((cx + 1) * ds).min(x1);
                tissue += ((cell_x1 - cell_x0) * (cell_y1 - cell_y0)) as u64;
            }
        }
    }
    tissue as f64 / (size * size) as f64
}

/// Grid-tiles the working raster from `(0, 0)` and keeps tiles whose tissue
/// fraction reaches `min_tissue_fraction`.
pub fn extract_patches(
    slide_id: &str,
    raster: &RgbRaster,
    mask: &TissueMask,
    config: &PatchConfig,
) -> Result<PatchSequence, TileError> {
    let size = config.patch_size;
    if size == 0 {
        return Err(TileError::ZeroPatchSize);
    }
    if mask.level_width != raster.width() || mask.level_height != raster.height() {
        return Err(TileError::MaskMismatch {
            mask_w: mask.level_width,
            mask_h: mask.level_height,
            raster_w: raster.width(),
            raster_h: raster.height(),
        });
    }
    let (grid_cols, grid_rows) = match config.edge {
        EdgePolicy::Drop => (raster.width() / size, raster.height() / size),
        EdgePolicy::Pad => (raster.width().div_ceil(size), raster.height().div_ceil(size)),
    };
    let rows: Vec<Vec<Patch>> = (0..grid_rows)
        .into_par_iter()
        .map(|row| {
            (0..grid_cols)
                .filter_map(|col| {
                    let origin = (col * size, row * size);
                    let fraction = tile_tissue_fraction(mask, origin.0, origin.1, size);
                    (fraction >= config.min_tissue_fraction).then(|| Patch {
                        record: PatchRecord {
                            slide_id: slide_id.to_string(),
                            row,
                            col,
                            origin,
                            size,
                            tissue_fraction: fraction,
                        },
                        pixels: Some(raster.crop(origin.0, origin.1, size, size, PAD_RGB)),
                    })
                })
                .collect()
        })
        .collect();
    Ok(PatchSequence {
        slide_id: slide_id.to_string(),
        patches: rows.into_iter().flatten().collect(),
    })
}

/// Level selection, resampling, masking and extraction for one slide.
pub fn tile_slide(slide: &SlideImage, config: &PatchConfig) -> Result<PatchSequence, TileError> {
    let working = select_working_level(slide, config.target_mpp, config.level_tolerance)?;
    let raster = slide.working_raster(working)?;
    let mask = compute_tissue_mask(&raster, &config.mask);
    log::debug!(
        "slide {}: level {} x{:.3}, {}x{} px, {} tissue cells",
        slide.slide_id,
        working.index,
        working.resample_factor,
        raster.width(),
        raster.height(),
        mask.tissue_cells()
    );
    extract_patches(&slide.slide_id, &raster, &mask, config)
}

/// Writes `<out_root>/<slide_id>/patch_<row>_<col>.png` and `index.jsonl`.
pub fn write_patch_sequence(seq: &PatchSequence, out_root: &Path) -> Result<(), TileError> {
    let dir = out_root.join(&seq.slide_id);
    let io_err = |source| TileError::Io { path: dir.display().to_string(), source };
    std::fs::create_dir_all(&dir).map_err(io_err)?;
    let index = std::fs::File::create(dir.join("index.jsonl")).map_err(io_err)?;
    let mut index = BufWriter::new(index);
    for patch in &seq.patches {
        if let Some(pixels) = &patch.pixels {
            pixels.save(&dir.join(patch.record.file_name()))?;
        }
        let line = serde_json::to_string(&patch.record).expect("patch record serializes");
        writeln!(index, "{line}").map_err(io_err)?;
    }
    index.flush().map_err(io_err)?;
    Ok(())
}

/// Reads a slide's `index.jsonl` without decoding pixels.
pub fn read_patch_index(slide_dir: &Path) -> Result<PatchSequence, TileError> {
    let path = slide_dir.join("index.jsonl");
    let path_str = path.display().to_string();
    let file = std::fs::File::open(&path).map_err(|source| TileError::Io { path: path_str.clone(), source })?;
    let mut patches = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| TileError::Io { path: path_str.clone(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PatchRecord = serde_json::from_str(&line).map_err(|e| TileError::Index {
            path: path_str.clone(),
            reason: format!("line {}: {e}", n + 1),
        })?;
        patches.push(Patch { record, pixels: None });
    }
    let slide_id = patches
        .first()
        .map(|p| p.record.slide_id.clone())
        .or_else(|| slide_dir.file_name().map(|s| s.to_string_lossy().into_owned()))
        .unwrap_or_default();
    PatchSequence::new(slide_id, patches).map_err(|e| match e {
        TileError::Index { reason, .. } => TileError::Index { path: path_str, reason },
        other => other,
    })
}
