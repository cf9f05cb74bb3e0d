//! Slide reading and tiling.
//!
//! A slide is described by a JSON manifest listing its pyramid levels. The
//! tiler picks the level closest to the 10X working resolution (about 1.0
//! micron per pixel), area-averages it down when the chosen level is finer,
//! detects tissue on a coarse grid and emits non-overlapping square patches in
//! row-major order.

mod manifest;
mod mask;
mod patches;

pub use manifest::{
    load_slide, select_working_level, Level, LevelManifest, SlideImage, SlideManifest, WorkingLevel,
    DEFAULT_LEVEL_TOLERANCE, DEFAULT_TARGET_MPP,
};
pub use mask::{compute_tissue_mask, MaskParams, TissueMask};
pub use patches::{
    extract_patches, read_patch_index, tile_slide, write_patch_sequence, EdgePolicy, Patch,
    PatchConfig, PatchRecord, PatchSequence, DEFAULT_MIN_TISSUE_FRACTION, PATCH_SIZE,
};

use thiserror::Error;

use crate::raster::RasterError;

#[derive(Debug, Error)]
pub enum TileError {
    #[error("manifest {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest {path} is not valid: {reason}")]
    Schema { path: String, reason: String },
    #[error("level {index} has non-positive mpp {mpp}")]
    NonPositiveMpp { index: usize, mpp: f64 },
    #[error("no level finer than {limit_mpp:.4} mpp (levels: {available:?})")]
    NoSuitableLevel { limit_mpp: f64, available: Vec<f64> },
    #[error("level index {0} out of range")]
    LevelOutOfRange(usize),
    #[error("level {index} raster is {actual_w}x{actual_h}, manifest says {expected_w}x{expected_h}")]
    LevelDimensions {
        index: usize,
        expected_w: usize,
        expected_h: usize,
        actual_w: usize,
        actual_h: usize,
    },
    #[error("tissue mask covers {mask_w}x{mask_h} px but working raster is {raster_w}x{raster_h}")]
    MaskMismatch {
        mask_w: usize,
        mask_h: usize,
        raster_w: usize,
        raster_h: usize,
    },
    #[error("patch size must be at least 1")]
    ZeroPatchSize,
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("patch index {path}: {reason}")]
    Index { path: String, reason: String },
}
