use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::TileError;
use crate::raster::RgbRaster;

/// 10X magnification, taken as 1.0 micron per pixel.
pub const DEFAULT_TARGET_MPP: f64 = 1.0;
/// Relative slack allowed when matching a level to the target resolution.
pub const DEFAULT_LEVEL_TOLERANCE: f64 = 0.05;

/// On-disk slide manifest.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SlideManifest {
    pub slide_id: String,
    pub stain: String,
    pub levels: Vec<LevelManifest>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LevelManifest {
    pub mpp: f64,
    pub width: usize,
    pub height: usize,
    /// Raster path relative to the manifest file.
    pub image: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Level {
    pub width: usize,
    pub height: usize,
    pub mpp: f64,
    pub image: PathBuf,
}

/// A pyramidal slide. Levels are sorted ascending by mpp; pixels are read lazily.
#[derive(Clone, Debug, PartialEq)]
pub struct SlideImage {
    pub slide_id: String,
    pub stain: String,
    pub levels: Vec<Level>,
}

/// Level chosen for tiling plus the extra area-average factor needed to reach the target mpp.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WorkingLevel {
    pub index: usize,
    pub resample_factor: f64,
}

pub fn load_slide(manifest_path: &Path) -> Result<SlideImage, TileError> {
    let path_str = manifest_path.display().to_string();
    let text = std::fs::read_to_string(manifest_path)
        .map_err(|source| TileError::Io { path: path_str.clone(), source })?;
    let manifest: SlideManifest = serde_json::from_str(&text)
        .map_err(|e| TileError::Schema { path: path_str.clone(), reason: e.to_string() })?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    SlideImage::from_manifest(manifest, base, &path_str)
}

impl SlideImage {
    pub fn from_manifest(manifest: SlideManifest, base_dir: &Path, origin: &str) -> Result<Self, TileError> {
        let schema = |reason: String| TileError::Schema { path: origin.to_string(), reason };
        if manifest.slide_id.trim().is_empty() {
            return Err(schema("slide_id is empty".into()));
        }
        if manifest.levels.is_empty() {
            return Err(schema("no levels".into()));
        }
        let mut levels = Vec::with_capacity(manifest.levels.len());
        for (index, lm) in manifest.levels.into_iter().enumerate() {
            if lm.mpp <= 0.0 || !lm.mpp.is_finite() {
                return Err(TileError::NonPositiveMpp { index, mpp: lm.mpp });
            }
            if lm.width == 0 || lm.height == 0 {
                return Err(schema(format!("level {index} has zero dimension")));
            }
            let image = base_dir.join(&lm.image);
            if !image.is_file() {
                return Err(schema(format!("level {index} raster {} not found", image.display())));
            }
            levels.push(Level { width: lm.width, height: lm.height, mpp: lm.mpp, image });
        }
        levels.sort_by(|a, b| a.mpp.total_cmp(&b.mpp));
        Ok(Self { slide_id: manifest.slide_id, stain: manifest.stain, levels })
    }

    /// Decodes one level and checks its size against the manifest.
    pub fn read_level(&self, index: usize) -> Result<RgbRaster, TileError> {
        let level = self.levels.get(index).ok_or(TileError::LevelOutOfRange(index))?;
        let raster = RgbRaster::load(&level.image)?;
        if raster.width() != level.width || raster.height() != level.height {
            return Err(TileError::LevelDimensions {
                index,
                expected_w: level.width,
                expected_h: level.height,
                actual_w: raster.width(),
                actual_h: raster.height(),
            });
        }
        Ok(raster)
    }

    /// Reads the working level and resamples it to the target resolution.
    pub fn working_raster(&self, working: WorkingLevel) -> Result<RgbRaster, TileError> {
        let raster = self.read_level(working.index)?;
        Ok(raster.downsample_area(working.resample_factor))
    }
}

/// Chooses the coarsest level whose mpp does not exceed `target_mpp * (1 + tolerance)`.
pub fn select_working_level(
    slide: &SlideImage,
    target_mpp: f64,
    tolerance: f64,
) -> Result<WorkingLevel, TileError> {
    let limit = target_mpp * (1.0 + tolerance);
    let best = slide
        .levels
        .iter()
        .enumerate()
        .filter(|(_, l)| l.mpp <= limit)
        .max_by(|a, b| a.1.mpp.total_cmp(&b.1.mpp));
    match best {
        Some((index, level)) => Ok(WorkingLevel {
            index,
            resample_factor: (target_mpp / level.mpp).max(1.0),
        }),
        None => Err(TileError::NoSuitableLevel {
            limit_mpp: limit,
            available: slide.levels.iter().map(|l| l.mpp).collect(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slide_with(mpps: &[f64]) -> SlideImage {
        SlideImage {
            slide_id: "s".into(),
            stain: "H&E".into(),
            levels: mpps
                .iter()
                .map(|&mpp| Level { width: 100, height: 100, mpp, image: PathBuf::from("x.png") })
                .collect(),
        }
    }

    #[test]
    fn exact_match_level() {
        let w = select_working_level(&slide_with(&[0.25, 0.5, 1.0]), 1.0, 0.05).unwrap();
        assert_eq!(w, WorkingLevel { index: 2, resample_factor: 1.0 });
    }

    #[test]
    fn finer_level_with_resample() {
        let w = select_working_level(&slide_with(&[0.5, 2.0]), 1.0, 0.05).unwrap();
        assert_eq!(w, WorkingLevel { index: 0, resample_factor: 2.0 });
    }

    #[test]
    fn level_within_tolerance_is_used_without_upsampling() {
        let w = select_working_level(&slide_with(&[0.5, 1.04]), 1.0, 0.05).unwrap();
        assert_eq!(w.index, 1);
        assert_eq!(w.resample_factor, 1.0);
    }

    #[test]
    fn only_coarse_levels() {
        let err = select_working_level(&slide_with(&[2.0]), 1.0, 0.05).unwrap_err();
        assert!(matches!(err, TileError::NoSuitableLevel { .. }));
    }
}
