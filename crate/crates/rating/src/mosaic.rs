use std::path::Path;

use slidereport_core::raster::RgbRaster;
use slidereport_core::tiler::read_patch_index;

use crate::RatingError;

pub const MOSAIC_DOWNSAMPLE: usize = 4;

/// Places a slide's extracted patches at their origins on a white canvas,
/// downsampled by `factor`, and returns PNG bytes.
pub fn build_mosaic(slide_dir: &Path, factor: usize) -> Result<Vec<u8>, RatingError> {
    let factor = factor.max(1);
    let seq = read_patch_index(slide_dir).map_err(|e| RatingError::NotFound(e.to_string()))?;
    let ext = |v: usize| v.div_ceil(factor).max(1);
    let width = seq.records().map(|r| r.origin.0 + r.size).max().unwrap_or(1);
    let height = seq.records().map(|r| r.origin.1 + r.size).max().unwrap_or(1);
    let mut canvas = RgbRaster::filled(ext(width), ext(height), [255, 255, 255]);
    for r in seq.records() {
        let tile = RgbRaster::load(&slide_dir.join(r.file_name()))
            .map_err(|e| RatingError::Storage(e.to_string()))?
            .downsample_area(factor as f64);
        let (x0, y0) = (r.origin.0 / factor, r.origin.1 / factor);
        for y in 0..tile.height() {
            for x in 0..tile.width() {
                if x0 + x < canvas.width() && y0 + y < canvas.height() {
                    canvas.set_pixel(x0 + x, y0 + y, tile.pixel(x, y));
                }
            }
        }
    }
    canvas.encode_png().map_err(|e| RatingError::Storage(e.to_string()))
}
