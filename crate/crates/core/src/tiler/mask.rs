use serde::{Deserialize, Serialize};

use crate::raster::RgbRaster;

/// Thresholds for the saturation/luminance tissue detector.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskParams {
    /// Cell edge in working-level pixels.
    pub downsample: usize,
    /// Minimum mean HSV saturation for a tissue cell.
    pub s_min: f64,
    /// Inclusive mean-luminance band for a tissue cell.
    pub l_min: f64,
    pub l_max: f64,
}

impl Default for MaskParams {
    fn default() -> Self {
        Self { downsample: 16, s_min: 0.08, l_min: 0.05, l_max: 0.98 }
    }
}

/// Boolean tissue grid over the working level, one cell per `downsample`² pixels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TissueMask {
    pub downsample: usize,
    /// Size of the raster the mask was computed on.
    pub level_width: usize,
    pub level_height: usize,
    cols: usize,
    rows: usize,
    cells: Vec<bool>,
}

impl TissueMask {
    pub fn from_cells(
        level_width: usize,
        level_height: usize,
        downsample: usize,
        cells: Vec<bool>,
    ) -> Self {
        let cols = level_width.div_ceil(downsample);
        let rows = level_height.div_ceil(downsample);
        assert_eq!(cells.len(), cols * rows, "cell count must match mask grid");
        Self { downsample, level_width, level_height, cols, rows, cells }
    }

    pub fn filled(level_width: usize, level_height: usize, downsample: usize, value: bool) -> Self {
        let cols = level_width.div_ceil(downsample);
        let rows = level_height.div_ceil(downsample);
        Self::from_cells(level_width, level_height, downsample, vec![value; cols * rows])
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cell(&self, cx: usize, cy: usize) -> bool {
        self.cells[cy * self.cols + cx]
    }

    /// Tissue flag at working-level pixel `(x, y)`.
    #[inline]
    pub fn at_pixel(&self, x: usize, y: usize) -> bool {
        self.cell(x / self.downsample, y / self.downsample)
    }

    pub fn tissue_cells(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }
}

/// HSV saturation and Rec.601 luma of one pixel, both in [0, 1].
#[inline]
pub(crate) fn saturation_luminance(p: [u8; 3]) -> (f64, f64) {
    let [r, g, b] = p;
    let max = r.max(g).max(b) as f64;
    let min = r.min(g).min(b) as f64;
    let sat = if max == 0.0 { 0.0 } else { (max - min) / max };
    let lum = (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64) / 255.0;
    (sat, lum)
}

/// Marks a cell as tissue when its mean saturation is at least `s_min` and its
/// mean luminance lies in `[l_min, l_max]`. Edge cells average over the pixels
/// they actually cover.
pub fn compute_tissue_mask(raster: &RgbRaster, params: &MaskParams) -> TissueMask {
    let ds = params.downsample.max(1);
    let (w, h) = (raster.width(), raster.height());
    let cols = w.div_ceil(ds);
    let rows = h.div_ceil(ds);
    let mut sat_sum = vec![0f64; cols * rows];
    let mut lum_sum = vec![0f64; cols * rows];
    let mut count = vec![0u32; cols * rows];
    for y in 0..h {
        let row = raster.row(y);
        let base = (y / ds) * cols;
        for x in 0..w {
            let (s, l) = saturation_luminance([row[x * 3], row[x * 3 + 1], row[x * 3 + 2]]);
            let c = base + x / ds;
            sat_sum[c] += s;
            lum_sum[c] += l;
            count[c] += 1;
        }
    }
    let cells = (0..cols * rows)
        .map(|c| {
            let n = count[c] as f64;
            let s = sat_sum[c] / n;
            let l = lum_sum[c] / n;
            s >= params.s_min && l >= params.l_min && l <= params.l_max
        })
        .collect();
    TissueMask { downsample: ds, level_width: w, level_height: h, cols, rows, cells }
}
