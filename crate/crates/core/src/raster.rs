//! In-memory 8-bit RGB rasters and the area-average resampler.

use std::path::Path;

use image::{ImageFormat, RgbImage};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("failed to read raster {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("failed to write raster {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("pixel buffer of {len} bytes does not match {width}x{height} RGB")]
    BufferSize { width: usize, height: usize, len: usize },
    #[error("png encoding failed: {0}")]
    Encode(image::ImageError),
}

/// Row-major interleaved RGB, 3 bytes per pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbRaster {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbRaster {
    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self { width, height, data }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self, RasterError> {
        if data.len() != width * height * 3 {
            return Err(RasterError::BufferSize { width, height, len: data.len() });
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// One pixel row as a byte slice.
    #[inline]
    pub fn row(&self, y: usize) -> &[u8] {
        let stride = self.width * 3;
        &self.data[y * stride..(y + 1) * stride]
    }

    /// Copies out a `w`x`h` window at `(x0, y0)`; pixels outside the raster take `pad`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize, pad: [u8; 3]) -> RgbRaster {
        let mut out = RgbRaster::filled(w, h, pad);
        let x_end = (x0 + w).min(self.width);
        let y_end = (y0 + h).min(self.height);
        if x0 >= x_end || y0 >= y_end {
            return out;
        }
        let span = (x_end - x0) * 3;
        for y in y0..y_end {
            let src = &self.row(y)[x0 * 3..x0 * 3 + span];
            let dst_start = (y - y0) * w * 3;
            out.data[dst_start..dst_start + span].copy_from_slice(src);
        }
        out
    }

    /// Reads a PNG or PPM file, converting to 8-bit RGB.
    pub fn load(path: &Path) -> Result<Self, RasterError> {
        let img = image::open(path).map_err(|source| RasterError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        Ok(Self { width: w as usize, height: h as usize, data: rgb.into_raw() })
    }

    /// Writes the raster; the format follows the file extension.
    pub fn save(&self, path: &Path) -> Result<(), RasterError> {
        self.to_image().save(path).map_err(|source| RasterError::Write {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn encode_png(&self) -> Result<Vec<u8>, RasterError> {
        let mut buf = std::io::Cursor::new(Vec::new());
        self.to_image()
            .write_to(&mut buf, ImageFormat::Png)
            .map_err(RasterError::Encode)?;
        Ok(buf.into_inner())
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Self, RasterError> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png).map_err(|source| {
            RasterError::Read { path: "<memory>".into(), source }
        })?;
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        Ok(Self { width: w as usize, height: h as usize, data: rgb.into_raw() })
    }

    fn to_image(&self) -> RgbImage {
        RgbImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .expect("buffer length checked at construction")
    }

    /// Area-average (box filter) downsampling by a real factor `>= 1`.
    ///
    /// Output dimensions are `floor(dim / factor)`. Each output pixel is the
    /// coverage-weighted mean of the source pixels under its footprint
    /// `[x*factor, (x+1)*factor)`. A factor of 1 returns a copy.
    pub fn downsample_area(&self, factor: f64) -> RgbRaster {
        assert!(factor >= 1.0 && factor.is_finite(), "downsample factor must be >= 1");
        if (factor - 1.0).abs() < 1e-12 {
            return self.clone();
        }
        let out_w = (self.width as f64 / factor).floor() as usize;
        let out_h = (self.height as f64 / factor).floor() as usize;
        let col_weights = footprint_weights(out_w, factor);
        let row_weights = footprint_weights(out_h, factor);

        // horizontal pass: out_w x height, f64 channels
        let mut horiz = vec![0f64; out_w * self.height * 3];
        for y in 0..self.height {
            let row = self.row(y);
            for (ox, taps) in col_weights.iter().enumerate() {
                let mut acc = [0f64; 3];
                for &(sx, w) in taps {
                    for c in 0..3 {
                        acc[c] += w * row[sx * 3 + c] as f64;
                    }
                }
                let o = (y * out_w + ox) * 3;
                for c in 0..3 {
                    horiz[o + c] = acc[c] / factor;
                }
            }
        }

        let mut data = vec![0u8; out_w * out_h * 3];
        for (oy, taps) in row_weights.iter().enumerate() {
            for ox in 0..out_w {
                let mut acc = [0f64; 3];
                for &(sy, w) in taps {
                    let i = (sy * out_w + ox) * 3;
                    for c in 0..3 {
                        acc[c] += w * horiz[i + c];
                    }
                }
                let o = (oy * out_w + ox) * 3;
                for c in 0..3 {
                    data[o + c] = (acc[c] / factor).round().clamp(0.0, 255.0) as u8;
                }
            }
        }
        RgbRaster { width: out_w, height: out_h, data }
    }
}

/// For each output index, the source indices it overlaps and the overlap length.
fn footprint_weights(out_len: usize, factor: f64) -> Vec<Vec<(usize, f64)>> {
    (0..out_len)
        .map(|o| {
            let start = o as f64 * factor;
            let end = (o + 1) as f64 * factor;
            let first = start.floor() as usize;
            let last = end.ceil() as usize;
            (first..last)
                .filter_map(|s| {
                    let w = (end.min((s + 1) as f64) - start.max(s as f64)).max(0.0);
                    (w > 1e-12).then_some((s, w))
                })
                .collect()
        })
        .collect()
}
