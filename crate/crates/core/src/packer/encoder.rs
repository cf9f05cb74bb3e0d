use std::path::PathBuf;
use std::time::Duration;

use base64::Engine as _;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{PackError, PatchRef, TokenGrid, GRID_SIDE, TOKENS_PER_PATCH};
use crate::http::{self, CallError, RetryPolicy};
use crate::raster::RgbRaster;
use crate::seeding::keyed_rng;
use crate::tiler::{PatchRecord, PATCH_SIZE};

pub const DEFAULT_EMBED_DIM: usize = 64;
const FEATURES: usize = 7;

/// Maps one patch to a 256-token grid.
pub trait Encoder: Send + Sync {
    fn dim(&self) -> usize;
    fn encode(&self, patch_ref: &PatchRef, pixels: &RgbRaster) -> Result<TokenGrid, PackError>;
}

/// Deterministic stand-in encoder. The patch is cut into a 16×16 grid of
/// cells; each cell's mean RGB, RGB standard deviation and mean gradient
/// magnitude are projected to `dim` values by a seeded matrix.
#[derive(Clone, Debug)]
pub struct ToyEncoder {
    patch_size: usize,
    dim: usize,
    projection: Vec<f64>,
}

impl ToyEncoder {
    pub fn new(dim: usize, seed: u64) -> Result<Self, PackError> {
        Self::with_patch_size(PATCH_SIZE, dim, seed)
    }

    /// Smaller patches keep tests fast; the size must split into 16 cells.
    pub fn with_patch_size(patch_size: usize, dim: usize, seed: u64) -> Result<Self, PackError> {
        if dim == 0 || patch_size == 0 || !patch_size.is_multiple_of(GRID_SIDE) {
            return Err(PackError::InvalidConfig(format!(
                "patch size {patch_size} must be a positive multiple of {GRID_SIDE} and dim {dim} positive"
            )));
        }
        let mut rng = keyed_rng(seed, &["toy_encoder", &dim.to_string()]);
        let projection = (0..dim * FEATURES).map(|_| rng.random_range(-1.0..1.0)).collect();
        Ok(Self { patch_size, dim, projection })
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    /// The seven per-cell statistics, cells in row-major order.
    pub fn cell_features(&self, pixels: &RgbRaster) -> Result<Vec<[f64; FEATURES]>, PackError> {
        let p = self.patch_size;
        if pixels.width() != p || pixels.height() != p {
            return Err(PackError::WrongPatchShape { expected: p, width: pixels.width(), height: pixels.height() });
        }
        let c = p / GRID_SIDE;
        let mut sums = vec![[0u64; 6]; TOKENS_PER_PATCH];
        let mut grad = vec![0f64; TOKENS_PER_PATCH];
        let gray_row = |y: usize, out: &mut Vec<i32>| {
            out.clear();
            out.extend(pixels.row(y).chunks_exact(3).map(|px| px[0] as i32 + px[1] as i32 + px[2] as i32));
        };
        let (mut gray, mut below) = (Vec::with_capacity(p), Vec::with_capacity(p));
        gray_row(0, &mut below);
        for y in 0..p {
            std::mem::swap(&mut gray, &mut below);
            // forward differences that stay inside the cell
            let inner_row = (y + 1) % c != 0;
            if y + 1 < p {
                gray_row(y + 1, &mut below);
            }
            let row = pixels.row(y);
            for cx in 0..GRID_SIDE {
                let cell = (y / c) * GRID_SIDE + cx;
                let (x0, x1) = (cx * c, (cx + 1) * c);
                let mut acc = [0u64; 6];
                for px in row[3 * x0..3 * x1].chunks_exact(3) {
                    for k in 0..3 {
                        let v = px[k] as u64;
                        acc[k] += v;
                        acc[3 + k] += v * v;
                    }
                }
                for (s, a) in sums[cell].iter_mut().zip(acc) {
                    *s += a;
                }
                if inner_row {
                    let mut g_sum = grad[cell];
                    for x in x0..x1 - 1 {
                        let dx = (gray[x + 1] - gray[x]) as f64;
                        let dy = (below[x] - gray[x]) as f64;
                        g_sum += (dx * dx + dy * dy).sqrt();
                    }
                    grad[cell] = g_sum;
                }
            }
        }
        let n = (c * c) as f64;
        let n_grad = ((c - 1) * (c - 1)).max(1) as f64;
        Ok(sums
            .iter()
            .zip(&grad)
            .map(|(s, g)| {
                let mut f = [0.0; FEATURES];
                for k in 0..3 {
                    let mean = s[k] as f64 / n;
                    let var = (s[3 + k] as f64 / n - mean * mean).max(0.0);
                    f[k] = mean / 255.0;
                    f[3 + k] = var.sqrt() / 255.0;
                }
                f[6] = g / n_grad / (3.0 * 255.0);
                f
            })
            .collect())
    }
}

impl Encoder for ToyEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, patch_ref: &PatchRef, pixels: &RgbRaster) -> Result<TokenGrid, PackError> {
        let features = self.cell_features(pixels)?;
        let mut values = Vec::with_capacity(TOKENS_PER_PATCH * self.dim);
        for f in &features {
            for row in self.projection.chunks_exact(FEATURES) {
                values.push(row.iter().zip(f).map(|(w, x)| w * x).sum());
            }
        }
        TokenGrid::new(patch_ref.clone(), self.dim, values)
    }
}

#[derive(Serialize)]
struct EncodeRequest<'a> {
    patch_id: &'a str,
    png_base64: String,
}

#[derive(Deserialize)]
struct EncodeResponse {
    tokens: Vec<Vec<f64>>,
}

/// Client for an external encoder: `POST /encode {patch_id, png_base64}`
/// answering `{tokens: [[f64; dim]; 256]}`.
#[derive(Clone, Debug)]
pub struct RemoteEncoder {
    url: String,
    dim: usize,
    agent: ureq::Agent,
    retry: RetryPolicy,
}

impl RemoteEncoder {
    pub fn new(base_url: &str, dim: usize, timeout: Duration, retry: RetryPolicy) -> Self {
        Self {
            url: format!("{}/encode", base_url.trim_end_matches('/')),
            dim,
            agent: http::agent(timeout),
            retry,
        }
    }
}

impl Encoder for RemoteEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, patch_ref: &PatchRef, pixels: &RgbRaster) -> Result<TokenGrid, PackError> {
        let png = pixels.encode_png()?;
        let body = EncodeRequest {
            patch_id: &patch_ref.id(),
            png_base64: base64::engine::general_purpose::STANDARD.encode(png),
        };
        let resp: EncodeResponse = http::with_retry(&self.retry, || http::post_json(&self.agent, &self.url, &body, None))
            .map_err(|e| PackError::Encoder {
                retryable: matches!(e, CallError::Retryable(_)),
                message: e.message().to_string(),
            })?;
        if resp.tokens.iter().any(|t| t.len() != self.dim) {
            return Err(PackError::DimMismatch { expected: self.dim });
        }
        TokenGrid::new(patch_ref.clone(), self.dim, resp.tokens.into_iter().flatten().collect())
    }
}

/// Supplies pixels for patches whose sequence holds only the index.
pub trait PatchLoader: Sync {
    fn load(&self, record: &PatchRecord) -> Result<RgbRaster, PackError>;
}

/// Reads `<root>/<slide_id>/patch_<row>_<col>.png` as written by the tiler.
#[derive(Clone, Debug)]
pub struct DirLoader {
    pub root: PathBuf,
}

impl PatchLoader for DirLoader {
    fn load(&self, record: &PatchRecord) -> Result<RgbRaster, PackError> {
        Ok(RgbRaster::load(&self.root.join(&record.slide_id).join(record.file_name()))?)
    }
}

/// Loader that fails on every call, for sequences that carry their pixels.
#[derive(Clone, Copy, Debug, Default)]
pub struct NoLoader;

impl PatchLoader for NoLoader {
    fn load(&self, record: &PatchRecord) -> Result<RgbRaster, PackError> {
        Err(PackError::MissingPixels(format!("{}/{}", record.slide_id, record.file_name())))
    }
}
