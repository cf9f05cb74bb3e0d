//! Turns per-slide patch sequences into one ordered context of pooled patch
//! tokens per part, with the label prompt and a token budget.

mod encoder;

pub use encoder::{DirLoader, Encoder, NoLoader, PatchLoader, RemoteEncoder, ToyEncoder, DEFAULT_EMBED_DIM};

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::RasterError;
use crate::tiler::{Patch, PatchSequence};

pub const TOKENS_PER_PATCH: usize = 256;
pub const GRID_SIDE: usize = 16;
pub const DEFAULT_TOKEN_LIMIT: usize = 1_000_000;

#[derive(Debug, Error)]
pub enum PackError {
    #[error("patch is {width}x{height}, expected {expected}x{expected}")]
    WrongPatchShape { expected: usize, width: usize, height: usize },
    #[error("token grid has {got} rows, expected 256")]
    WrongTokenCount { got: usize },
    #[error("token width does not match encoder dimension {expected}")]
    DimMismatch { expected: usize },
    #[error("non-finite token value in {0}")]
    NonFinite(String),
    #[error("context needs {used} tokens, limit is {limit}")]
    BudgetExceeded { used: usize, limit: usize },
    #[error("part {0} has no patches in any sampled slide")]
    EmptyContext(String),
    #[error("no patch sequence for slide {0}")]
    MissingSlide(String),
    #[error("no pixels available for patch {0}")]
    MissingPixels(String),
    #[error("encoder failed: {message}")]
    Encoder { retryable: bool, message: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl PackError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, PackError::Encoder { retryable: true, .. })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PatchRef {
    pub slide_id: String,
    pub row: usize,
    pub col: usize,
}

impl PatchRef {
    pub fn id(&self) -> String {
        format!("{}/{}_{}", self.slide_id, self.row, self.col)
    }
}

/// 256 tokens of width `dim`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenGrid {
    pub patch_ref: PatchRef,
    dim: usize,
    values: Vec<f64>,
}

impl TokenGrid {
    pub fn new(patch_ref: PatchRef, dim: usize, values: Vec<f64>) -> Result<Self, PackError> {
        if dim == 0 || !values.len().is_multiple_of(dim) {
            return Err(PackError::DimMismatch { expected: dim });
        }
        if values.len() / dim != TOKENS_PER_PATCH {
            return Err(PackError::WrongTokenCount { got: values.len() / dim });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(PackError::NonFinite(patch_ref.id()));
        }
        Ok(Self { patch_ref, dim, values })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn token(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn tokens(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PooledToken {
    pub patch_ref: PatchRef,
    pub vector: Vec<f64>,
}

/// Componentwise mean of the 256 tokens, accumulated with Neumaier
/// compensation so the result does not depend on token order beyond rounding.
pub fn pool_tokens(grid: &TokenGrid) -> Result<PooledToken, PackError> {
    let d = grid.dim();
    let mut sum = vec![0.0f64; d];
    let mut comp = vec![0.0f64; d];
    for token in grid.tokens() {
        for j in 0..d {
            let x = token[j];
            let t = sum[j] + x;
            comp[j] += if sum[j].abs() >= x.abs() { (sum[j] - t) + x } else { (x - t) + sum[j] };
            sum[j] = t;
        }
    }
    let n = TOKENS_PER_PATCH as f64;
    let vector: Vec<f64> = sum.iter().zip(&comp).map(|(s, c)| (s + c) / n).collect();
    if vector.iter().any(|v| !v.is_finite()) {
        return Err(PackError::NonFinite(grid.patch_ref.id()));
    }
    Ok(PooledToken { patch_ref: grid.patch_ref.clone(), vector })
}

pub fn encode_patch(patch: &Patch, encoder: &dyn Encoder, loader: &dyn PatchLoader) -> Result<TokenGrid, PackError> {
    let r = &patch.record;
    let patch_ref = PatchRef { slide_id: r.slide_id.clone(), row: r.row, col: r.col };
    match &patch.pixels {
        Some(px) => encoder.encode(&patch_ref, px),
        None => encoder.encode(&patch_ref, &loader.load(r)?),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    pub used: usize,
    pub limit: usize,
}

/// Model input for one part. Tokens run slide by slide in sampled order,
/// row-major within each slide.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PackedContext {
    pub part_id: String,
    pub prompt_text: String,
    pub slide_ids: Vec<String>,
    pub tokens: Vec<PooledToken>,
    /// Offset of each slide's first token in `tokens`.
    pub slide_boundaries: Vec<usize>,
    pub budget: Budget,
}

/// Whitespace-token count, the text share of the budget.
pub fn estimate_text_tokens(text: &str) -> usize {
    text.split_whitespace().count()
}

pub fn estimate_tokens(packed: &PackedContext) -> usize {
    packed.tokens.len() + estimate_text_tokens(&packed.prompt_text)
}

/// Checks the budget for `n_patches` before any encoding work happens.
pub fn check_budget(n_patches: usize, prompt: &str, limit: usize) -> Result<Budget, PackError> {
    let used = n_patches + estimate_text_tokens(prompt);
    if used > limit {
        return Err(PackError::BudgetExceeded { used, limit });
    }
    Ok(Budget { used, limit })
}

pub fn pack_part(
    part_id: &str,
    sampled_slides: &[String],
    per_slide: &BTreeMap<String, PatchSequence>,
    label: &str,
    limit: usize,
    encoder: &dyn Encoder,
    loader: &dyn PatchLoader,
) -> Result<PackedContext, PackError> {
    if limit == 0 {
        return Err(PackError::InvalidConfig("token limit must be at least 1".into()));
    }
    let mut seqs = Vec::with_capacity(sampled_slides.len());
    for id in sampled_slides {
        seqs.push(per_slide.get(id).ok_or_else(|| PackError::MissingSlide(id.clone()))?);
    }
    let mut slide_boundaries = Vec::with_capacity(seqs.len());
    let mut total = 0;
    for s in &seqs {
        slide_boundaries.push(total);
        total += s.len();
    }
    if total == 0 {
        return Err(PackError::EmptyContext(part_id.to_string()));
    }
    let budget = check_budget(total, label, limit)?;

    let patches: Vec<&Patch> = seqs.iter().flat_map(|s| s.patches.iter()).collect();
    let tokens = patches
        .par_iter()
        .map(|p| encode_patch(p, encoder, loader).and_then(|g| pool_tokens(&g)))
        .collect::<Result<Vec<_>, _>>()?;
    if tokens.iter().any(|t| t.vector.len() != encoder.dim()) {
        return Err(PackError::DimMismatch { expected: encoder.dim() });
    }
    Ok(PackedContext {
        part_id: part_id.to_string(),
        prompt_text: label.to_string(),
        slide_ids: sampled_slides.to_vec(),
        tokens,
        slide_boundaries,
        budget,
    })
}

#[derive(Serialize)]
struct PackedExport<'a> {
    part_id: &'a str,
    prompt: &'a str,
    tokens: Vec<&'a [f64]>,
    slide_boundaries: &'a [usize],
}

impl PackedContext {
    pub fn n_slides(&self) -> usize {
        self.slide_ids.len()
    }

    pub fn n_patches(&self) -> usize {
        self.tokens.len()
    }

    /// Plain JSON `{part_id, prompt, tokens, slide_boundaries}`.
    pub fn export_json(&self, path: &Path) -> Result<(), PackError> {
        let export = PackedExport {
            part_id: &self.part_id,
            prompt: &self.prompt_text,
            tokens: self.tokens.iter().map(|t| t.vector.as_slice()).collect(),
            slide_boundaries: &self.slide_boundaries,
        };
        let io = |source| PackError::Io { path: path.display().to_string(), source };
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        serde_json::to_writer(&mut f, &export).expect("export serializes");
        f.flush().map_err(io)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::RgbRaster;
    use crate::tiler::PatchRecord;

    const P: usize = 64;

    fn patch(slide: &str, row: usize, col: usize, px: RgbRaster) -> Patch {
        Patch {
            record: PatchRecord {
                slide_id: slide.into(),
                row,
                col,
                origin: (col * P, row * P),
                size: P,
                tissue_fraction: 1.0,
            },
            pixels: Some(px),
        }
    }

    fn noisy(seed: u32) -> RgbRaster {
        RgbRaster::from_fn(P, P, |x, y| {
            let h = (x as u32).wrapping_mul(2654435761) ^ (y as u32).wrapping_mul(40503) ^ seed.wrapping_mul(97);
            [(h % 251) as u8, (h / 7 % 253) as u8, (h / 13 % 256) as u8]
        })
    }

    fn encoder() -> ToyEncoder {
        ToyEncoder::with_patch_size(P, 8, 3).unwrap()
    }

    fn r(slide: &str) -> PatchRef {
        PatchRef { slide_id: slide.into(), row: 0, col: 0 }
    }

    #[test]
    fn constant_patch_gives_identical_tokens() {
        let g = encoder().encode(&r("s"), &RgbRaster::filled(P, P, [200, 120, 180])).unwrap();
        let first = g.token(0).to_vec();
        assert!(g.tokens().all(|t| t == first.as_slice()));
    }

    #[test]
    fn encoding_is_deterministic() {
        let e = encoder();
        assert_eq!(e.encode(&r("s"), &noisy(1)).unwrap(), e.encode(&r("s"), &noisy(1)).unwrap());
    }

    #[test]
    fn change_in_one_cell_changes_one_token() {
        let e = encoder();
        let a = noisy(5);
        let mut b = a.clone();
        let c = P / GRID_SIDE;
        // cell (row 3, col 9)
        for y in 3 * c..4 * c {
            for x in 9 * c..10 * c {
                b.set_pixel(x, y, [0, 0, 0]);
            }
        }
        let (ga, gb) = (e.encode(&r("s"), &a).unwrap(), e.encode(&r("s"), &b).unwrap());
        let changed: Vec<usize> = (0..TOKENS_PER_PATCH).filter(|&i| ga.token(i) != gb.token(i)).collect();
        assert_eq!(changed, vec![3 * GRID_SIDE + 9]);
    }

    #[test]
    fn wrong_shape_rejected() {
        assert!(matches!(
            encoder().encode(&r("s"), &RgbRaster::filled(P, P + 1, [0; 3])),
            Err(PackError::WrongPatchShape { .. })
        ));
        assert!(ToyEncoder::with_patch_size(100, 8, 0).is_err());
    }

    #[test]
    fn pooling_all_ones() {
        let g = TokenGrid::new(r("s"), 4, vec![1.0; 256 * 4]).unwrap();
        assert_eq!(pool_tokens(&g).unwrap().vector, vec![1.0; 4]);
        assert!(TokenGrid::new(r("s"), 4, vec![1.0; 255 * 4]).is_err());
        let mut bad = vec![0.0; 256 * 4];
        bad[17] = f64::NAN;
        assert!(matches!(TokenGrid::new(r("s"), 4, bad), Err(PackError::NonFinite(_))));
    }

    fn two_by_two() -> (Vec<String>, BTreeMap<String, PatchSequence>) {
        let mut per_slide = BTreeMap::new();
        for (k, s) in ["s1", "s2"].iter().enumerate() {
            let seq = PatchSequence::new(
                *s,
                vec![patch(s, 0, 0, noisy(k as u32 * 2)), patch(s, 0, 1, noisy(k as u32 * 2 + 1))],
            )
            .unwrap();
            per_slide.insert(s.to_string(), seq);
        }
        (vec!["s1".into(), "s2".into()], per_slide)
    }

    #[test]
    fn packs_in_slide_then_row_major_order() {
        let (slides, per_slide) = two_by_two();
        let ctx = pack_part("p", &slides, &per_slide, "skin, biopsy", 100, &encoder(), &NoLoader).unwrap();
        let order: Vec<_> = ctx.tokens.iter().map(|t| (t.patch_ref.slide_id.as_str(), t.patch_ref.row, t.patch_ref.col)).collect();
        assert_eq!(order, vec![("s1", 0, 0), ("s1", 0, 1), ("s2", 0, 0), ("s2", 0, 1)]);
        assert_eq!(ctx.slide_boundaries, vec![0, 2]);
        assert_eq!(ctx.budget, Budget { used: 6, limit: 100 });
        assert_eq!(estimate_tokens(&ctx), 6);
    }

    #[test]
    fn empty_and_over_budget() {
        let mut per_slide = BTreeMap::new();
        per_slide.insert("s".to_string(), PatchSequence::empty("s"));
        let slides = vec!["s".to_string()];
        assert!(matches!(
            pack_part("p", &slides, &per_slide, "x", 10, &encoder(), &NoLoader),
            Err(PackError::EmptyContext(_))
        ));
        let many: Vec<Patch> = (0..11).map(|c| patch("s", 0, c, RgbRaster::filled(P, P, [1, 2, 3]))).collect();
        per_slide.insert("s".to_string(), PatchSequence::new("s", many).unwrap());
        assert!(matches!(
            pack_part("p", &slides, &per_slide, "", 10, &encoder(), &NoLoader),
            Err(PackError::BudgetExceeded { used: 11, limit: 10 })
        ));
        assert!(matches!(
            pack_part("p", &["t".to_string()], &per_slide, "", 10, &encoder(), &NoLoader),
            Err(PackError::MissingSlide(_))
        ));
    }

    #[test]
    fn budget_estimates() {
        assert_eq!(check_budget(276, "", DEFAULT_TOKEN_LIMIT).unwrap().used, 276);
        assert_eq!(check_budget(0, "one two three four five", DEFAULT_TOKEN_LIMIT).unwrap().used, 5);
        assert_eq!(check_budget(41_000, "colon, biopsy", DEFAULT_TOKEN_LIMIT).unwrap().used, 41_002);
    }

    #[test]
    fn export_shape() {
        let (slides, per_slide) = two_by_two();
        let ctx = pack_part("p", &slides, &per_slide, "skin", 100, &encoder(), &NoLoader).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        ctx.export_json(&path).unwrap();
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(v["prompt"], "skin");
        assert_eq!(v["tokens"].as_array().unwrap().len(), 4);
        assert_eq!(v["tokens"][0].as_array().unwrap().len(), 8);
        assert_eq!(v["slide_boundaries"], serde_json::json!([0, 2]));
    }

    #[test]
    fn loader_supplies_missing_pixels() {
        let (slides, mut per_slide) = two_by_two();
        let with_px = pack_part("p", &slides, &per_slide, "x", 100, &encoder(), &NoLoader).unwrap();
        let dir = tempfile::tempdir().unwrap();
        for seq in per_slide.values_mut() {
            crate::tiler::write_patch_sequence(seq, dir.path()).unwrap();
            for p in &mut seq.patches {
                p.pixels = None;
            }
        }
        let loader = DirLoader { root: dir.path().to_path_buf() };
        let from_disk = pack_part("p", &slides, &per_slide, "x", 100, &encoder(), &loader).unwrap();
        assert_eq!(with_px, from_disk);
        assert!(matches!(
            pack_part("p", &slides, &per_slide, "x", 100, &encoder(), &NoLoader),
            Err(PackError::MissingPixels(_))
        ));
    }
}
