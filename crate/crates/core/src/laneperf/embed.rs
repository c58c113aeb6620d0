//! Image embedders: a pass-through for embeddings shipped in the records and
//! a small handcrafted embedder computed from the raw image.

use std::path::{Path, PathBuf};

use image::{DynamicImage, GenericImageView};

use crate::data::Sample;
use crate::error::{Error, Result};

/// Maps a sample to a fixed-length image embedding. Implementations must be
/// deterministic.
pub trait ImageEmbedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, sample: &Sample) -> Result<Vec<f64>>;
    /// Short tag recorded in weight files.
    fn kind(&self) -> &'static str;
}

/// Uses the `image_embedding` stored with each sample.
#[derive(Debug, Clone)]
pub struct PrecomputedEmbedder {
    dim: usize,
}

impl PrecomputedEmbedder {
    pub fn new(dim: usize) -> Self {
        PrecomputedEmbedder { dim }
    }
}

impl ImageEmbedder for PrecomputedEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, sample: &Sample) -> Result<Vec<f64>> {
        match &sample.image_embedding {
            Some(e) if e.len() == self.dim => Ok(e.clone()),
            Some(e) => Err(Error::dimension("image embedding", self.dim, e.len())),
            None => {
                log::warn!(
                    "sample `{}` has no image embedding; using the zero vector",
                    sample.sample_id
                );
                Ok(vec![0.0; self.dim])
            }
        }
    }

    fn kind(&self) -> &'static str {
        "precomputed"
    }
}

pub const GRID: usize = 8;
pub const HIST_BINS: usize = 8;
pub const BUILTIN_DIM: usize = GRID * GRID + 3 * HIST_BINS;

/// 8×8 mean-pooled grayscale thumbnail (64 values) followed by an 8-bin
/// histogram per RGB channel (24 values); each block is L2-normalized.
///
/// Image paths are resolved against `base_dir`. Samples without an image
/// fall back to a stored embedding of the same length, else to zeros.
#[derive(Debug, Clone)]
pub struct BuiltinEmbedder {
    base_dir: PathBuf,
}

impl BuiltinEmbedder {
    pub fn new(base_dir: impl Into<PathBuf>) -> Self {
        BuiltinEmbedder {
            base_dir: base_dir.into(),
        }
    }

    pub fn embed_path(&self, path: &Path) -> Result<Vec<f64>> {
        let img = image::open(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Ok(embed_image(&img))
    }
}

impl ImageEmbedder for BuiltinEmbedder {
    fn dim(&self) -> usize {
        BUILTIN_DIM
    }

    fn embed(&self, sample: &Sample) -> Result<Vec<f64>> {
        if let Some(r) = &sample.image_ref {
            return self.embed_path(&self.base_dir.join(r));
        }
        match &sample.image_embedding {
            Some(e) if e.len() == BUILTIN_DIM => Ok(e.clone()),
            Some(e) => Err(Error::dimension("image embedding", BUILTIN_DIM, e.len())),
            None => {
                log::warn!(
                    "sample `{}` has neither an image nor an embedding; using the zero vector",
                    sample.sample_id
                );
                Ok(vec![0.0; BUILTIN_DIM])
            }
        }
    }

    fn kind(&self) -> &'static str {
        "builtin"
    }
}

fn l2_normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

pub fn embed_image(img: &DynamicImage) -> Vec<f64> {
    let (w, h) = img.dimensions();
    let rgb = img.to_rgb8();
    let mut gray_sum = [0.0f64; GRID * GRID];
    let mut gray_n = [0u32; GRID * GRID];
    let mut hist = [0.0f64; 3 * HIST_BINS];
    for (x, y, px) in rgb.enumerate_pixels() {
        let cell = (y as usize * GRID / h as usize) * GRID + x as usize * GRID / w as usize;
        let [r, g, b] = px.0;
        gray_sum[cell] += (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64) / 255.0;
        gray_n[cell] += 1;
        for (c, v) in [r, g, b].into_iter().enumerate() {
            hist[c * HIST_BINS + v as usize * HIST_BINS / 256] += 1.0;
        }
    }
    let mut gray: Vec<f64> = gray_sum
        .iter()
        .zip(gray_n)
        .map(|(s, n)| if n > 0 { s / n as f64 } else { 0.0 })
        .collect();
    let total = (w as f64) * (h as f64);
    let mut hist: Vec<f64> = hist.iter().map(|c| c / total).collect();
    l2_normalize(&mut gray);
    l2_normalize(&mut hist);
    gray.extend(hist);
    gray
}
