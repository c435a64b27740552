//! Curation of prior-training crops by luma-histogram uniformity.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::imgcore::io::list_frames;
use crate::imgcore::{load_frame, Frame};
use crate::{Error, Result};

pub const HIST_BINS: usize = 32;

/// Normalised luma histogram over [`HIST_BINS`] equal bins of `[0, 1]`.
pub fn luma_histogram(frame: &Frame) -> [f64; HIST_BINS] {
    let mut h = [0.0; HIST_BINS];
    let luma = frame.luma();
    for l in &luma {
        let b = ((l * HIST_BINS as f64).floor().max(0.0) as usize).min(HIST_BINS - 1);
        h[b] += 1.0;
    }
    let n = luma.len() as f64;
    h.iter_mut().for_each(|v| *v /= n);
    h
}

/// Negative L1 distance between the luma histogram and the uniform one:
/// 0 for a perfectly flat histogram, `-2 (1 - 1/32)` for a constant crop.
pub fn uniformity_score(frame: &Frame) -> f64 {
    let u = 1.0 / HIST_BINS as f64;
    -luma_histogram(frame).iter().map(|p| (p - u).abs()).sum::<f64>()
}

#[derive(Clone, Debug)]
pub struct CropSelection {
    /// Kept crops, best first, with their scores.
    pub selected: Vec<(Frame, f64)>,
    pub rejected_scores: Vec<f64>,
}

impl CropSelection {
    pub fn crops(&self) -> Vec<Frame> {
        self.selected.iter().map(|(f, _)| f.clone()).collect()
    }
}

/// Draws `per_image` random crops from every image large enough, scores
/// them and keeps the best `ceil(fraction * n)`.
pub fn select_crops_from(
    images: &[Frame],
    crop_size: usize,
    fraction: f64,
    per_image: usize,
    seed: u64,
) -> Result<CropSelection> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Parameter(format!("fraction must be in (0, 1], got {fraction}")));
    }
    if crop_size == 0 || per_image == 0 {
        return Err(Error::Parameter("crop size and crops per image must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scored = Vec::new();
    for img in images {
        let (h, w) = img.dims();
        if h < crop_size || w < crop_size {
            continue;
        }
        for _ in 0..per_image {
            let top = rng.random_range(0..=h - crop_size);
            let left = rng.random_range(0..=w - crop_size);
            let c = img.crop(top, left, crop_size, crop_size)?;
            let s = uniformity_score(&c);
            scored.push((c, s));
        }
    }
    if scored.is_empty() {
        return Err(Error::Empty(format!("no image of at least {crop_size}x{crop_size}")));
    }
    // Stable sort keeps draw order among ties.
    scored.sort_by(|a, b| b.1.total_cmp(&a.1));
    let keep = ((fraction * scored.len() as f64).ceil() as usize).clamp(1, scored.len());
    let rejected_scores = scored[keep..].iter().map(|(_, s)| *s).collect();
    scored.truncate(keep);
    Ok(CropSelection {
        selected: scored,
        rejected_scores,
    })
}

pub fn select_training_crops(
    corpus_dir: &Path,
    crop_size: usize,
    fraction: f64,
    per_image: usize,
    seed: u64,
) -> Result<CropSelection> {
    let paths = list_frames(corpus_dir)?;
    if paths.is_empty() {
        return Err(Error::Empty(format!("no images in {}", corpus_dir.display())));
    }
    let images = paths.iter().map(load_frame).collect::<Result<Vec<_>>>()?;
    select_crops_from(&images, crop_size, fraction, per_image, seed)
}
