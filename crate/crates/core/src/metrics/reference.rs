use crate::flow::{warp, FlowField};
use crate::imgcore::Frame;
use crate::{Error, Result};

/// Returned for identical frames instead of infinity.
pub const PSNR_CAP: f64 = 99.0;

pub fn mse(a: &Frame, b: &Frame) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// Peak signal-to-noise ratio in dB for unit dynamic range, capped at
/// [`PSNR_CAP`].
pub fn psnr(a: &Frame, b: &Frame) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP))
}

/// Mean over consecutive pairs of the squared error between frame `i`
/// warped by `flows[i]` and frame `i + 1`, over valid pixels and channels.
///
/// `flows[i]` maps pixels of frame `i + 1` to their source in frame `i`.
/// Pairs with no valid pixel are skipped; if every pair is skipped the
/// result is 0.
pub fn temporal_warp_error(frames: &[Frame], flows: &[FlowField]) -> Result<f64> {
    if frames.len() < 2 {
        return Err(Error::Empty("temporal error needs at least two frames".into()));
    }
    if flows.len() != frames.len() - 1 {
        return Err(Error::Shape(format!("{} flows for {} frames", flows.len(), frames.len())));
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for (pair, flow) in frames.windows(2).zip(flows) {
        pair[0].ensure_same_shape(&pair[1])?;
        let (warped, mask) = warp(&pair[0], flow)?;
        let valid = mask.count();
        if valid == 0 {
            continue;
        }
        let mut sum = 0.0;
        for (p, &ok) in mask.data().iter().enumerate() {
            if ok {
                for c in 0..3 {
                    let d = warped.data()[p * 3 + c] as f64 - pair[1].data()[p * 3 + c] as f64;
                    sum += d * d;
                }
            }
        }
        total += sum / (3 * valid) as f64;
        pairs += 1;
    }
    Ok(if pairs == 0 { 0.0 } else { total / pairs as f64 })
}
