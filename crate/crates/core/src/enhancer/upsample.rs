use candle_core::Tensor;

use crate::nn::ParamStore;
use crate::{Error, Result};

/// Gathers, along `axis` of the border-padded input, the low and high source
/// taps of every output position for integer upscaling by `scale` with
/// half-pixel centres. `len` is the unpadded length.
///
/// Phases left of the pixel centre read padded taps `(m, m + 1)`, the others
/// `(m + 1, m + 2)`, so both results are built from shifted views rather
/// than an index gather (whose backward pass is slow).
fn expand_axis(padded: &Tensor, axis: usize, len: usize, scale: usize) -> Result<(Tensor, Tensor)> {
    let left = (0..scale).filter(|&p| phase_offset(p, scale) < 0.0).count();
    let mut shape = padded.dims().to_vec();
    shape[axis] = len;
    let spread = |shift: usize, copies: usize| -> Result<Option<Tensor>> {
        if copies == 0 {
            return Ok(None);
        }
        let mut s = shape.clone();
        s.insert(axis + 1, copies);
        Ok(Some(padded.narrow(axis, shift, len)?.unsqueeze(axis + 1)?.broadcast_as(s)?))
    };
    let mut out_shape = shape.clone();
    out_shape[axis] = len * scale;
    let build = |first: usize| -> Result<Tensor> {
        let parts: Vec<Tensor> = [spread(first, left)?, spread(first + 1, scale - left)?]
            .into_iter()
            .flatten()
            .collect();
        Ok(Tensor::cat(&parts, axis + 1)?.reshape(out_shape.as_slice())?)
    };
    Ok((build(0)?, build(1)?))
}

fn phase_offset(p: usize, scale: usize) -> f64 {
    (p as f64 + 0.5) / scale as f64 - 0.5
}

/// Standard bilinear weights `(w_lo, w_hi)` for output phase `p`.
fn phase_weights(p: usize, scale: usize) -> (f64, f64) {
    let d = phase_offset(p, scale);
    if d < 0.0 {
        (-d, 1.0 + d)
    } else {
        (1.0 - d, d)
    }
}

/// Bilinear upsampling by an integer factor whose four corner weights are
/// learnable per channel and per output phase `(y mod s, x mod s)`.
///
/// Initialised to plain bilinear interpolation with half-pixel centres and
/// border clamping.
#[derive(Clone, Debug)]
pub struct LearnableUpsample {
    /// `(4, C, s, s)`; corner order `(lo,lo), (lo,hi), (hi,lo), (hi,hi)` as
    /// `(row, column)`.
    weights: Tensor,
    channels: usize,
    scale: usize,
}

impl LearnableUpsample {
    pub fn new(ps: &mut ParamStore, name: &str, channels: usize, scale: usize) -> Result<Self> {
        if scale == 0 {
            return Err(Error::Parameter("upsampling scale must be >= 1".into()));
        }
        let mut init = Vec::with_capacity(4 * channels * scale * scale);
        for corner in 0..4 {
            for _ in 0..channels {
                for py in 0..scale {
                    for px in 0..scale {
                        let (ylo, yhi) = phase_weights(py, scale);
                        let (xlo, xhi) = phase_weights(px, scale);
                        let wy = if corner < 2 { ylo } else { yhi };
                        let wx = if corner % 2 == 0 { xlo } else { xhi };
                        init.push(wy * wx);
                    }
                }
            }
        }
        let weights = ps.from_values(&format!("{name}.weights"), &[4, channels, scale, scale], init)?;
        Ok(Self {
            weights,
            channels,
            scale,
        })
    }

    pub fn scale(&self) -> usize {
        self.scale
    }

    /// `(B, C, h, w) -> (B, C, h*s, w*s)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = x.dims4()?;
        if c != self.channels {
            return Err(Error::Shape(format!("upsample expects {} channels, got {c}", self.channels)));
        }
        let s = self.scale;
        let (oh, ow) = (h * s, w * s);
        let padded = x.pad_with_same(2, 1, 1)?.pad_with_same(3, 1, 1)?;
        let (rlo, rhi) = expand_axis(&padded, 2, h, s)?;
        let (lolo, lohi) = expand_axis(&rlo, 3, w, s)?;
        let (hilo, hihi) = expand_axis(&rhi, 3, w, s)?;
        let mut acc: Option<Tensor> = None;
        for (corner, g) in [lolo, lohi, hilo, hihi].into_iter().enumerate() {
            let wt = self
                .weights
                .get(corner)?
                .to_dtype(x.dtype())?
                .reshape((1, c, 1, s, 1, s))?
                .broadcast_as((1, c, h, s, w, s))?
                .reshape((1, c, oh, ow))?;
            let term = g.broadcast_mul(&wt)?;
            acc = Some(match acc {
                None => term,
                Some(a) => (a + term)?,
            });
        }
        Ok(acc.expect("four corners"))
    }
}
