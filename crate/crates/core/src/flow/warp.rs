//! Bilinear backward warping `W(src, U)(p) = src(p + U(p))`.
//!
//! Samples falling outside the source are clamped to the border and marked
//! invalid in the returned mask.

use candle_core::{DType, Tensor};

use super::field::{FlowField, ValidityMask};
use crate::imgcore::Frame;
use crate::{Error, Result};

/// Bilinear taps for one output pixel: flat source indices and weights.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Taps {
    pub idx: [usize; 4],
    pub w: [f64; 4],
    pub valid: bool,
}

#[inline]
pub(crate) fn taps(y: usize, x: usize, du: f32, dv: f32, height: usize, width: usize) -> Taps {
    let sx = x as f64 + du as f64;
    let sy = y as f64 + dv as f64;
    let max_x = (width - 1) as f64;
    let max_y = (height - 1) as f64;
    let valid = (0.0..=max_x).contains(&sx) && (0.0..=max_y).contains(&sy);
    let cx = sx.clamp(0.0, max_x);
    let cy = sy.clamp(0.0, max_y);
    let x0 = cx.floor() as usize;
    let y0 = cy.floor() as usize;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let fx = cx - x0 as f64;
    let fy = cy - y0 as f64;
    Taps {
        idx: [y0 * width + x0, y0 * width + x1, y1 * width + x0, y1 * width + x1],
        w: [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy],
        valid,
    }
}

fn check_shape(h: usize, w: usize, flow: &FlowField) -> Result<()> {
    if flow.dims() != (h, w) {
        return Err(Error::Shape(format!(
            "flow {}x{} vs image {h}x{w}",
            flow.height(),
            flow.width()
        )));
    }
    Ok(())
}

pub fn warp(src: &Frame, flow: &FlowField) -> Result<(Frame, ValidityMask)> {
    let (h, w) = src.dims();
    check_shape(h, w, flow)?;
    let mut out = Vec::with_capacity(h * w * 3);
    let mut mask = Vec::with_capacity(h * w);
    let data = src.data();
    for y in 0..h {
        for x in 0..w {
            let (du, dv) = flow.get(y, x);
            let t = taps(y, x, du, dv, h, w);
            mask.push(t.valid);
            for c in 0..3 {
                let v: f64 = (0..4).map(|k| t.w[k] * data[t.idx[k] * 3 + c] as f64).sum();
                out.push(v as f32);
            }
        }
    }
    Ok((Frame::from_clamped(h, w, out)?, ValidityMask::from_vec(h, w, mask)))
}

/// Differentiable (w.r.t. `src`) warp of a `(B, C, H, W)` batch, one flow per
/// batch element.
pub fn warp_tensor(src: &Tensor, flows: &[&FlowField]) -> Result<(Tensor, Vec<ValidityMask>)> {
    let (b, c, h, w) = src.dims4()?;
    if flows.len() != b {
        return Err(Error::Shape(format!("{} flows for a batch of {b}", flows.len())));
    }
    let device = src.device();
    let mut outs = Vec::with_capacity(b);
    let mut masks = Vec::with_capacity(b);
    for (i, flow) in flows.iter().enumerate() {
        check_shape(h, w, flow)?;
        let n = h * w;
        let mut idx = vec![vec![0u32; n]; 4];
        let mut wts = vec![vec![0f64; n]; 4];
        let mut mask = Vec::with_capacity(n);
        for y in 0..h {
            for x in 0..w {
                let (du, dv) = flow.get(y, x);
                let t = taps(y, x, du, dv, h, w);
                let p = y * w + x;
                for k in 0..4 {
                    idx[k][p] = t.idx[k] as u32;
                    wts[k][p] = t.w[k];
                }
                mask.push(t.valid);
            }
        }
        let flat = src.get(i)?.reshape((c, n))?;
        let mut acc: Option<Tensor> = None;
        for k in 0..4 {
            let ids = Tensor::from_vec(idx[k].clone(), n, device)?;
            let wk = Tensor::from_vec(wts[k].clone(), (1, n), device)?.to_dtype(src.dtype())?;
            let term = flat.index_select(&ids, 1)?.broadcast_mul(&wk)?;
            acc = Some(match acc {
                None => term,
                Some(a) => (a + term)?,
            });
        }
        outs.push(acc.expect("four taps").reshape((c, h, w))?);
        masks.push(ValidityMask::from_vec(h, w, mask));
    }
    Ok((Tensor::stack(&outs, 0)?, masks))
}

/// `(B, 1, H, W)` tensor of 0/1 from validity masks.
pub fn masks_to_tensor(masks: &[ValidityMask], dtype: DType, device: &candle_core::Device) -> Result<Tensor> {
    let first = masks.first().ok_or_else(|| Error::Empty("no masks".into()))?;
    let (h, w) = (first.height(), first.width());
    let mut data = Vec::with_capacity(masks.len() * h * w);
    for m in masks {
        data.extend(m.data().iter().map(|&v| if v { 1f32 } else { 0.0 }));
    }
    Ok(Tensor::from_vec(data, (masks.len(), 1, h, w), device)?.to_dtype(dtype)?)
}
