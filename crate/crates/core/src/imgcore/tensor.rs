use candle_core::{DType, Device, Tensor};

use super::frame::Frame;
use crate::{Error, Result};

/// `(1, 3, H, W)` tensor.
pub fn frame_to_tensor(frame: &Frame, dtype: DType, device: &Device) -> Result<Tensor> {
    let t = Tensor::from_slice(frame.data(), (frame.height(), frame.width(), 3), device)?
        .permute((2, 0, 1))?
        .unsqueeze(0)?
        .to_dtype(dtype)?
        .contiguous()?;
    Ok(t)
}

/// `(B, 3, H, W)` tensor; all frames must share a shape.
pub fn frames_to_tensor(frames: &[&Frame], dtype: DType, device: &Device) -> Result<Tensor> {
    let first = frames.first().ok_or_else(|| Error::Empty("no frames to batch".into()))?;
    let parts = frames
        .iter()
        .map(|f| {
            f.ensure_same_shape(first)?;
            frame_to_tensor(f, dtype, device)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Tensor::cat(&parts, 0)?)
}

/// Accepts `(3, H, W)` or `(1, 3, H, W)`; values are clamped into `[0, 1]`.
pub fn tensor_to_frame(t: &Tensor) -> Result<Frame> {
    let t = match t.rank() {
        3 => t.clone(),
        4 if t.dim(0)? == 1 => t.squeeze(0)?,
        _ => return Err(Error::Shape(format!("expected (3,H,W) or (1,3,H,W), got {:?}", t.dims()))),
    };
    let (c, h, w) = t.dims3()?;
    if c != 3 {
        return Err(Error::Shape(format!("expected 3 channels, got {c}")));
    }
    let data = t
        .permute((1, 2, 0))?
        .to_dtype(DType::F32)?
        .flatten_all()?
        .to_vec1::<f32>()?;
    Frame::from_clamped(h, w, data)
}

pub fn tensor_to_frames(t: &Tensor) -> Result<Vec<Frame>> {
    let b = t.dim(0)?;
    (0..b).map(|i| tensor_to_frame(&t.get(i)?)).collect()
}
