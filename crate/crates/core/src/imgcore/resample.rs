use super::frame::Frame;
use crate::{Error, Result};

/// Halves both dimensions by averaging each 2x2 block.
pub fn downsample2(frame: &Frame) -> Result<Frame> {
    let (h, w) = frame.dims();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!("downsample2 needs even dimensions, got {h}x{w}")));
    }
    Ok(Frame::from_fn(h / 2, w / 2, |y, x, c| {
        let (y0, x0) = (2 * y, 2 * x);
        (frame.get(y0, x0, c) + frame.get(y0, x0 + 1, c) + frame.get(y0 + 1, x0, c) + frame.get(y0 + 1, x0 + 1, c))
            * 0.25
    }))
}
