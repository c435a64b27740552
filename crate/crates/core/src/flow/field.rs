use std::fs;
use std::path::Path;

use crate::{Error, Result};

pub const FLOW_MAGIC: &[u8; 4] = b"UDFL";
pub const FLOW_EXT: &str = "udfl";

/// Dense per-pixel displacement `(du, dv)` in pixels.
///
/// A field labelled `U_{a,b}` satisfies `a(p) ≈ b(p + U_{a,b}(p))`, so
/// warping `b` with it reproduces `a`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl FlowField {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width * 2 {
            return Err(Error::Shape(format!(
                "flow {height}x{width} needs {} values, got {}",
                height * width * 2,
                data.len()
            )));
        }
        let limit = height.max(width) as f32;
        for uv in data.chunks_exact(2) {
            if !uv[0].is_finite() || !uv[1].is_finite() {
                return Err(Error::Parameter("non-finite flow vector".into()));
            }
            if uv[0].hypot(uv[1]) > limit {
                return Err(Error::Parameter(format!(
                    "flow magnitude {} exceeds {limit}",
                    uv[0].hypot(uv[1])
                )));
            }
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width * 2],
        }
    }

    pub fn constant(height: usize, width: usize, du: f32, dv: f32) -> Result<Self> {
        Self::new(height, width, [du, dv].repeat(height * width))
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> (f32, f32)) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * 2);
        for y in 0..height {
            for x in 0..width {
                let (u, v) = f(y, x);
                data.push(u);
                data.push(v);
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> (f32, f32) {
        let i = (y * self.width + x) * 2;
        (self.data[i], self.data[i + 1])
    }

    /// Anisotropic total variation summed over both components.
    pub fn total_variation(&self) -> f64 {
        let mut tv = 0.0;
        for y in 0..self.height {
            for x in 0..self.width {
                let (u, v) = self.get(y, x);
                if x + 1 < self.width {
                    let (u2, v2) = self.get(y, x + 1);
                    tv += ((u2 - u).abs() + (v2 - v).abs()) as f64;
                }
                if y + 1 < self.height {
                    let (u2, v2) = self.get(y + 1, x);
                    tv += ((u2 - u).abs() + (v2 - v).abs()) as f64;
                }
            }
        }
        tv
    }

    pub fn mean(&self) -> (f64, f64) {
        let n = (self.height * self.width) as f64;
        let (su, sv) = self
            .data
            .chunks_exact(2)
            .fold((0.0, 0.0), |(a, b), uv| (a + uv[0] as f64, b + uv[1] as f64));
        (su / n, sv / n)
    }
}

/// `true` where `p + U(p)` lands inside the source image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValidityMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl ValidityMask {
    pub(crate) fn from_vec(height: usize, width: usize, data: Vec<bool>) -> Self {
        debug_assert_eq!(data.len(), height * width);
        Self {
            height,
            width,
            data,
        }
    }

    pub fn all_valid(height: usize, width: usize) -> Self {
        Self::from_vec(height, width, vec![true; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|v| **v).count()
    }
}

pub fn encode_flow(field: &FlowField) -> Result<Vec<u8>> {
    let (h, w) = match (u16::try_from(field.height), u16::try_from(field.width)) {
        (Ok(h), Ok(w)) => (h, w),
        _ => return Err(Error::Parameter("flow dimensions exceed u16".into())),
    };
    let mut out = Vec::with_capacity(8 + field.data.len() * 4);
    out.extend_from_slice(FLOW_MAGIC);
    out.extend_from_slice(&h.to_le_bytes());
    out.extend_from_slice(&w.to_le_bytes());
    for v in &field.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_flow(bytes: &[u8]) -> Result<FlowField> {
    if bytes.len() < 8 || &bytes[..4] != FLOW_MAGIC {
        return Err(Error::Format("missing UDFL header".into()));
    }
    let h = u16::from_le_bytes([bytes[4], bytes[5]]) as usize;
    let w = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    let body = &bytes[8..];
    if body.len() != h * w * 8 {
        return Err(Error::Format(format!(
            "UDFL header declares {h}x{w} but body holds {} bytes",
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    FlowField::new(h, w, data).map_err(|e| Error::Format(e.to_string()))
}

pub fn save_flow(field: &FlowField, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_flow(field)?).map_err(|e| Error::io(path, e))
}

pub fn load_flow(path: impl AsRef<Path>) -> Result<FlowField> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_flow(&bytes)
}
