use crate::{Error, Result};

/// An RGB image with values in `[0, 1]`, stored row-major with interleaved
/// channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Frame {
    /// Builds a frame, rejecting values that are non-finite or outside `[0, 1]`.
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        check_dims(height, width, data.len(), 3)?;
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::Parameter(format!(
                "frame value {v} outside [0, 1]"
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Builds a frame, clamping values into `[0, 1]`. Non-finite values are
    /// still rejected.
    pub fn from_clamped(height: usize, width: usize, mut data: Vec<f32>) -> Result<Self> {
        check_dims(height, width, data.len(), 3)?;
        for v in data.iter_mut() {
            if !v.is_finite() {
                return Err(Error::Parameter("non-finite frame value".into()));
            }
            *v = v.clamp(0.0, 1.0);
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Builds a frame from a per-sample function `f(y, x, c)`; results are
    /// clamped into `[0, 1]`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        assert!(height > 0 && width > 0, "frame dimensions must be positive");
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                for c in 0..3 {
                    let v = f(y, x, c);
                    data.push(if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 });
                }
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        Self::from_fn(height, width, |_, _, c| rgb[c])
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, [0.0; 3])
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

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * 3 + c]
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Per-pixel map; outputs are clamped into `[0, 1]`.
    pub fn map(&self, mut f: impl FnMut(f32) -> f32) -> Frame {
        Frame::from_fn(self.height, self.width, |y, x, c| f(self.get(y, x, c)))
    }

    /// Single channel plane as `f64`, row-major.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.data.iter().skip(c).step_by(3).map(|&v| v as f64).collect()
    }

    /// Rec. 601 luma, row-major.
    pub fn luma(&self) -> Vec<f64> {
        self.data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
            .collect()
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Frame> {
        if height == 0 || width == 0 || top + height > self.height || left + width > self.width {
            return Err(Error::Shape(format!(
                "crop {height}x{width}+{top}+{left} outside {}x{}",
                self.height, self.width
            )));
        }
        Ok(Frame::from_fn(height, width, |y, x, c| self.get(top + y, left + x, c)))
    }

    pub fn ensure_same_shape(&self, other: &Frame) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::Shape(format!(
                "{}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }
}

/// Per-pixel scene depth in meters; every entry finite and strictly positive.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl DepthMap {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        check_dims(height, width, data.len(), 1)?;
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v <= 0.0) {
            return Err(Error::Parameter(format!("depth value {v} must be finite and > 0")));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self::new(height, width, data)
    }

    pub fn uniform(height: usize, width: usize, meters: f32) -> Result<Self> {
        Self::new(height, width, vec![meters; height * width])
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
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<DepthMap> {
        if height == 0 || width == 0 || top + height > self.height || left + width > self.width {
            return Err(Error::Shape(format!(
                "crop {height}x{width}+{top}+{left} outside {}x{}",
                self.height, self.width
            )));
        }
        DepthMap::from_fn(height, width, |y, x| self.get(top + y, left + x))
    }

    pub fn ensure_matches(&self, frame: &Frame) -> Result<()> {
        if self.dims() != frame.dims() {
            return Err(Error::Shape(format!(
                "depth {}x{} vs frame {}x{}",
                self.height,
                self.width,
                frame.height(),
                frame.width()
            )));
        }
        Ok(())
    }
}

/// CIELab image: `L` in `[0, 100]`, `a`/`b` unbounded.
#[derive(Clone, Debug, PartialEq)]
pub struct LabFrame {
    pub(crate) height: usize,
    pub(crate) width: usize,
    pub(crate) data: Vec<f32>,
}

/// HSV image with every channel in `[0, 1]` (hue as a fraction of a turn).
#[derive(Clone, Debug, PartialEq)]
pub struct HsvFrame {
    pub(crate) height: usize,
    pub(crate) width: usize,
    pub(crate) data: Vec<f32>,
}

macro_rules! three_channel_accessors {
    ($ty:ty, $($name:ident = $c:expr),+) => {
        impl $ty {
            pub fn height(&self) -> usize {
                self.height
            }

            pub fn width(&self) -> usize {
                self.width
            }

            pub fn data(&self) -> &[f32] {
                &self.data
            }

            #[inline]
            pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
                let i = (y * self.width + x) * 3;
                [self.data[i], self.data[i + 1], self.data[i + 2]]
            }

            $(
                pub fn $name(&self) -> Vec<f64> {
                    self.data.iter().skip($c).step_by(3).map(|&v| v as f64).collect()
                }
            )+
        }
    };
}

three_channel_accessors!(LabFrame, lightness = 0, a = 1, b = 2);
three_channel_accessors!(HsvFrame, hue = 0, saturation = 1, value = 2);

fn check_dims(height: usize, width: usize, len: usize, channels: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::Shape(format!("dimensions must be positive, got {height}x{width}")));
    }
    if len != height * width * channels {
        return Err(Error::Shape(format!(
            "expected {} values for {height}x{width}x{channels}, got {len}",
            height * width * channels
        )));
    }
    Ok(())
}
