//! Stage two: the spatial enhancer.
//!
//! The backscatter-free image `D` feeds two streams: a shallow full-resolution
//! guide network, and the frozen prior encoder applied to `D` downsampled by
//! two. Encoder stages are brought back to full resolution by learnable
//! bilinear upsampling, fused with the guide features and projected to a
//! positive illumination map `S`; the output is `D / (S + eps)`.

mod config;
mod model;
mod upsample;

pub use config::EnhancerConfig;
pub use model::{enhance_divide, enhance_divide_frame, Enhancer, SpatialModel};
pub use upsample::LearnableUpsample;
