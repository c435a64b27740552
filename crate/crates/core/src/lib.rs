//! Two-stage underwater video enhancement.
//!
//! Stage one trains a denoising-diffusion UNet on curated underwater crops and
//! keeps its encoder as a frozen feature extractor. Stage two removes
//! depth-dependent backscatter, predicts a per-channel illumination map from a
//! full-resolution guide stream fused with the frozen encoder's features, and
//! divides it out. A final fine-tuning phase adds an optical-flow warp
//! consistency loss so that enhancement commutes with motion.

pub mod checkpoint;
pub mod diffusion;
pub mod enhancer;
pub mod error;
pub mod flow;
pub mod harness;
pub mod imgcore;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod ops;
pub mod physics;

pub use error::{Error, Result};
