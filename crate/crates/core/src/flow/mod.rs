//! Optical flow: the field container and its file format, the warping
//! operator, and a classical Horn–Schunck estimator.

mod field;
mod horn_schunck;
mod warp;

pub use field::{decode_flow, encode_flow, load_flow, save_flow, FlowField, ValidityMask, FLOW_EXT, FLOW_MAGIC};
pub use horn_schunck::{horn_schunck, horn_schunck_pyramid, DEFAULT_ALPHA, DEFAULT_ITERS, PYRAMID_LEVELS, SINGLE_SCALE_MAX};
pub use warp::{masks_to_tensor, warp, warp_tensor};
#[allow(unused_imports)]
pub(crate) use warp::taps;
