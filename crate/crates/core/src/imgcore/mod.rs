//! Image, depth and frame containers, color conversions, resampling and IO.

mod color;
mod frame;
pub mod io;
mod resample;
mod tensor;

pub use color::{
    hsv_pixel_to_rgb, hsv_to_rgb, lab_pixel_to_srgb, lab_to_rgb, rgb_pixel_to_hsv, rgb_to_hsv,
    rgb_to_lab, srgb_pixel_to_lab,
};
pub use frame::{DepthMap, Frame, HsvFrame, LabFrame};
pub use io::{load_depth, load_frame, save_depth, save_frame};
pub use resample::downsample2;
pub use tensor::{frame_to_tensor, frames_to_tensor, tensor_to_frame, tensor_to_frames};
