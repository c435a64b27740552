//! Stage one: a denoising-diffusion prior whose UNet encoder, evaluated at
//! diffusion time zero, becomes a frozen feature extractor.

mod encoder;
mod schedule;
mod train;
mod unet;

pub use encoder::EncoderHandle;
pub use schedule::{forward_diffuse_closed, forward_diffuse_step, make_schedule, NoiseSchedule, ScheduleConfig};
pub use train::{ddpm_loss, gaussian, prior_checkpoint, train_prior, NoisePredictor, PriorTraining};
pub use unet::{timestep_embedding, Encoder, UNet, UNetConfig};
