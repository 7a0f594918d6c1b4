//! Minimal CPU neural-network engine: convolutional encoder-decoders with
//! explicit backward passes and an Adam trainer.

pub mod checkpoint;
mod layers;
mod tensor;
mod train;
mod unet;

pub use layers::{Conv2d, ConvRelu, SqueezeExcite};
pub use tensor::{Grads, ParamSet, Tensor};
pub use train::{derive_seed, fit, pixel_loss, Adam, EpochRecord, FitConfig, Loss, LrSchedule};
pub use unet::{Downsample, UNet, UNetCache, UNetConfig};
