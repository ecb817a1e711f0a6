//! Image buffers, bicubic degradation, multi-resolution sampling, difficulty
//! tiers and SSIM.

mod augment;
mod image;
mod resample;
mod ssim;

pub use augment::{
    classify_difficulty, sample_resolution, AugmentationPlan, DifficultyTier, DEFAULT_INPUT_SIZE,
};
pub use image::{ImageBuffer, CHANNELS};
pub use resample::{cubic_kernel, degrade, resample_bicubic, BICUBIC_A};
pub use ssim::{ssim, SSIM_C1, SSIM_C2, SSIM_SIGMA, SSIM_WINDOW};
