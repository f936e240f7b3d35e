//! Loss, optimizer, metrics, data and the training loop.

mod blur;
mod config;
mod data;
mod metrics;
mod optim;
mod trainer;

pub use blur::{synth_blur, MotionKernel, KERNEL_GRAMMAR, KERNEL_SUM_TOL};
pub use config::TrainConfig;
pub use data::{
    batch_indices, load_dataset, random_crop_pair, save_dataset, synthetic_pairs, synthetic_sharp, DatasetReport,
    ImageSample, IMAGE_EXT,
};
pub use metrics::{mse, mse_loss, psnr, psnr_from_mse, ssim, PSNR_CAP, PSNR_MSE_FLOOR};
pub use optim::{adamw_scalar, adamw_step, cosine_lr, OptimState};
pub use trainer::{evaluate, identity_baseline, step_batch, train_loop, train_steps, EvalReport, StepLog};
