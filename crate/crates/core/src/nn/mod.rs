//! Minimal dense-network machinery: forward/backward passes, Adam and the
//! learning-rate schedule.

mod mlp;
mod optim;

pub use mlp::{Activation, Dense, Mlp, MlpGrad, MlpOutput, MlpTape};
pub use optim::{adam_step, lr_at, Adam, AdamConfig, AdamState};
