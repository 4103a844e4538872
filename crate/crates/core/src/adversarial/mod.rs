//! Generator (the mapping `W`) and the MLP discriminators of the adversarial
//! alignment, in standard (language discriminator only) and concept
//! (language + concept discriminator) modes.

mod discriminator;
mod trainer;

pub use discriminator::{
    disc_loss_and_grads, gen_loss_and_grad, sigmoid, DiscriminatorNet, ForwardCache, GenBatch, NetGrads,
};
pub use trainer::{
    train, BestCheckpoint, DlSampling, MetricsRow, Mode, TrainConfig, TrainError, TrainObserver, TrainState,
};
