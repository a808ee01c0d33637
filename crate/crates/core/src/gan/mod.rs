//! Recurrent GAN oversampling of minority classes.

mod balance;
mod nets;
mod train;

pub use balance::{
    balance_dataset, deficient_classes, synthesize, train_class_gans, BalanceReport, ATTEMPT_FACTOR,
};
pub use nets::{Discriminator, GanNetConfig, Generator};
pub use train::{gan_train, GanLoss, GanNet, GanOutcome, GanTrainConfig, GanTrainer, MIN_REAL_BEATS};
