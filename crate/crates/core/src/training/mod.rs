//! Adversarial and geometric objectives, optimizer, training loop and
//! checkpoints.

mod checkpoint;
mod config;
mod losses;
mod optim;
mod trainer;

pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::TrainConfig;
pub use losses::{disc_loss, gen_adv_loss, r1_penalty, total_gen_loss, GeoContext, GeoTerms};
pub use optim::{cosine_lr, ema_update, Adam, ADAM_EPS};
pub use trainer::{
    drop_conditions, epoch_rng, loss_csv, posterior_columns, real_pairs, train, train_with, write_loss_csv, LossRow, Model, TrainState,
    LOSS_CSV_HEADER,
};
