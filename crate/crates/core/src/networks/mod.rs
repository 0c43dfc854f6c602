//! Conditional generator and discriminator.

mod discriminator;
mod embed;
mod generator;
mod params;

pub use discriminator::{Discriminator, DiscriminatorConfig, DISC_LAYERS, GROUP_NORM_AFTER};
pub use embed::{condition_onehot, positional_table, sinusoidal_batch, sinusoidal_embed};
pub use generator::{DropoutMasks, Generator, GeneratorConfig, Z_LAYERS};
pub use params::ParamStore;
