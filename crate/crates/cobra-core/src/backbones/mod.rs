//! Trainable reference backbones behind the two branch contracts.

pub mod cnn;
pub mod vit;

pub use cnn::{CnnCache, CnnConfig, TinyCnn};
pub use vit::{TinyVit, VitCache, VitConfig};
