//! Dual-branch weakly supervised semantic segmentation at desk scale.
//!
//! Two branches look at the same image: a convolutional branch with strong
//! class precision and a patch-attention branch with strong semantic
//! sensitivity. Each branch feeds the other rank-based selection sets for a
//! contrastive projection loss, their activation maps are fused into
//! localization seeds, and seeds are discretized into trimap pseudo-masks.
//! Everything runs on CPU in f64 with hand-written backward passes.

pub mod backbones;
pub mod cak;
pub mod config;
pub mod container;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod imageops;
pub mod losses;
pub mod model;
pub mod nn;
pub mod pngio;
pub mod sak;
pub mod seeds;
pub mod selection;
pub mod train;
pub mod types;

pub use error::{Error, Result};
