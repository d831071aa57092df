//! Minimal trainable-layer toolkit: parameters, init, dense/conv/norm layers,
//! activations, and optimizers. Everything is f64 with explicit backward
//! passes; there is no tape.

pub mod conv;
pub mod init;
pub mod linear;
pub mod norm;
pub mod ops;
pub mod optim;
pub mod param;

pub use conv::Conv2d;
pub use init::Initializer;
pub use linear::Linear;
pub use norm::{LayerNorm, LayerNormCache};
pub use optim::{cosine_lr, Optimizer, OptimizerKind};
pub use param::{GradBuffer, ParamId, ParamStore};
