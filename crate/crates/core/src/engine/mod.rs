//! Minimal deterministic convnet engine: layers, forward and backward passes,
//! parameter storage, initialization, Adam and losses.

pub mod layer;
pub mod loss;
pub mod network;
pub mod ops;
pub mod optim;
pub mod weights;

pub use layer::{LayerKind, LayerSpec};
pub use loss::{bce_logit_grad, bce_loss, FocalDice, BCE_EPS};
pub use network::{sigmoid, BackwardOptions, Gradients, Network, ReluRule, Tape};
pub use optim::{adam_step, AdamState};
pub use weights::{init_truncated_normal, LayerParams, WeightStore};
