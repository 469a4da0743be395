//! Dense layers, convolutions and exact reverse-mode gradients for
//! sequential classifiers.
//!
//! Each [`Layer`] knows its own forward map and vector-Jacobian product. A
//! [`LayerStack`] records the activations of a forward pass in a [`Trace`]
//! and walks it backwards, so the gradient w.r.t. any layer's input is
//! available; split training relays exactly those tensors between parts.

mod layer;
mod loss;
mod network;
mod stack;

pub use layer::{Conv2d, Dense, Layer, LayerKind};
pub use loss::{softmax, softmax_cross_entropy};
pub(crate) use network::check_lr;
pub use network::{backward, forward, lenet_kinds, mlp_kinds, sgd_step, GradientSet, NetworkSpec};
pub use stack::{add_flat, LayerStack, StackGrads, Trace};
