//! Minimal reverse-mode differentiation over `f32` feature maps.
//!
//! Feature maps are `N×C×H×W`. A [`Graph`] records one forward pass; parameters
//! live in a [`ParamStore`] and are copied into the graph as leaves.

mod graph;
mod layers;
mod optim;
mod params;

pub use graph::{Gradients, Graph, Tensor, Var};
pub use layers::{Conv2d, ConvBlock, ConvTranspose2x2, InstanceNorm, LEAKY_SLOPE};
pub use optim::{Adam, Optimizer, Sgd};
pub use params::{ParamId, ParamStore};
