//! Dense-network numerics: matrices, linear layers, reverse-mode
//! differentiation, Adam, cosine learning-rate decay and gradient clipping.

pub mod graph;
pub mod layer;
pub mod matrix;
pub mod optim;

pub use graph::{Value, ValueGraph};
pub use layer::{linear_forward, relu, softmax, Dense, LinearLayer, ParamId, ParamStore};
pub use matrix::Matrix;
pub use optim::{adam_step, clip_global_norm, cosine_lr, AdamState};
