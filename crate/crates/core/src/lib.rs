#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod autodiff;
pub mod cli;
pub mod config;
pub mod env;
pub mod error;
pub mod evaluator;
pub mod geometry;
pub mod imaging;
pub mod rng;
pub mod scalar;
pub mod trainer;
pub mod worksim;

pub use error::{Error, Result};
pub use geometry::{Action, BoundingBox, TransitionConfig, N_ACTIONS};
pub use imaging::{Frame, Light, PackedFrame, SceneManifest};
pub use scalar::Scalar;

/// Single-precision tensor, used for training and inference.
pub type Tensor32 = autodiff::Tensor<f32>;
/// Double-precision tensor, used by the gradient and convolution oracles.
pub type Tensor64 = autodiff::Tensor<f64>;
pub type AgentNet = agent::AgentNetwork<f32>;
pub type AgentNet64 = agent::AgentNetwork<f64>;
