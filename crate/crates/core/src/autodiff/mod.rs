//! Minimal reverse-mode differentiation for small convolutional networks.

pub mod checkpoint;
mod conv;
mod optim;
mod params;
mod tape;
mod tensor;

pub use checkpoint::{hash64, Checkpoint, NamedTensor};
pub use conv::{col2im, conv2d_backward, conv2d_forward, im2col, Conv2dSpec, ConvGeometry, ConvGrads};
pub use optim::{RmsProp, RmsPropConfig};
pub use params::{fan_in_uniform, ParamSet};
pub use tape::{Tape, Var};
pub use tensor::{numel, Tensor};
