//! Minimal convolutional network with manual reverse-mode gradients.

pub mod dft;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod optim;
pub mod params;
pub mod tensor;

pub use dft::{dft_features, dft_magnitude};
pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use model::{backward_total, forward, head_grad, init_model, ForwardTape, ModelConfig, TapeLoss};
pub use optim::{adam_step, cosine_lr, AdamConfig, AdamState};
pub use params::{Param, ParamStore};
pub use tensor::Tensor;
