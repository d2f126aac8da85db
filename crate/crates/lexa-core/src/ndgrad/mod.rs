//! Dense tensors with reverse-mode differentiation, layers, Gaussian
//! utilities and the Adam optimizer.

mod adam;
mod dist;
mod gradcheck;
mod nn;
mod param;
mod real;
mod tape;
mod tensor;

pub use adam::{clip_grad_norm, Adam, AdamOutcome};
pub use dist::{gaussian_entropy, gaussian_sample, kl_diag_gauss, standard_normal, std_from_raw, STD_FLOOR};
pub use gradcheck::grad_check;
pub use nn::{Activation, GruCell, Linear, Mlp};
pub use param::{Binding, Init, ParamId, ParamSet, Parameter};
pub use real::Real;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
