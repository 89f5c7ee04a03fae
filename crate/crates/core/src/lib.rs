//! Differentiable-computation core for the lip reading experiments.
//!
//! Everything is CPU-side and dependency-light: dense tensors, a tape-based
//! reverse-mode autodiff engine, the neural network layers used by the two
//! video backends, the lateral inhibition layer, domain-adversarial training
//! utilities, a synthetic data generator, and the experiment driver shared by
//! the command line tools.

pub mod adversarial;
pub mod augment;
pub mod datagen;
pub mod error;
pub mod experiment;
pub mod li;
pub mod models;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tape::{Tape, Var};
pub use tensor::{Dtype, Element, Tensor};
