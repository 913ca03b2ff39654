//! Toy learned image codec, targeted global-semantic-manipulation attacks
//! with periodic geometric step-size decay, and the diagnostics used to
//! study their dynamics.

pub mod attack;
pub mod autodiff;
pub mod codec;
pub mod defense;
pub mod diagnostics;
pub mod error;
pub mod metrics;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{ParameterSet, Tensor};
