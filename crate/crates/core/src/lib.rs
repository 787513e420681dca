//! Position-aware circular convolution (ParC) operators, ParC blocks and a
//! desk-scale ParC-Net classifier, with the machinery to verify, train and
//! benchmark them.

pub mod autodiff;
pub mod bench;
pub mod blocks;
pub mod error;
pub mod layers;
pub mod model;
pub mod parc;
pub mod tensor;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
