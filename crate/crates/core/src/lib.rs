//! Contrastive and adversarial representation learning at desk scale.
//!
//! A small f64 autodiff engine ([`tape`]) drives dense and convolutional
//! encoders ([`models`]) trained with contrastive, supervised-contrastive and
//! cross-entropy objectives ([`losses`]), optionally against PGD adversaries
//! ([`attacks`]). [`analysis`] measures representation similarity with linear
//! CKA and linear probes; [`evaluation`] produces clean and robust accuracy
//! tables.

pub mod analysis;
pub mod attacks;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
mod hash;
pub mod losses;
pub mod models;
pub mod optim;
pub mod report;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
