//! Deep semantic hashing driven by a semi-supervised conditional GAN.
//!
//! The pipeline pretrains a class-conditional GAN on labeled and unlabeled
//! images, trains a shared encoder with hash, adversary and classification
//! heads on real-synthetic triplets while the generator plays against it,
//! and evaluates the resulting binary codes by Hamming ranking.

pub mod arch;
pub mod archive;
pub mod datasets;
pub mod error;
pub mod evaluation;
pub mod gan;
pub mod hashmodel;
pub mod losses;
pub mod lsh;
pub mod nn;
pub mod pipeline;
pub mod probe;
pub mod retrieval;
pub mod trainer;
pub mod triplets;

pub use error::{Error, Result};
