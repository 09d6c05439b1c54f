//! Latent fingerprint matching toolkit.
//!
//! The pipeline: learn a per-image patch dictionary from the latent itself,
//! identify which atoms carry ridge-valley structure, vote a region of
//! interest from the sparse codes, extract and mask minutiae, align latent
//! minutiae against gallery prints with a genetic search, and score the
//! results with penetration-rate and segmentation-accuracy metrics.

pub mod atoms;
pub mod dict;
pub mod error;
pub mod evaluate;
pub mod gamatch;
pub mod identify;
pub mod image;
pub mod minutiae;
pub mod segment;
pub mod synth;

pub use error::{Error, Result};
