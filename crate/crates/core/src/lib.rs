//! Learning and analyzing source fingerprints of image generators.
//!
//! Synthetic fingerprinted sources stand in for trained generators, so every
//! piece (attribution nets, the fingerprint visualization net, hand-crafted
//! baselines, attacks and FD-ratio separability) runs in minutes on a CPU.

pub mod attacks;
pub mod attribution;
pub mod baselines;
pub mod dataset;
pub mod error;
pub mod filters;
pub mod image;
pub mod io;
pub mod metrics;
pub mod seed;
pub mod synth;
pub mod vis;

pub use dataset::{LabeledDataset, Record};
pub use ganprint_tensor as tensor;
pub use error::{Error, Result};
pub use image::Image;
