//! Noise-robust speaker verification workbench.
//!
//! The crate covers the full signal chain: a synthetic corpus with noise
//! mixing, MFCC / gammatone analysis, two enhancement front ends (STSA-MMSE
//! and mask-estimating DNN), adversarially trained bottleneck features, and a
//! GMM-UBM verification backend with EER evaluation.

pub mod anbn;
pub mod corpus;
pub mod dnnse;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod gmm;
pub mod mixer;
pub mod mmse;
pub mod nnet;
pub mod seed;

pub use error::{Error, Result};
