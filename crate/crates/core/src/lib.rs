//! Random bit generation from simulated optical-PUF speckle images.
//!
//! The crate is organised along the processing chain:
//!
//! * [`puf_sim`] synthesises speckle frames from SLM phase patterns through a
//!   seeded multi-screen scattering model and a camera stage.
//! * [`metrics`] characterises frame datasets with Euclidean distances and
//!   Gabor-hash Hamming distances.
//! * [`entropy`] pools grey-value histograms, estimates min-entropy and
//!   derives the SHA-256 input block length.
//! * [`extractor`] turns frames into a full-entropy bitstream by hashing
//!   fixed-size raw blocks.
//! * [`validation`] checks the output: Pearson decorrelation, Hamming
//!   distance / degrees-of-freedom analysis and a NIST SP800-22 subset.
//! * [`pipeline`] wires the stages together behind a single TOML config.

pub mod bits;
pub mod entropy;
pub mod error;
pub mod extractor;
pub mod metrics;
pub mod pipeline;
pub mod puf_sim;
pub mod stats;
pub mod validation;

pub use bits::BitString;
pub use error::{Error, Result};
