//! Integrative variational autoencoder (InVA) for image-on-image regression.
//!
//! Several input images `x_1, …, x_K` of one subject are each encoded into
//! *shallow* Gaussian features by an image-specific encoder, which a single
//! shared encoder maps to *deep* Gaussian features. A shared decoder and
//! image-specific decoders reconstruct the inputs, and a predictor network
//! maps the concatenated encoding summaries to the outcome image `y`.
//!
//! Module map:
//!
//! - [`ndcore`]: vectors, matrices, seeded RNG
//! - [`neuralnet`]: MLPs with manual backprop, SGD, gradient checking, checkpoints
//! - [`vae`]: Gaussian encodings, KL terms, single-input VAE baseline
//! - [`inva`]: the hierarchical model and its two ablations
//! - [`simgen`]: polynomial simulation scenarios
//! - [`dataio`]: CSV + JSON dataset format, standardization, 80/20 splits
//! - [`harness`]: method roster, experiment plans, summaries, scaling bench

pub mod dataio;
pub mod error;
pub mod harness;
pub mod inva;
pub mod ndcore;
pub mod neuralnet;
pub mod simgen;
pub mod vae;

pub use error::{Error, Result};
pub use ndcore::{Matrix, Rng, Vector};
