//! Infinite-width transformer kernels and their symmetric-group spectra.
//!
//! The crate is split along the lines of the experiments it supports:
//!
//! - [`hmm_data`]: the two-state HMM mixture task and its Bayes-optimal predictors.
//! - [`symgroup`]: partitions, Young tableaux, symmetrizers and the Fourier eigenbasis.
//! - [`kernel`]: the one-block transformer, its analytic NNGP kernels and a Monte-Carlo estimator.
//! - [`gp_inference`]: exact GP regression with those kernels.
//! - [`ek_theory`]: equivalent-kernel spectra, learnability and MSE predictions.
//! - [`spectrum_scaling`]: empirical spectra versus context length.
//! - [`corpus_sym`]: Fourier-block permutation-symmetry audit of token corpora.

pub mod corpus_sym;
pub mod ek_theory;
pub mod error;
pub mod gp_inference;
pub mod hmm_data;
pub mod io;
pub mod kernel;
pub mod rng;
pub mod spectrum_scaling;
pub mod symgroup;

pub use error::{Error, Result};
