//! Variational hierarchical model for cross-lingual summarization.
//!
//! A transformer encoder-decoder with two local Gaussian latent variables
//! (translation, monolingual summarization) and one global latent variable
//! (cross-lingual summarization) conditioned on the locals, trained with a
//! three-KL + three-reconstruction variational objective on a synthetic
//! compositional task family with an exact oracle.
//!
//! The crate is `no_std`-compatible (with `alloc`); everything here is pure
//! computation. File formats, checkpoint IO and the command-line driver live
//! in the companion `vhm-cli` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod backbone;
pub mod data;
pub mod error;
pub mod eval;
#[doc(hidden)]
pub mod gradcheck;
pub mod latent;
mod math;
pub mod model;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::VhmError;

/// Result alias used across the crate.
pub type Result<T> = core::result::Result<T, VhmError>;
