//! Multi-view variational autoencoders whose latent posterior is a weighted
//! mixture of per-view Gaussians, with semi-supervised and missing-view
//! variants, their training loop, and an experiment CLI.

pub mod datakit;
pub mod diffcore;
mod error;
pub mod expcli;
pub mod genmodels;
pub mod probdist;
pub mod trainer;

pub use error::{Error, Result};
