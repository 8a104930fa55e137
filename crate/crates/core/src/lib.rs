//! Numerical core for identifying sparse latent dynamics from noisy
//! high-dimensional time series.
//!
//! The pipeline has three stages, each usable on its own:
//!
//! 1. [`denoise`] separates measurement noise from a trajectory by training a
//!    neural vector field whose forward and backward Runge–Kutta predictions
//!    must agree with the observations.
//! 2. [`autoencoder`] and [`trainer`] learn reduced coordinates together with
//!    a sparse polynomial model of their dynamics ([`library`]).
//! 3. [`eval`] simulates the discovered model, aligns it with a reference
//!    system and reports relative errors.
//!
//! Gradients come from the small reverse-mode engine in [`tape`]. The crate is
//! `no_std` and only needs `alloc`; file formats and the command line live in
//! the companion `rsae` crate.
#![no_std]

extern crate alloc;

pub mod activation;
pub mod autoencoder;
pub mod denoise;
pub mod dynamics;
pub mod error;
pub mod eval;
pub mod library;
pub mod mlp;
pub mod optim;
pub mod rk;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use activation::Activation;
pub use error::{Diverged, Error, Result};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
