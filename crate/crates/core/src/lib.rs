//! Privacy-preserving interference classification for a simulated O-RAN
//! near-RT RIC.
//!
//! The crate covers the whole pipeline: baseband synthesis and spectrogram
//! rendering ([`signal`]), the shuffling cipher ([`crypt`]), a small
//! reverse-mode autodiff engine with the layers both classifiers need
//! ([`nn`]), the ViT and CNN classifiers ([`models`]), the evaluation
//! protocol ([`eval`]) and the closed RIC control loop ([`ric`]).

pub mod cli;
pub mod crypt;
pub mod error;
pub mod eval;
pub mod models;
pub mod nn;
pub mod ric;
pub mod rng;
pub mod signal;

pub use error::{Error, Result};
pub use signal::Class;
