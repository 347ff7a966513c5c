//! Landmark-guided diverse smile video generation.
//!
//! Given one neutral-face landmark set (plus an optional face image) and an
//! expression label, this crate produces K visibly distinct landmark
//! sequences of that expression class and translates them into face-image
//! sequences. The pipeline has three generation blocks — a landmark-image
//! VAE with a conditional recurrent generator on top, a bank of K recurrent
//! generators trained with a push-pull loss, and an adversarial
//! landmark-to-face translator — plus a deterministic synthetic expression
//! corpus, a four-phase training schedule, and objective evaluation metrics
//! (SSIM, inception-style score, intensity-curve distances).
//!
//! Everything is plain CPU `f64` math; the conv/GEMM core is data-parallel
//! via rayon (the `parallel` feature, on by default) with a sequential
//! fallback that is bitwise identical by construction.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod landmark;
pub mod media;
pub mod modes;
pub mod nn;
pub mod parallel;
pub mod seqgen;
pub mod training;
pub mod translator;
pub mod vae;

pub use error::{Error, Result};

/// Side length of landmark images and face frames.
pub const IMAGE_SIDE: usize = 64;
/// Dimension of the landmark embedding space.
pub const EMBED_DIM: usize = 100;
/// Number of facial landmark points.
pub const NUM_LANDMARKS: usize = 68;
