//! Deterministic core for a desk-scale GAN-distillation laboratory.
//!
//! Everything here runs single threaded on `f64` matrices so that a run is
//! reproducible bit for bit from a master seed. The crate provides:
//!
//! * [`mat`]: a small row-major matrix type and the linear algebra the rest
//!   of the crate needs.
//! * [`rng`]: named, independently seeded random streams derived from one
//!   master seed, with enough state exposed to checkpoint and resume them.
//! * [`autodiff`]: a reverse-mode tape over matrices, sized for the models
//!   in [`models`].
//! * [`teacher`]: the frozen teacher interface plus a deterministic mock
//!   teacher for tests and desk experiments.
//! * [`agkd`], [`cgkd`]: the two distillation losses.
//! * [`adversarial`]: standard GAN losses and the combined objective.
//! * [`models`]: toy generator/discriminator pairs (dense and convolutional).
//! * [`data`]: in-memory datasets, seeded subsetting, and augmentation.
//! * [`metrics`]: evaluation metrics (Fréchet distance, inception-style
//!   score, pairwise diversity, mode coverage).
//! * [`engine`]: the training loop tying the above together.

pub mod adversarial;
pub mod agkd;
pub mod autodiff;
pub mod cgkd;
pub mod config;
pub mod data;
pub mod engine;
pub mod error;
pub mod gradcheck;
pub mod mat;
pub mod metrics;
pub mod models;
pub mod numerics;
pub mod rng;
pub mod teacher;

pub use error::KdError;
pub use mat::Mat;
