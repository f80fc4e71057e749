//! Differentially private variational Bayes.
//!
//! Mini-batch expected sufficient statistics are perturbed with calibrated
//! Gaussian noise before each M-step, and a moments accountant tracks the
//! cumulative privacy loss.

pub mod accountant;
pub mod blr;
pub mod ce_vb;
pub mod error;
pub mod lda;
pub mod mechanisms;
pub mod polya_gamma;
pub mod rng;
pub mod sbn;

pub use error::{Result, VipsError};
