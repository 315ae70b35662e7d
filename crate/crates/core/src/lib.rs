//! Nonnegative matrix factorization and common-cause diagnostics for image
//! datasets.
//!
//! A nonnegative `pixels x images` matrix `P` is factorized as `P ~= B W`.
//! Normalizing the factors turns the product into a mixture model
//! `p(pi, i) ~= sum_b p(pi|b) p(b, i)`, where every basis image `b` acts as a
//! common cause of pixels and images. On top of that model the crate provides:
//!
//! * [`rank_scan`]: effective-rank estimation from the predictability
//!   inequalities a common cause must satisfy, plus the mean internal basis
//!   distance, RRSSQ and BIC-style scores;
//! * [`pcc_analysis`]: where the approximate mixture puts its error
//!   (anticorrelations, per-image entropies, sparsity);
//! * [`stability`]: optimal-assignment matching of two basis sets;
//! * [`clustering`]: grouping images under the basis that causes them;
//! * [`denoising`]: dictionary denoising and its valid rank window.

// NaN-rejecting checks are written as `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clustering;
pub mod dataset;
pub mod denoising;
pub mod error;
pub mod nmf;
pub mod pcc_analysis;
pub mod prob_model;
pub mod rank_scan;
pub mod report;
pub mod stability;

pub use dataset::{DataMatrix, Scale};
pub use error::{Error, Result};
pub use nmf::{factorize, Factorization, Loss, SolverOptions};
pub use prob_model::{derive_pcc, to_joint, JointModel, PccModel};
