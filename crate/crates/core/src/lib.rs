//! Learning joint geometric and probabilistic constellation shaping.
//!
//! A constellation carries trainable points and trainable logits (the symbol
//! probabilities are their softmax). Training maximizes the mutual information
//! (symbol-metric decoding) or the generalized mutual information (bit-metric
//! decoding) of the constellation over an AWGN channel, with Bayes-optimal
//! demappers in place of learned receivers.
//!
//! The pipeline mirrors an autoencoder:
//!
//! ```text
//! sampler -> power normalization -> channel -> demapper -> MI / GMI
//! ```
//!
//! Gradients with respect to the probabilities include the score term that
//! appears because the input statistics themselves depend on the trainable
//! distribution. [`objectives::fd_gradient`] checks them against central
//! finite differences of the exact (Gauss-Hermite) objective.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod channel;
pub mod cli;
pub mod constellation;
pub mod demapper;
pub mod error;
pub mod objectives;
pub mod sampler;
pub mod training;

pub use baselines::{mb_optimize, uniform_rates, MbResult};
pub use channel::{gh_grid, AwgnChannel, Channel, QuadratureGrid, Transmission};
pub use constellation::{
    bit_marginals, entropy_bits, gray_labels, maxwell_boltzmann, probabilities, qam_init,
    Constellation, ShapingMode,
};
pub use error::{Error, Result};
pub use objectives::{
    cross_entropy, fd_gradient, gmi, grad_gmi, grad_mi, mi, EvalMode, Gradients, ObjectiveKind,
};
pub use sampler::{quota_counts, sample_batch, Batch};
pub use training::{adam_step, train, AdamState, TrainConfig, TrainResult, TraceRecord};

pub use num_complex::Complex64;
