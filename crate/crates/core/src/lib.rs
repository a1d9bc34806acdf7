//! Mixup-based multimodal contrastive learning over vector-feature modalities.
//!
//! The crate is organised bottom-up:
//!
//! * [`numgrad`]: dense `f64` matrices and a reverse-mode tape ([`numgrad::Graph`]),
//!   plus a central finite-difference gradient checker.
//! * [`mixup`]: Beta-distributed mixing coefficients, partner permutations and
//!   convex-combination mixtures.
//! * [`losses`]: the contrastive family (conventional InfoNCE, the bidirectional
//!   mixup loss, the soft-alignment loss), cross-entropy terms, the phase schedule
//!   and the combined objective.
//! * [`model`]: per-modality MLP encoders, unimodal heads, the concatenation fusion
//!   head, Adam, step decay and the training loop.
//! * [`data`]: manifest-driven ingestion, z-scoring and the synthetic generator.
//! * [`eval`]: ACC / F1 / AUC, the error crosstab and the corruption probes.
//! * [`experiment`]: run configuration, reports, the gradient-check suite and
//!   ablation sweeps used by the `m3col` binary.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod losses;
pub mod mixup;
pub mod model;
pub mod numgrad;

pub use error::{Error, Result};
pub use numgrad::{Graph, GradientMap, Matrix, Tensor};
