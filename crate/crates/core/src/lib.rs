//! Speaker identification for multi-modal multi-party conversations.
//!
//! The crate covers the full desk-scale pipeline around externally produced
//! perception scores:
//!
//! * [`corpus`] — the shared data model (sessions, turns, face tracks, score
//!   tables) and its line-delimited on-disk formats.
//! * [`tracks`] — linking per-frame face detections into tracks and picking
//!   key frames.
//! * [`labeler`] — prototype nearest-neighbour character labelling and
//!   validation against reference annotations.
//! * [`sessions`] — sliding-window session selection, candidate speaker sets,
//!   and the noisy evaluation variant.
//! * [`head`] — the trainable pairwise same-speaker similarity head.
//! * [`solver`] — reward-matrix construction and the constrained quadratic
//!   binary assignment solvers, plus evaluation helpers.
//! * [`respond`] — response-selection candidates, speaker perturbations, and
//!   lowest-score selection.
//! * [`synth`] — a seeded synthetic benchmark generator with planted ground
//!   truth for end-to-end verification.
//!
//! Numeric kernels are generic over [`num::Scalar`] (`f32` or `f64`); the
//! data model and pipelines use the concrete aliases below.

pub mod corpus;
pub mod error;
pub mod head;
pub mod labeler;
pub mod num;
pub mod respond;
pub mod rng;
pub mod sessions;
pub mod solver;
pub mod synth;
pub mod tracks;

/// Scalar type used by the concrete data model and pipelines.
pub type Real = f64;

/// Dense matrix of [`Real`].
pub type Matrix = ndarray::Array2<Real>;
/// Dense vector of [`Real`].
pub type Vector = ndarray::Array1<Real>;

/// Bounding box over [`Real`] coordinates.
pub type BoundingBox = corpus::BoundingBox<Real>;
/// Head parameters over [`Real`].
pub type HeadParams = head::HeadParams<Real>;
/// Head gradient over [`Real`].
pub type HeadGradient = head::HeadGradient<Real>;
/// Validated similarity matrix over [`Real`].
pub type SimilarityMatrix = head::SimilarityMatrix<Real>;
/// Validated pairwise label matrix over [`Real`].
pub type LabelMatrix = head::LabelMatrix<Real>;
/// Solver input over [`Real`].
pub type RewardInstance = solver::RewardInstance<Real>;
/// Solver output over [`Real`].
pub type Assignment = solver::Assignment<Real>;

pub use error::{Error, Result};
