//! Estimation of low-rank nonnegative matrices from sampled count data.
//!
//! The crate covers the full pipeline: seeded sampling of Bernoulli masks
//! and Poisson / multinomial count observations ([`sampling`]), spectral
//! estimators built on singular value soft thresholding ([`estimators`]),
//! non-asymptotic error-bound and concentration-level calculators
//! ([`bounds`]), hard low-rank instance families for minimax lower bounds
//! ([`constructions`]), and a deterministic Monte Carlo harness that ties
//! them together ([`mc`]).
//!
//! All randomness flows through a pinned generator (ChaCha8 keyed by a
//! splitmix64 chain, see [`rng`]), so every artifact the crate produces is
//! a pure function of its inputs and seeds.

pub mod bounds;
pub mod constructions;
pub mod error;
pub mod estimators;
pub mod linalg;
pub mod mc;
pub mod rng;
pub mod sampling;

pub use error::{CoreError, Result};
pub use linalg::{DenseMatrix, Mask, MaskedObservations, SvdFactorization};
pub use sampling::{RowMultinomialModel, SamplingConfig};
