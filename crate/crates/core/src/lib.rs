//! Desk-scale self-supervised speaker embedding laboratory.
//!
//! The crate trains small pooled encoders on synthetic multi-speaker frame
//! features with contrastive (SimCLR, MoCo InfoNCE) and self-distillation
//! (DINO) objectives, applies class-collision correction (false-negative
//! filtering, loss re-weighting, ProtoNCE) and scores the resulting
//! embeddings with cosine scoring, EER, minDCF, DET curves and a
//! clustering + LDA back-end.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); training runs
//! in `f64` and the aliases below name the concrete types used there.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backend;
pub mod cssl;
pub mod data;
pub mod dino;
pub mod encoder;
pub mod error;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Mat64 = tensor::Mat<f64>;
pub type EncoderParams64 = encoder::EncoderParams<f64>;
pub type EncoderPair64 = encoder::EncoderPair<f64>;
pub type NegativeQueue64 = cssl::NegativeQueue<f64>;
pub type PrototypeBank64 = cssl::PrototypeBank<f64>;
pub type DinoHead64 = dino::DinoHead<f64>;
pub type CenterState64 = dino::CenterState<f64>;
pub type ScoreSet64 = backend::ScoreSet<f64>;
pub type LdaModel64 = backend::LdaModel<f64>;
