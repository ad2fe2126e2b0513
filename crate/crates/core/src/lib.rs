//! Word embeddings for a low-resource, morphologically rich language built
//! from two sources: high-resource vectors projected through a bilingual
//! lexicon, and subword skip-gram vectors trained on the low-resource side.
//! A small attention-based GRU translation model and BLEU scoring evaluate
//! the initialization strategies downstream.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the crate root fix the scalar for common uses.

pub mod combine;
pub mod corpus;
pub mod embedstore;
pub mod error;
pub mod lexproject;
pub mod metrics;
pub mod nmt;
pub mod scalar;
pub mod subword;
pub mod xmap;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type EmbeddingMatrixF32 = embedstore::EmbeddingMatrix<f32>;
pub type EmbeddingMatrixF64 = embedstore::EmbeddingMatrix<f64>;
pub type SubwordModelF32 = subword::SubwordModel<f32>;
pub type SubwordModelF64 = subword::SubwordModel<f64>;
pub type MappingModelF32 = xmap::MappingModel<f32>;
pub type MappingModelF64 = xmap::MappingModel<f64>;
pub type InitializedEmbeddingsF32 = combine::InitializedEmbeddings<f32>;
pub type InitializedEmbeddingsF64 = combine::InitializedEmbeddings<f64>;
pub type Seq2SeqF32 = nmt::Seq2Seq<f32>;
pub type Seq2SeqF64 = nmt::Seq2Seq<f64>;
