//! Trainable cross-attention adaptor over cached frozen-encoder embeddings.
//!
//! Two frozen backbones (one per modality) are modeled as pre-computed
//! embedding caches. A lightweight adaptor — per-modality linear projections
//! into a shared width followed by a stack of weight-shared cross-attention
//! transformer blocks — fuses the two modalities and is trained with a
//! symmetric temperature-scaled contrastive objective. Everything runs on a
//! small f64 reverse-mode autograd engine, so the whole pipeline is
//! deterministic and checkable against finite differences.
//!
//! The crate is `no_std`-compatible (with `alloc`); enable the `libm` feature
//! when building without `std`. File formats, JSON configs, and the command
//! line live in the companion `adaptor-cli` crate.

#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(all(not(feature = "std"), not(feature = "libm")))]
compile_error!("adaptor-core needs either the `std` or the `libm` feature");

pub mod adaptor;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod objective;
pub mod tensor;
pub mod trainer;

mod math;

pub use error::{Error, Result};
pub use graph::{Graph, NodeId};
pub use tensor::Tensor;
