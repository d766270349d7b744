//! File formats, JSON configs, and command implementations for the
//! `adaptor` binary: generate synthetic embedding caches, pre-train the
//! adaptor, evaluate frozen checkpoints, and inspect artifacts.
//!
//! The numerical substance lives in `adaptor-core`; this crate owns
//! everything that touches the filesystem: the `ADPC` cache format, the
//! `ADPK` checkpoint format, JSONL metrics logs, and the append-only
//! output-directory policy.

pub mod adpc;
pub mod adpk;
pub mod commands;
pub mod error;
pub mod fsutil;
pub mod runconfig;
pub mod wire;

pub use error::{CliError, FormatError, Result};
