//! Session-based next-item recommendation with similar-session retrieval.
//!
//! The model encodes the items seen so far in the current session with a
//! GRU, retrieves similar sessions from the current user's history and from
//! the histories of users with overlapping item sets, and shifts the local
//! preference vector by the similarity-weighted preferences found there
//! before scoring every item.
//!
//! Modules, bottom-up:
//!
//! - [`tensor`]: dense tensors, reverse-mode tape, parameter store, checkpoint container
//! - [`data`]: interaction logs to sessionized, filtered, per-user split corpora
//! - [`retrieval`]: similar-user table and candidate session pools
//! - [`model`]: the network, its ablation variants and losses
//! - [`train`]: user-aware batching, Adam, early stopping, checkpoints
//! - [`eval`]: ranking metrics, length-stratified reports, ablation runs
//! - [`synthetic`]: generated corpora with known structure

pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod retrieval;
pub mod synthetic;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
