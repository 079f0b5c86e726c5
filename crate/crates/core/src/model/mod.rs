//! The recommender network.
//!
//! [`Model`] owns parameter handles only; values live in a
//! [`ParameterStore`](crate::tensor::ParameterStore). A forward pass binds
//! the handles onto a [`Tape`](crate::tensor::Tape) with [`Model::weights`]
//! and then either scores one context ([`Model::forward`]) or every prefix of
//! a session at once ([`Model::forward_session`]).

mod config;
pub mod layers;
mod network;

pub use config::{Activation, LossMode, ModelConfig, Variant};
pub use network::{
    dropout_mask, loss, session_loss, ForwardTrace, Model, PoolTrace, SessionTrace, Weights,
    PROB_EPS,
};
