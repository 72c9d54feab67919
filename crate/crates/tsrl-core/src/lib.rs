//! Core library for the temporal-shift reinforcement learning lab.
//!
//! The crate provides everything a training run needs that is not
//! command-line plumbing: a small dense tensor type with the handful of
//! neural-network ops used by the Q-networks ([`nn`]), the temporal channel
//! shift and its adjoint ([`shift`]), the Q-network variants built from them
//! ([`qnet`]), a prioritized replay buffer ([`replay`]), the Catch
//! environment ([`env`]), and the double-DQN agent that ties them together
//! ([`agent`]).
//!
//! All floating-point work is generic over [`tensor::Scalar`] so the same
//! code paths run in `f32` for training and `f64` for verification.

pub mod agent;
pub mod env;
pub mod error;
pub mod qnet;
pub mod replay;
pub mod nn;
pub mod shift;
pub mod tensor;

pub use error::{Error, Result};
