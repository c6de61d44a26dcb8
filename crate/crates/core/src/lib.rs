//! Noisy feed-forward networks trained from loss values alone.
//!
//! Every neuron in the networks modeled here carries an additive zero-mean
//! Gaussian noise on its pre-activation signal. That noise is what makes
//! loss-value-only training possible: the likelihood-ratio gradient
//! estimator in [`estimators`] weighs the raw loss by the noise score and
//! never differentiates the loss or the activation, so discontinuous
//! activations (threshold, absolute value) and the discontinuous 0-1 loss
//! train exactly like smooth ones. Classical backpropagation and a
//! finite-difference Monte-Carlo oracle live alongside it as baselines.
//!
//! The crate is `no_std` (with `alloc`): all math routes through `libm`
//! and all randomness through explicit seeded streams, so results are
//! bit-reproducible across platforms. File formats, parallel drivers, and
//! the experiment CLI live in the companion `glrnet-cli` crate.

#![no_std]

#[cfg(test)]
extern crate std;

extern crate alloc;

pub mod attacks;
pub mod corruptions;
pub mod data;
pub mod error;
pub mod estimators;
pub mod losses;
mod math;
pub mod matrix;
pub mod network;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use network::{
    ActivationKind, ActivationSpec, ForwardTrace, NetworkSpec, NoiseSpec, ParameterSet,
};
