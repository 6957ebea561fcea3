//! Training sandbox for a one-layer transformer on sparse modular addition.
//!
//! The crate is organised bottom-up: [`numerics`] → [`task`] → [`model`] →
//! [`gradients`] → [`training`] / [`diagnostics`] → [`snapshot`] / [`render`].

pub mod diagnostics;
pub mod error;
pub mod gradients;
pub mod model;
pub mod numerics;
pub mod render;
pub mod rng;
pub mod snapshot;
pub mod task;
pub mod training;
