//! Moving object segmentation with event-camera priors.
//!
//! The crate is organised around the training and evaluation pipeline:
//!
//! - [`tensor`]: dense tensors, the handful of differentiable operations the
//!   model needs, a gradient tape and a finite-difference checker.
//! - [`supervision`]: event binarization, morphological dilation and the
//!   spatio-temporal target built from masks and events.
//! - [`model`]: encoder, motion-prior generation and prediction, low-rank
//!   attention fusion, decoder, joint loss, AdamW and checkpoints.
//! - [`metrics`]: region similarity (J), contour accuracy (F) and their
//!   aggregates.
//! - [`synthscene`]: a deterministic generator of ego-motion clips with frames,
//!   events, optical flow and moving-object masks.
//!
//! Inference never takes events: they only shape the training target.

pub mod error;
pub mod imageio;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod supervision;
pub mod synthscene;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{DType, Scalar, Tensor};
