//! Structured scene priors and consensus instance segmentation.
//!
//! - [`dpp`]: determinantal point process over the coarse object grid
//!   (kernel, exact log-probability, exact sampling, Monte-Carlo KL).
//! - [`boxes`]: latent-to-box transform, IoMIN/IoU overlap, score-based NMS
//!   and top-K selection.
//! - [`scene`]: the forward model: blobs, backgrounds, bilinear paste/crop,
//!   mixing probabilities, mask sampling, composition and a posterior-sample
//!   simulator.
//! - [`objective`]: normalised loss terms, the constraint controller with
//!   clamped multipliers, overlap penalty, warm-up blend and noise-scale
//!   estimation.
//! - [`consensus`]: sliding-window tiling, sparse same-objectness graphs,
//!   Leiden community detection and resolution selection.
//! - [`io`], [`metrics`], [`config`], [`app`], [`service`]: file formats,
//!   evaluation, configuration, command implementations and the HTTP API.

pub mod app;
pub mod boxes;
pub mod config;
pub mod consensus;
pub mod dpp;
pub mod error;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod objective;
pub mod rng;
pub mod scene;
pub mod service;

pub use error::{Error, Result};
pub use grid::{BinaryField, GridSpec, ProbField};
