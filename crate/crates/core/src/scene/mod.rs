//! Forward generative model for modular images.
//!
//! Instances are placed on the coarse grid by a DPP, given boxes through the
//! latent transform in [`crate::boxes`], rendered as Fourier blobs, pasted
//! onto the canvas with bilinear resampling and combined into per-pixel
//! mixing probabilities. A categorical mask picks one layer per pixel and
//! Gaussian noise produces the observed image.

mod background;
mod blob;
mod generate;
mod mixing;
mod posterior;
mod resample;

pub use background::{render_background, Background, BackgroundPrior, GRID_ANGLES_DEG};
pub use blob::{render_blob, BlobPrior, FourierBlobParams, Raster, WEIGHT_CEILING};
pub use generate::{generate_scene, generate_scene_with, SceneBundle, SceneConfig};
pub use mixing::{compose, mix, sample_mask, LabelMap, MixingStack};
pub use posterior::{perturb_stack, simulate_posterior_samples, PosteriorNoise};
pub use resample::{crop, crop_plane, paste, sample_bilinear, Layer};

/// Reference noise scale for normalised synthetic scenes.
pub const SIGMA_REF: f64 = 0.05;

/// Image as `(height, width, channels)`.
pub type Image = ndarray::Array3<f64>;
