use std::f64::consts::PI;

use ndarray::{Array2, Array3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mixing weights live in [0, 1); the inside of a blob is clamped here.
pub const WEIGHT_CEILING: f64 = 1.0 - 1e-3;

const MAX_HARMONICS: usize = 5;

/// Appearance and local mixing weights on the fixed-size instance raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub appearance: Array3<f64>,
    pub weights: Array2<f64>,
}

impl Raster {
    pub fn dims(&self) -> (usize, usize) {
        self.weights.dim()
    }
}

/// Star-shaped blob whose boundary radius is a finite Fourier series in the
/// polar angle around `origin` (raster pixel coordinates, `(x, y)`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierBlobParams {
    pub origin: (f64, f64),
    pub mean_radius: f64,
    /// `(amplitude, phase)` of harmonic `i + 1`.
    pub harmonics: Vec<(f64, f64)>,
    pub intensity: f64,
}

impl FourierBlobParams {
    pub fn disk(origin: (f64, f64), radius: f64) -> Self {
        FourierBlobParams { origin, mean_radius: radius, harmonics: Vec::new(), intensity: 1.0 }
    }

    /// Boundary radius at angle `theta`.
    pub fn radius_at(&self, theta: f64) -> f64 {
        self.mean_radius
            + self
                .harmonics
                .iter()
                .enumerate()
                .map(|(i, (a, phi))| a * ((i + 1) as f64 * theta + phi).cos())
                .sum::<f64>()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mean_radius > 0.0) || !self.intensity.is_finite() {
            return Err(Error::param("blob radius must be positive and intensity finite"));
        }
        // the series is a trigonometric polynomial of degree <= 5, so 4096
        // samples resolve its minimum well
        let min = (0..4096)
            .map(|i| self.radius_at(2.0 * PI * i as f64 / 4096.0))
            .fold(f64::INFINITY, f64::min);
        if !(min > 0.0) {
            return Err(Error::param(format!("blob radial function reaches {min:.4} <= 0")));
        }
        Ok(())
    }

    /// Whether the point `(x, y)` is inside the boundary.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let dx = x - self.origin.0;
        let dy = y - self.origin.1;
        let r = dx.hypot(dy);
        r <= self.radius_at(dy.atan2(dx))
    }
}

/// Rasterise a blob: weight `WEIGHT_CEILING` and appearance `intensity` for
/// pixels whose centre lies inside the boundary, zero elsewhere.
pub fn render_blob(params: &FourierBlobParams, dims: (usize, usize), channels: usize) -> Result<Raster> {
    params.validate()?;
    let (h, w) = dims;
    let mut weights = Array2::zeros((h, w));
    let mut appearance = Array3::zeros((h, w, channels));
    for r in 0..h {
        for c in 0..w {
            if params.contains(c as f64 + 0.5, r as f64 + 0.5) {
                weights[(r, c)] = WEIGHT_CEILING;
                for ch in 0..channels {
                    appearance[(r, c, ch)] = params.intensity;
                }
            }
        }
    }
    Ok(Raster { appearance, weights })
}

/// Distribution over blob parameters for a raster of a given size. Radii are
/// fractions of the raster half-size; the summed harmonic amplitude never
/// exceeds `max_amplitude_frac * mean_radius`, which keeps the boundary
/// strictly positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlobPrior {
    pub radius_frac: (f64, f64),
    pub max_harmonics: usize,
    pub max_amplitude_frac: f64,
    /// Origin displacement from the raster centre, as a fraction of the
    /// half-size.
    pub origin_jitter_frac: f64,
    pub intensity: f64,
}

impl Default for BlobPrior {
    fn default() -> Self {
        BlobPrior {
            radius_frac: (0.6, 0.8),
            max_harmonics: 3,
            max_amplitude_frac: 0.3,
            origin_jitter_frac: 0.05,
            intensity: 1.0,
        }
    }
}

impl BlobPrior {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.radius_frac;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::param("radius_frac must satisfy 0 < lo <= hi <= 1"));
        }
        if self.max_harmonics > MAX_HARMONICS {
            return Err(Error::param(format!("at most {MAX_HARMONICS} harmonics")));
        }
        if !(0.0..=0.4).contains(&self.max_amplitude_frac) {
            return Err(Error::param("max_amplitude_frac must lie in [0, 0.4]"));
        }
        if !(0.0..1.0).contains(&self.origin_jitter_frac) {
            return Err(Error::param("origin_jitter_frac must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, dims: (usize, usize), rng: &mut R) -> FourierBlobParams {
        let half = 0.5 * dims.0.min(dims.1) as f64;
        let (lo, hi) = self.radius_frac;
        let mean_radius = half * (lo + (hi - lo) * rng.random::<f64>());
        let n = if self.max_harmonics == 0 { 0 } else { rng.random_range(0..=self.max_harmonics) };
        let budget = self.max_amplitude_frac * mean_radius * rng.random::<f64>();
        let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
        let total: f64 = raw.iter().sum();
        let harmonics = raw
            .iter()
            .map(|a| (budget * a / total, 2.0 * PI * rng.random::<f64>()))
            .collect();
        let jitter = self.origin_jitter_frac * half;
        let origin = (
            0.5 * dims.1 as f64 + jitter * (2.0 * rng.random::<f64>() - 1.0),
            0.5 * dims.0 as f64 + jitter * (2.0 * rng.random::<f64>() - 1.0),
        );
        FourierBlobParams { origin, mean_radius, harmonics, intensity: self.intensity }
    }
}
