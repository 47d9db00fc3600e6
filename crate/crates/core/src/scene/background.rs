use ndarray::Array3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Orientations available to the line-grid background. A square grid is
/// invariant under 90 degree rotations, so these four are all distinct.
pub const GRID_ANGLES_DEG: [f64; 4] = [0.0, 22.5, 45.0, 67.5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Background {
    Flat { level: f64 },
    /// Square grid of one-pixel lines with the given spacing, rotated by
    /// `GRID_ANGLES_DEG[angle_index]`.
    OrientedGrid { spacing: f64, angle_index: usize, contrast: f64 },
}

pub fn render_background(kind: &Background, dims: (usize, usize), channels: usize) -> Result<Array3<f64>> {
    let (h, w) = dims;
    match *kind {
        Background::Flat { level } => Ok(Array3::from_elem((h, w, channels), level)),
        Background::OrientedGrid { spacing, angle_index, contrast } => {
            if !(spacing >= 2.0 && spacing.is_finite()) {
                return Err(Error::param(format!("grid spacing must be >= 2 px, got {spacing}")));
            }
            let angle = GRID_ANGLES_DEG
                .get(angle_index)
                .ok_or_else(|| Error::param(format!("angle index {angle_index} out of range")))?
                .to_radians();
            let (s, c) = angle.sin_cos();
            let on_line = |t: f64| t.rem_euclid(spacing) < 1.0;
            Ok(Array3::from_shape_fn((h, w, channels), |(r, col, _)| {
                let (x, y) = (col as f64, r as f64);
                let u = x * c + y * s;
                let v = -x * s + y * c;
                if on_line(u) || on_line(v) {
                    contrast
                } else {
                    0.0
                }
            }))
        }
    }
}

/// Random background: flat with probability `flat_prob`, otherwise a grid
/// with uniform spacing in `spacing` and one of the four angles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackgroundPrior {
    pub flat_prob: f64,
    pub flat_level: f64,
    pub spacing: (f64, f64),
    pub contrast: f64,
}

impl Default for BackgroundPrior {
    fn default() -> Self {
        BackgroundPrior { flat_prob: 0.0, flat_level: 0.0, spacing: (6.0, 14.0), contrast: 0.3 }
    }
}

impl BackgroundPrior {
    pub fn flat(level: f64) -> Self {
        BackgroundPrior { flat_prob: 1.0, flat_level: level, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.flat_prob) {
            return Err(Error::param("flat_prob must lie in [0, 1]"));
        }
        if self.flat_prob < 1.0 && !(self.spacing.0 >= 2.0 && self.spacing.0 <= self.spacing.1) {
            return Err(Error::param("grid spacing range must satisfy 2 <= lo <= hi"));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Background {
        if rng.random::<f64>() < self.flat_prob {
            return Background::Flat { level: self.flat_level };
        }
        let (lo, hi) = self.spacing;
        Background::OrientedGrid {
            spacing: lo + (hi - lo) * rng.random::<f64>(),
            angle_index: rng.random_range(0..GRID_ANGLES_DEG.len()),
            contrast: self.contrast,
        }
    }
}
