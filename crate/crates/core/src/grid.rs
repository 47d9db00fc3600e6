//! Native pixel grid and the coarse object grid laid over it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Image size plus object-size bounds. The coarse grid spacing is the
/// smallest object size, so each coarse cell can host at most one object
/// centre.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub height_px: usize,
    pub width_px: usize,
    pub min_obj_px: usize,
    pub max_obj_px: usize,
}

impl GridSpec {
    pub fn new(height_px: usize, width_px: usize, min_obj_px: usize, max_obj_px: usize) -> Result<Self> {
        let g = GridSpec { height_px, width_px, min_obj_px, max_obj_px };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_obj_px == 0 {
            return Err(Error::param("min_obj_px must be positive"));
        }
        if self.min_obj_px > self.max_obj_px {
            return Err(Error::param(format!(
                "min_obj_px {} exceeds max_obj_px {}",
                self.min_obj_px, self.max_obj_px
            )));
        }
        if self.max_obj_px > self.height_px.min(self.width_px) {
            return Err(Error::param(format!(
                "max_obj_px {} exceeds image side {}",
                self.max_obj_px,
                self.height_px.min(self.width_px)
            )));
        }
        Ok(())
    }

    pub fn coarse_h(&self) -> usize {
        self.height_px.div_ceil(self.min_obj_px)
    }

    pub fn coarse_w(&self) -> usize {
        self.width_px.div_ceil(self.min_obj_px)
    }

    /// Number of coarse grid points.
    pub fn coarse_len(&self) -> usize {
        self.coarse_h() * self.coarse_w()
    }

    /// Number of native pixels.
    pub fn native_len(&self) -> usize {
        self.height_px * self.width_px
    }
}

/// Binary field over a `rows x cols` grid, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinaryField {
    rows: usize,
    cols: usize,
    values: Vec<bool>,
}

impl BinaryField {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        BinaryField { rows, cols, values: vec![false; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, values: Vec<bool>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::dims(rows * cols, values.len()));
        }
        Ok(BinaryField { rows, cols, values })
    }

    /// Field whose on-bits are given by the low `rows*cols` bits of `mask`.
    pub fn from_bits(rows: usize, cols: usize, mask: u64) -> Self {
        let values = (0..rows * cols).map(|i| mask >> i & 1 == 1).collect();
        BinaryField { rows, cols, values }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, idx: usize) -> bool {
        self.values[idx]
    }

    pub fn set(&mut self, idx: usize, on: bool) {
        self.values[idx] = on;
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    /// Number of on points (K).
    pub fn cardinality(&self) -> usize {
        self.values.iter().filter(|&&v| v).count()
    }

    /// Flat indices of the on points, ascending.
    pub fn on_indices(&self) -> Vec<usize> {
        self.values.iter().enumerate().filter(|(_, &v)| v).map(|(i, _)| i).collect()
    }

    /// Bitmask encoding (only meaningful for at most 64 points).
    pub fn to_bits(&self) -> u64 {
        self.values.iter().enumerate().fold(0u64, |m, (i, &v)| if v { m | 1 << i } else { m })
    }
}

/// Per-point probabilities over a grid, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbField {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl ProbField {
    pub fn constant(rows: usize, cols: usize, p: f64) -> Result<Self> {
        Self::from_vec(rows, cols, vec![p; rows * cols])
    }

    pub fn from_vec(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::dims(rows * cols, values.len()));
        }
        if let Some(bad) = values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::param(format!("probability {bad} outside [0, 1]")));
        }
        Ok(ProbField { rows, cols, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, idx: usize) -> f64 {
        self.values[idx]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}
