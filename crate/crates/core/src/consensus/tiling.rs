use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sliding-window layout over a padded canvas.
///
/// Window origins are on the padded canvas; `pad_px` rows/columns are added
/// before the image and `pad_end` after it, so every image pixel is covered by
/// the same number of windows when the stride divides the window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowPlan {
    pub image_dims: (usize, usize),
    pub window_px: usize,
    pub stride_px: usize,
    pub pad_px: usize,
    pub pad_end: (usize, usize),
    pub windows: Vec<(usize, usize)>,
}

impl WindowPlan {
    pub fn padded_dims(&self) -> (usize, usize) {
        (
            self.image_dims.0 + self.pad_px + self.pad_end.0,
            self.image_dims.1 + self.pad_px + self.pad_end.1,
        )
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// Window origin in image coordinates; negative inside the leading pad.
    pub fn image_origin(&self, w: usize) -> (i64, i64) {
        let (r, c) = self.windows[w];
        (r as i64 - self.pad_px as i64, c as i64 - self.pad_px as i64)
    }

    /// Number of windows containing each image pixel.
    pub fn coverage(&self) -> Array2<u32> {
        let (h, w) = self.image_dims;
        let mut cov = Array2::zeros((h, w));
        for i in 0..self.len() {
            let (top, left) = self.image_origin(i);
            let r0 = top.max(0) as usize;
            let c0 = left.max(0) as usize;
            let r1 = (top + self.window_px as i64).clamp(0, h as i64) as usize;
            let c1 = (left + self.window_px as i64).clamp(0, w as i64) as usize;
            if r1 > r0 && c1 > c0 {
                cov.slice_mut(s![r0..r1, c0..c1]).mapv_inplace(|v| v + 1);
            }
        }
        cov
    }
}

/// Global pixel ids on the padded canvas: interior `row * W + col`, padding -1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexMatrix {
    pub values: Array2<i64>,
}

impl IndexMatrix {
    pub fn crop(&self, origin: (usize, usize), size: usize) -> ArrayView2<'_, i64> {
        self.values.slice(s![origin.0..origin.0 + size, origin.1..origin.1 + size])
    }
}

/// Origins along one axis: first at 0 (image coordinate `-pad`), last at or
/// past `n - stride` so the trailing pixels see the full multiplicity.
fn axis_windows(n: usize, window: usize, stride: usize, pad: usize) -> (usize, usize) {
    let span = n as i64 + window as i64 - 2 * stride as i64;
    let count = if span <= 0 { 1 } else { (span as usize).div_ceil(stride) + 1 };
    let last = (count - 1) * stride;
    let end = (last + window).saturating_sub(n + pad);
    (count, end)
}

pub fn tile_plan(image_dims: (usize, usize), window_px: usize, stride_px: usize) -> Result<(WindowPlan, IndexMatrix)> {
    let (h, w) = image_dims;
    if h == 0 || w == 0 {
        return Err(Error::param("image dims must be positive"));
    }
    if window_px == 0 || stride_px == 0 {
        return Err(Error::param("window and stride must be positive"));
    }
    if stride_px > window_px {
        return Err(Error::param(format!("stride {stride_px} exceeds window {window_px}")));
    }
    let pad = window_px - stride_px;
    let (nr, end_r) = axis_windows(h, window_px, stride_px, pad);
    let (nc, end_c) = axis_windows(w, window_px, stride_px, pad);
    let windows = (0..nr)
        .flat_map(|i| (0..nc).map(move |j| (i * stride_px, j * stride_px)))
        .collect();
    let plan = WindowPlan { image_dims, window_px, stride_px, pad_px: pad, pad_end: (end_r, end_c), windows };
    let (ph, pw) = plan.padded_dims();
    let mut values = Array2::from_elem((ph, pw), -1i64);
    for r in 0..h {
        for c in 0..w {
            values[(r + pad, c + pad)] = (r * w + c) as i64;
        }
    }
    Ok((plan, IndexMatrix { values }))
}

/// Mirror index without repeating the edge sample; periodic beyond one
/// reflection.
fn reflect(i: i64, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as i64 - 1);
    let m = i.rem_euclid(period);
    (if m < n as i64 { m } else { period - m }) as usize
}

/// Image padded as described by `plan`, reflecting at the borders.
pub fn reflect_pad(image: ArrayView3<f64>, plan: &WindowPlan) -> Result<Array3<f64>> {
    let (h, w, ch) = image.dim();
    if (h, w) != plan.image_dims {
        return Err(Error::dims(plan.image_dims, (h, w)));
    }
    let (ph, pw) = plan.padded_dims();
    let pad = plan.pad_px as i64;
    Ok(Array3::from_shape_fn((ph, pw, ch), |(r, c, k)| {
        image[(reflect(r as i64 - pad, h), reflect(c as i64 - pad, w), k)]
    }))
}
