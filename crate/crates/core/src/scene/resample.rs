//! Bilinear paste and crop between instance rasters and the canvas.
//!
//! Pixel `(r, c)` has its centre at `(c + 0.5, r + 0.5)`. Samples outside an
//! array read as zero.

use ndarray::{Array2, Array3, ArrayView2, ArrayView3};

use super::blob::Raster;
use crate::boxes::BoundingBox;

/// Instance appearance and weights placed on the canvas; zero outside the box.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub appearance: Array3<f64>,
    pub weights: Array2<f64>,
}

/// Bilinear read at continuous index coordinates `(x, y)` (column, row).
pub fn sample_bilinear(plane: ArrayView2<f64>, x: f64, y: f64) -> f64 {
    let (h, w) = plane.dim();
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (xi, yi) = (x0 as i64, y0 as i64);
    let at = |r: i64, c: i64| -> f64 {
        if r < 0 || c < 0 || r >= h as i64 || c >= w as i64 {
            0.0
        } else {
            plane[(r as usize, c as usize)]
        }
    };
    let mut v = (1.0 - fx) * (1.0 - fy) * at(yi, xi);
    if fx > 0.0 {
        v += fx * (1.0 - fy) * at(yi, xi + 1);
    }
    if fy > 0.0 {
        v += (1.0 - fx) * fy * at(yi + 1, xi);
        if fx > 0.0 {
            v += fx * fy * at(yi + 1, xi + 1);
        }
    }
    v
}

/// Canvas index range whose pixel centres fall inside `[lo, hi)`.
fn covered(lo: f64, hi: f64, n: usize) -> std::ops::Range<usize> {
    let start = (lo - 0.5).ceil().max(0.0);
    let end = (hi - 0.5).ceil().clamp(0.0, n as f64);
    let start = (start as usize).min(n);
    start..(end as usize).max(start)
}

/// Resample `raster` into `bx` on a canvas of `canvas_dims`.
pub fn paste(raster: &Raster, bx: &BoundingBox, canvas_dims: (usize, usize)) -> Layer {
    let (h, w) = canvas_dims;
    let (rh, rw) = raster.dims();
    let channels = raster.appearance.dim().2;
    let mut weights = Array2::zeros((h, w));
    let mut appearance = Array3::zeros((h, w, channels));
    if !(bx.w > 0.0 && bx.h > 0.0) {
        return Layer { appearance, weights };
    }
    let (sx, sy) = (rw as f64 / bx.w, rh as f64 / bx.h);
    let (left, top) = (bx.left(), bx.top());
    let planes: Vec<ArrayView2<f64>> = (0..channels)
        .map(|ch| raster.appearance.index_axis(ndarray::Axis(2), ch))
        .collect();
    for r in covered(top, bx.bottom(), h) {
        let v = (r as f64 + 0.5 - top) * sy - 0.5;
        for c in covered(left, bx.right(), w) {
            let u = (c as f64 + 0.5 - left) * sx - 0.5;
            weights[(r, c)] = sample_bilinear(raster.weights.view(), u, v);
            for (ch, plane) in planes.iter().enumerate() {
                appearance[(r, c, ch)] = sample_bilinear(plane.view(), u, v);
            }
        }
    }
    Layer { appearance, weights }
}

/// Resample the region `bx` of a single plane into an `out_dims` array.
pub fn crop_plane(plane: ArrayView2<f64>, bx: &BoundingBox, out_dims: (usize, usize)) -> Array2<f64> {
    let (oh, ow) = out_dims;
    let (sx, sy) = (bx.w / ow as f64, bx.h / oh as f64);
    let (left, top) = (bx.left(), bx.top());
    Array2::from_shape_fn(out_dims, |(a, b)| {
        let x = left + (b as f64 + 0.5) * sx - 0.5;
        let y = top + (a as f64 + 0.5) * sy - 0.5;
        sample_bilinear(plane, x, y)
    })
}

/// Inverse of [`paste`] for a multi-channel image.
pub fn crop(image: ArrayView3<f64>, bx: &BoundingBox, out_dims: (usize, usize)) -> Array3<f64> {
    let channels = image.dim().2;
    let mut out = Array3::zeros((out_dims.0, out_dims.1, channels));
    for ch in 0..channels {
        let plane = crop_plane(image.index_axis(ndarray::Axis(2), ch), bx, out_dims);
        out.index_axis_mut(ndarray::Axis(2), ch).assign(&plane);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_raster(h: usize, w: usize, seed: u64) -> Raster {
        let mut rng = crate::rng::seeded(seed);
        Raster {
            appearance: Array3::from_shape_fn((h, w, 1), |_| rng.random::<f64>()),
            weights: Array2::from_shape_fn((h, w), |_| 0.999 * rng.random::<f64>()),
        }
    }

    #[test]
    fn aligned_paste_is_a_copy() {
        let raster = random_raster(6, 5, 1);
        let bx = BoundingBox::from_corner(3.0, 2.0, 5.0, 6.0);
        let layer = paste(&raster, &bx, (12, 12));
        for r in 0..12 {
            for c in 0..12 {
                let inside = (2..8).contains(&r) && (3..8).contains(&c);
                let expect = if inside { raster.weights[(r - 2, c - 3)] } else { 0.0 };
                assert_eq!(layer.weights[(r, c)], expect);
            }
        }
    }

    #[test]
    fn half_off_canvas_paste_is_clipped() {
        let raster = random_raster(4, 8, 2);
        let bx = BoundingBox::from_corner(-4.0, 0.0, 8.0, 4.0);
        let layer = paste(&raster, &bx, (6, 6));
        for r in 0..4 {
            for c in 0..4 {
                assert_eq!(layer.weights[(r, c)], raster.weights[(r, c + 4)]);
                assert_eq!(layer.appearance[(r, c, 0)], raster.appearance[(r, c + 4, 0)]);
            }
        }
        assert!(layer.weights.slice(ndarray::s![4.., ..]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn aligned_round_trip_exact() {
        let raster = random_raster(7, 9, 3);
        let bx = BoundingBox::from_corner(4.0, 1.0, 9.0, 7.0);
        let layer = paste(&raster, &bx, (16, 16));
        let back = crop(layer.appearance.view(), &bx, (7, 9));
        let err = back.iter().zip(raster.appearance.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-6);
        let wback = crop_plane(layer.weights.view(), &bx, (7, 9));
        let err = wback.iter().zip(raster.weights.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-6);
    }

    #[test]
    fn bilinear_midpoint() {
        let plane = ndarray::arr2(&[[0.0, 1.0], [2.0, 3.0]]);
        assert!((sample_bilinear(plane.view(), 0.5, 0.5) - 1.5).abs() < 1e-12);
        assert_eq!(sample_bilinear(plane.view(), -1.0, 0.0), 0.0);
        assert!((sample_bilinear(plane.view(), 1.5, 0.0) - 0.5).abs() < 1e-12);
    }
}
