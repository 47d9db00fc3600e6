//! Perturbed copies of a ground-truth mixing stack, used in place of samples
//! from a trained inference network.

use ndarray::{s, Array2, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::generate::SceneBundle;
use super::mixing::{mix, MixingStack};
use crate::error::{Error, Result};

/// Error modes applied independently to every instance of every sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PosteriorNoise {
    /// Boundary dilation/erosion radius bound, as a fraction of the minimum
    /// object size.
    pub mask_jitter: f64,
    /// Standard deviation of the whole-pixel translation of each instance.
    pub box_jitter_px: f64,
    pub drop_prob: f64,
    /// Probability of cutting an instance in two along a random line through
    /// its centroid.
    pub split_prob: f64,
}

impl Default for PosteriorNoise {
    fn default() -> Self {
        PosteriorNoise { mask_jitter: 0.1, box_jitter_px: 2.0, drop_prob: 0.05, split_prob: 0.05 }
    }
}

impl PosteriorNoise {
    pub const NONE: PosteriorNoise = PosteriorNoise { mask_jitter: 0.0, box_jitter_px: 0.0, drop_prob: 0.0, split_prob: 0.0 };

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mask_jitter) {
            return Err(Error::param("mask_jitter must lie in [0, 1]"));
        }
        if !(self.box_jitter_px >= 0.0 && self.box_jitter_px.is_finite()) {
            return Err(Error::param("box_jitter_px must be finite and non-negative"));
        }
        if !(0.0..=1.0).contains(&self.drop_prob) || !(0.0..=1.0).contains(&self.split_prob) {
            return Err(Error::param("drop_prob and split_prob must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        *self == Self::NONE
    }
}

/// Rows and columns holding non-zero mass, or `None` for an empty plane.
fn support_bounds(plane: ArrayView2<f64>) -> Option<(usize, usize, usize, usize)> {
    let mut b: Option<(usize, usize, usize, usize)> = None;
    for ((r, c), &v) in plane.indexed_iter() {
        if v > 0.0 {
            b = Some(match b {
                None => (r, r, c, c),
                Some((r0, r1, c0, c1)) => (r0.min(r), r1.max(r), c0.min(c), c1.max(c)),
            });
        }
    }
    b
}

/// Grayscale dilation (`radius > 0`) or erosion (`radius < 0`) with a disk.
/// Out-of-canvas neighbours are ignored, so the canvas edge does not erode.
fn morph(plane: &Array2<f64>, radius: i64) -> Array2<f64> {
    if radius == 0 {
        return plane.clone();
    }
    let Some((r0, r1, c0, c1)) = support_bounds(plane.view()) else {
        return plane.clone();
    };
    let (h, w) = plane.dim();
    let rad = radius.abs();
    let offsets: Vec<(i64, i64)> = (-rad..=rad)
        .flat_map(|dy| (-rad..=rad).map(move |dx| (dy, dx)))
        .filter(|(dy, dx)| dy * dy + dx * dx <= rad * rad)
        .collect();
    let dilate = radius > 0;
    let grow = if dilate { rad as usize } else { 0 };
    let (ra, rb) = (r0.saturating_sub(grow), (r1 + grow).min(h - 1));
    let (ca, cb) = (c0.saturating_sub(grow), (c1 + grow).min(w - 1));
    let mut out = Array2::zeros((h, w));
    for r in ra..=rb {
        for c in ca..=cb {
            let mut acc = if dilate { 0.0 } else { f64::INFINITY };
            for &(dy, dx) in &offsets {
                let (y, x) = (r as i64 + dy, c as i64 + dx);
                if y < 0 || x < 0 || y >= h as i64 || x >= w as i64 {
                    continue;
                }
                let v = plane[(y as usize, x as usize)];
                acc = if dilate { acc.max(v) } else { acc.min(v) };
            }
            out[(r, c)] = acc;
        }
    }
    out
}

/// Translate by whole pixels with zero fill.
fn shift(plane: &Array2<f64>, dy: i64, dx: i64) -> Array2<f64> {
    let (h, w) = plane.dim();
    let mut out = Array2::zeros((h, w));
    let span = |d: i64, n: usize| -> Option<(usize, usize, usize)> {
        let n = n as i64;
        let (src, dst) = if d >= 0 { (0, d) } else { (-d, 0) };
        let len = n - d.abs();
        (len > 0).then_some((src as usize, dst as usize, len as usize))
    };
    if let (Some((sr, dr, lr)), Some((sc, dc, lc))) = (span(dy, h), span(dx, w)) {
        out.slice_mut(s![dr..dr + lr, dc..dc + lc]).assign(&plane.slice(s![sr..sr + lr, sc..sc + lc]));
    }
    out
}

/// Split along the line through the mass centroid with normal angle `theta`.
fn split(plane: &Array2<f64>, theta: f64) -> Option<(Array2<f64>, Array2<f64>)> {
    let mass: f64 = plane.sum();
    if mass <= 0.0 {
        return None;
    }
    let (mut cy, mut cx) = (0.0, 0.0);
    for ((r, c), &v) in plane.indexed_iter() {
        cy += v * r as f64;
        cx += v * c as f64;
    }
    cy /= mass;
    cx /= mass;
    let (sn, cs) = theta.sin_cos();
    let mut a = plane.clone();
    let mut b = Array2::zeros(plane.dim());
    for ((r, c), v) in a.indexed_iter_mut() {
        if (c as f64 - cx) * cs + (r as f64 - cy) * sn < 0.0 {
            b[(r, c)] = *v;
            *v = 0.0;
        }
    }
    let nonempty = |p: &Array2<f64>| p.iter().any(|&v| v > 0.0);
    (nonempty(&a) && nonempty(&b)).then_some((a, b))
}

/// One simulated posterior sample: each instance plane is dropped, jittered,
/// shifted and possibly split, then the planes are re-mixed.
pub fn perturb_stack<R: Rng + ?Sized>(stack: &MixingStack, noise: &PosteriorNoise, min_obj_px: usize, rng: &mut R) -> Result<MixingStack> {
    noise.validate()?;
    if noise.is_zero() {
        return Ok(stack.clone());
    }
    let radius = (noise.mask_jitter * min_obj_px as f64).floor() as i64;
    let mut planes: Vec<Array2<f64>> = Vec::with_capacity(stack.num_instances() + 1);
    for k in 1..=stack.num_instances() {
        if rng.random::<f64>() < noise.drop_prob {
            continue;
        }
        let mut plane = stack.plane(k).to_owned();
        if radius > 0 {
            plane = morph(&plane, rng.random_range(-radius..=radius));
        }
        if noise.box_jitter_px > 0.0 {
            let dy: f64 = StandardNormal.sample(rng);
            let dx: f64 = StandardNormal.sample(rng);
            let (dy, dx) = ((dy * noise.box_jitter_px).round() as i64, (dx * noise.box_jitter_px).round() as i64);
            if dy != 0 || dx != 0 {
                plane = shift(&plane, dy, dx);
            }
        }
        if rng.random::<f64>() < noise.split_prob {
            let theta = std::f64::consts::PI * rng.random::<f64>();
            if let Some((a, b)) = split(&plane, theta) {
                planes.push(a);
                planes.push(b);
                continue;
            }
        }
        if plane.iter().any(|&v| v > 0.0) {
            planes.push(plane);
        }
    }
    let views: Vec<ArrayView2<f64>> = planes.iter().map(|p| p.view()).collect();
    mix(&views, stack.dims())
}

/// `n_post` independent perturbations of the scene's ground-truth stack.
pub fn simulate_posterior_samples<R: Rng + ?Sized>(
    bundle: &SceneBundle,
    noise: &PosteriorNoise,
    n_post: usize,
    rng: &mut R,
) -> Result<Vec<MixingStack>> {
    if n_post == 0 {
        return Err(Error::param("n_post must be at least 1"));
    }
    (0..n_post)
        .map(|_| perturb_stack(&bundle.truth_pi, noise, bundle.grid.min_obj_px, rng))
        .collect()
}
