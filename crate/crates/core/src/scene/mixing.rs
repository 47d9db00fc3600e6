use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Per-pixel simplex over background (index 0) and `K` instances, stored as
/// `(K + 1, H, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingStack {
    pi: Array3<f64>,
}

impl MixingStack {
    /// Wrap a stack, checking the simplex invariant to `tol`.
    pub fn new(pi: Array3<f64>, tol: f64) -> Result<Self> {
        let stack = MixingStack { pi };
        stack.check(tol)?;
        Ok(stack)
    }

    /// Background-only stack.
    pub fn empty(dims: (usize, usize)) -> Self {
        MixingStack { pi: Array3::ones((1, dims.0, dims.1)) }
    }

    /// One-hot stack from a label map with labels in `0..=k`.
    pub fn one_hot(labels: &LabelMap, k: usize) -> Result<Self> {
        let (h, w) = labels.dims();
        let mut pi = Array3::zeros((k + 1, h, w));
        for ((r, c), &l) in labels.labels.indexed_iter() {
            if l as usize > k {
                return Err(Error::param(format!("label {l} exceeds {k}")));
            }
            pi[(l as usize, r, c)] = 1.0;
        }
        Ok(MixingStack { pi })
    }

    pub fn check(&self, tol: f64) -> Result<()> {
        if self.pi.dim().0 == 0 {
            return Err(Error::param("stack needs a background plane"));
        }
        if self.pi.iter().any(|&v| !(v >= -tol)) {
            return Err(Error::param("negative or NaN mixing probability"));
        }
        for col in self.pi.sum_axis(Axis(0)).iter() {
            if (col - 1.0).abs() > tol {
                return Err(Error::param(format!("mixing column sums to {col}")));
            }
        }
        Ok(())
    }

    pub fn as_array(&self) -> &Array3<f64> {
        &self.pi
    }

    pub fn into_array(self) -> Array3<f64> {
        self.pi
    }

    /// Number of instance planes `K`.
    pub fn num_instances(&self) -> usize {
        self.pi.dim().0 - 1
    }

    pub fn dims(&self) -> (usize, usize) {
        let (_, h, w) = self.pi.dim();
        (h, w)
    }

    /// Plane `k` (0 = background).
    pub fn plane(&self, k: usize) -> ArrayView2<'_, f64> {
        self.pi.index_axis(Axis(0), k)
    }

    pub fn get(&self, k: usize, r: usize, c: usize) -> f64 {
        self.pi[(k, r, c)]
    }

    /// Window `[top, top + h) x [left, left + w)` in canvas coordinates
    /// (possibly extending past the canvas, which reads as background).
    /// Instances with no mass inside the window are dropped.
    pub fn window(&self, top: i64, left: i64, dims: (usize, usize)) -> MixingStack {
        let (h, w) = self.dims();
        let (wh, ww) = dims;
        let r0 = top.clamp(0, h as i64) as usize;
        let r1 = (top + wh as i64).clamp(0, h as i64) as usize;
        let c0 = left.clamp(0, w as i64) as usize;
        let c1 = (left + ww as i64).clamp(0, w as i64) as usize;
        let (dr, dc) = ((r0 as i64 - top) as usize, (c0 as i64 - left) as usize);
        let present: Vec<usize> = (1..=self.num_instances())
            .filter(|&k| r1 > r0 && c1 > c0 && self.pi.slice(s![k, r0..r1, c0..c1]).iter().any(|&v| v > 0.0))
            .collect();
        let mut pi = Array3::zeros((present.len() + 1, wh, ww));
        pi.index_axis_mut(Axis(0), 0).fill(1.0);
        if r1 > r0 && c1 > c0 {
            let rows = dr..dr + (r1 - r0);
            let cols = dc..dc + (c1 - c0);
            pi.slice_mut(s![0, rows.clone(), cols.clone()]).assign(&self.pi.slice(s![0, r0..r1, c0..c1]));
            for (i, &k) in present.iter().enumerate() {
                pi.slice_mut(s![i + 1, rows.clone(), cols.clone()]).assign(&self.pi.slice(s![k, r0..r1, c0..c1]));
            }
        }
        MixingStack { pi }
    }
}

/// Quantised segmentation mask; 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub labels: Array2<u32>,
}

impl LabelMap {
    pub fn new(labels: Array2<u32>) -> Self {
        LabelMap { labels }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.labels.dim()
    }

    /// Distinct non-zero labels present.
    pub fn instance_count(&self) -> usize {
        let mut seen: Vec<u32> = self.labels.iter().copied().filter(|&l| l != 0).collect();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }
}

/// Mixing probabilities from local weights:
/// `pi_k = w_k / max(1, sum_j w_j)`, `pi_0 = 1 - sum_k pi_k`.
pub fn mix(weights: &[ArrayView2<f64>], dims: (usize, usize)) -> Result<MixingStack> {
    let (h, w) = dims;
    if let Some(bad) = weights.iter().find(|wk| wk.dim() != dims) {
        return Err(Error::dims(dims, bad.dim()));
    }
    let k = weights.len();
    let mut pi = Array3::zeros((k + 1, h, w));
    for r in 0..h {
        for c in 0..w {
            let total: f64 = weights.iter().map(|wk| wk[(r, c)]).sum();
            let norm = total.max(1.0);
            let mut fg = 0.0;
            for (i, wk) in weights.iter().enumerate() {
                let p = wk[(r, c)] / norm;
                pi[(i + 1, r, c)] = p;
                fg += p;
            }
            pi[(0, r, c)] = 1.0 - fg;
        }
    }
    Ok(MixingStack { pi })
}

/// Independent categorical draw per pixel.
pub fn sample_mask<R: Rng + ?Sized>(pi: &MixingStack, rng: &mut R) -> LabelMap {
    let (h, w) = pi.dims();
    let k1 = pi.num_instances() + 1;
    let labels = Array2::from_shape_fn((h, w), |(r, c)| {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for k in 0..k1 {
            acc += pi.get(k, r, c);
            if u < acc {
                return k as u32;
            }
        }
        // rounding left a sliver above the cumulative sum: take the last
        // plane with positive mass
        (0..k1).rev().find(|&k| pi.get(k, r, c) > 0.0).unwrap_or(0) as u32
    });
    LabelMap { labels }
}

/// `x(p) ~ Normal(y_{m(p)}(p), sigma)`; `layers[0]` is the background.
/// `sigma = 0` gives the noiseless limit.
pub fn compose<R: Rng + ?Sized>(m: &LabelMap, layers: &[Array3<f64>], sigma: f64, rng: &mut R) -> Result<Array3<f64>> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::param(format!("sigma must be non-negative, got {sigma}")));
    }
    let (h, w) = m.dims();
    let first = layers.first().ok_or_else(|| Error::param("compose needs a background layer"))?;
    let channels = first.dim().2;
    if let Some(bad) = layers.iter().find(|y| y.dim() != (h, w, channels)) {
        return Err(Error::dims((h, w, channels), bad.dim()));
    }
    let mut x = Array3::zeros((h, w, channels));
    for ((r, c), &l) in m.labels.indexed_iter() {
        let y = layers
            .get(l as usize)
            .ok_or_else(|| Error::param(format!("label {l} has no layer")))?;
        for ch in 0..channels {
            let noise: f64 = if sigma > 0.0 { StandardNormal.sample(rng) } else { 0.0 };
            x[(r, c, ch)] = y[(r, c, ch)] + sigma * noise;
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use ndarray::arr2;

    #[test]
    fn single_instance_passes_through() {
        let w = arr2(&[[0.2, 0.9], [0.0, 0.5]]);
        let st = mix(&[w.view()], (2, 2)).unwrap();
        assert_eq!(st.plane(1), w.view());
        for (p0, wv) in st.plane(0).iter().zip(w.iter()) {
            assert_eq!(*p0, 1.0 - wv);
        }
    }

    #[test]
    fn saturated_pair_is_renormalised() {
        let w = arr2(&[[0.9]]);
        let st = mix(&[w.view(), w.view()], (1, 1)).unwrap();
        assert!((st.get(1, 0, 0) - 0.5).abs() < 1e-15);
        assert!((st.get(2, 0, 0) - 0.5).abs() < 1e-15);
        assert!(st.get(0, 0, 0).abs() < 1e-15);
    }

    #[test]
    fn empty_scene_is_background() {
        let st = mix(&[], (3, 4)).unwrap();
        assert_eq!(st.num_instances(), 0);
        assert!(st.plane(0).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn one_hot_mask_is_argmax() {
        let labels = LabelMap::new(arr2(&[[0, 1], [2, 1]]));
        let st = MixingStack::one_hot(&labels, 2).unwrap();
        assert_eq!(sample_mask(&st, &mut seeded(0)), labels);
    }

    #[test]
    fn coin_flip_pixel() {
        let w = arr2(&[[0.5]]);
        let st = mix(&[w.view()], (1, 1)).unwrap();
        let mut rng = seeded(9);
        let n = 100_000;
        let ones = (0..n).filter(|_| sample_mask(&st, &mut rng).labels[(0, 0)] == 1).count() as f64;
        assert!((ones - 0.5 * n as f64).abs() < 4.0 * (0.25 * n as f64).sqrt());
    }

    #[test]
    fn noiseless_compose_selects_layers() {
        let labels = LabelMap::new(arr2(&[[0, 1]]));
        let y0 = Array3::from_elem((1, 2, 1), 0.25);
        let y1 = Array3::from_elem((1, 2, 1), 0.75);
        let x = compose(&labels, &[y0, y1], 0.0, &mut seeded(0)).unwrap();
        assert_eq!(x[(0, 0, 0)], 0.25);
        assert_eq!(x[(0, 1, 0)], 0.75);
        assert!(compose(&labels, &[Array3::zeros((1, 2, 1))], 0.1, &mut seeded(0)).is_err());
    }

    #[test]
    fn window_drops_absent_instances_and_pads_background() {
        let labels = LabelMap::new(arr2(&[[1, 0, 0], [0, 0, 2]]));
        let st = MixingStack::one_hot(&labels, 2).unwrap();
        let win = st.window(-1, 1, (3, 3));
        assert_eq!(win.num_instances(), 1);
        win.check(1e-12).unwrap();
        assert_eq!(win.get(1, 2, 1), 1.0);
        assert_eq!(win.get(0, 0, 0), 1.0);
    }
}
