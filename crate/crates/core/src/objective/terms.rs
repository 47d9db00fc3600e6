use ndarray::{Array3, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::MixingStack;

/// Normalised loss components. `total_kl` is the sum of the four KL terms.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub rec: f64,
    pub kl_bg: f64,
    pub kl_fg: f64,
    pub kl_box: f64,
    pub kl_grid: f64,
    pub total_kl: f64,
}

impl LossTerms {
    pub fn with_rec(self, rec: f64) -> Self {
        LossTerms { rec, ..self }
    }
}

/// Moving-average scale of the grid KL. The first observation initialises it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NGridState {
    pub ema: Option<f64>,
    pub decay: f64,
}

impl Default for NGridState {
    fn default() -> Self {
        NGridState { ema: None, decay: 0.9 }
    }
}

impl NGridState {
    pub fn new(decay: f64) -> Result<Self> {
        if !(decay > 0.0 && decay < 1.0) {
            return Err(Error::param(format!("decay must lie in (0, 1), got {decay}")));
        }
        Ok(NGridState { ema: None, decay })
    }

    pub fn update(self, observation: f64) -> Self {
        let x = observation.abs();
        let ema = match self.ema {
            None => x,
            Some(m) => self.decay * m + (1.0 - self.decay) * x,
        };
        NGridState { ema: Some(ema), ..self }
    }
}

/// Diagonal Gaussian posterior over one latent block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPosterior {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl GaussianPosterior {
    pub fn prior(dim: usize) -> Self {
        GaussianPosterior { mu: vec![0.0; dim], sigma: vec![1.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn kl(&self) -> Result<f64> {
        gaussian_kl(&self.mu, &self.sigma)
    }
}

/// Latent sizes used by the per-term prefactors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KlDims {
    pub d_bg: usize,
    pub d_fg: usize,
}

impl Default for KlDims {
    fn default() -> Self {
        KlDims { d_bg: 20, d_fg: 20 }
    }
}

/// Per-pixel mean reconstruction error weighted by the mixing probabilities.
pub fn recon_loss(x: ArrayView3<f64>, pi: &MixingStack, layers: &[Array3<f64>], sigma: f64) -> Result<f64> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::param(format!("sigma must be positive, got {sigma}")));
    }
    let (h, w, ch) = x.dim();
    if pi.dims() != (h, w) {
        return Err(Error::dims((h, w), pi.dims()));
    }
    if layers.len() != pi.num_instances() + 1 {
        return Err(Error::dims(pi.num_instances() + 1, layers.len()));
    }
    if let Some(bad) = layers.iter().find(|y| y.dim() != x.dim()) {
        return Err(Error::dims(x.dim(), bad.dim()));
    }
    let mut total = 0.0;
    for (k, y) in layers.iter().enumerate() {
        let plane = pi.plane(k);
        for r in 0..h {
            for c in 0..w {
                let p = plane[(r, c)];
                if p == 0.0 {
                    continue;
                }
                let d2: f64 = (0..ch).map(|i| (x[(r, c, i)] - y[(r, c, i)]).powi(2)).sum();
                total += p * d2;
            }
        }
    }
    Ok(total / (2.0 * sigma * sigma * (h * w) as f64))
}

/// `KL[N(mu, sigma) || N(0, 1)]` for a diagonal Gaussian.
pub fn gaussian_kl(mu: &[f64], sigma: &[f64]) -> Result<f64> {
    if mu.len() != sigma.len() {
        return Err(Error::dims(mu.len(), sigma.len()));
    }
    let mut acc = 0.0;
    for (&m, &s) in mu.iter().zip(sigma) {
        if !(s > 0.0) {
            return Err(Error::param(format!("posterior scale must be positive, got {s}")));
        }
        let s2 = s * s;
        acc += s2 + m * m - 1.0 - s2.ln();
    }
    Ok(0.5 * acc)
}

/// KL terms with their prefactors: `1/D_bg`, `1/(D_fg K)`, `1/(4K)` and the
/// moving-average grid normaliser, which is updated with `|grid_kl|` first.
pub fn kl_total(
    bg: &GaussianPosterior,
    fg: &[GaussianPosterior],
    boxes: &[GaussianPosterior],
    grid_kl: f64,
    dims: KlDims,
    state: NGridState,
) -> Result<(LossTerms, NGridState)> {
    if !grid_kl.is_finite() {
        return Err(Error::Numerical(format!("grid KL is {grid_kl}")));
    }
    if bg.dim() != dims.d_bg {
        return Err(Error::dims(dims.d_bg, bg.dim()));
    }
    if fg.len() != boxes.len() {
        return Err(Error::dims(fg.len(), boxes.len()));
    }
    if let Some(bad) = fg.iter().find(|g| g.dim() != dims.d_fg) {
        return Err(Error::dims(dims.d_fg, bad.dim()));
    }
    if let Some(bad) = boxes.iter().find(|g| g.dim() != 4) {
        return Err(Error::dims(4, bad.dim()));
    }
    let k = fg.len();
    let kl_bg = bg.kl()? / dims.d_bg.max(1) as f64;
    let (kl_fg, kl_box) = if k == 0 {
        (0.0, 0.0)
    } else {
        let sum = |gs: &[GaussianPosterior]| -> Result<f64> { gs.iter().map(GaussianPosterior::kl).sum() };
        (sum(fg)? / (dims.d_fg.max(1) * k) as f64, sum(boxes)? / (4 * k) as f64)
    };
    let state = state.update(grid_kl);
    // a zero scale can only follow all-zero observations, so the raw value is 0
    let kl_grid = match state.ema {
        Some(m) if m > 0.0 => grid_kl / m,
        _ => grid_kl,
    };
    let terms = LossTerms { rec: 0.0, kl_bg, kl_fg, kl_box, kl_grid, total_kl: kl_bg + kl_fg + kl_box + kl_grid };
    Ok((terms, state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::scene::{mix, LabelMap};
    use ndarray::{s, Array2};
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn perfect_and_offset_reconstruction() {
        let y0 = Array3::from_elem((5, 4, 1), 0.3);
        let pi = MixingStack::empty((5, 4));
        assert_eq!(recon_loss(y0.view(), &pi, &[y0.clone()], 0.05).unwrap(), 0.0);
        let x = y0.mapv(|v| v + 0.1);
        let got = recon_loss(x.view(), &pi, &[y0], 0.05).unwrap();
        let want = 0.01 / (2.0 * 0.0025);
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn recon_matches_double_loop() {
        let mut rng = seeded(4);
        let w1 = Array2::from_shape_fn((4, 4), |_| 0.99 * rng.random::<f64>());
        let w2 = Array2::from_shape_fn((4, 4), |_| 0.99 * rng.random::<f64>());
        let pi = mix(&[w1.view(), w2.view()], (4, 4)).unwrap();
        let layers: Vec<Array3<f64>> = (0..3).map(|_| Array3::from_shape_fn((4, 4, 2), |_| rng.random())).collect();
        let x = Array3::from_shape_fn((4, 4, 2), |_| rng.random::<f64>());
        let sigma = 0.3;
        let mut want = 0.0;
        for r in 0..4 {
            for c in 0..4 {
                for k in 0..3 {
                    let mut d2 = 0.0;
                    for ch in 0..2 {
                        d2 += (x[(r, c, ch)] - layers[k][(r, c, ch)]).powi(2);
                    }
                    want += pi.get(k, r, c) * d2 / (2.0 * sigma * sigma);
                }
            }
        }
        want /= 16.0;
        let got = recon_loss(x.view(), &pi, &layers, sigma).unwrap();
        assert!((got - want).abs() < 1e-12 * want.max(1.0));
    }

    #[test]
    fn recon_is_tiling_invariant() {
        let mut rng = seeded(8);
        let mut labels = Array2::zeros((6, 5));
        labels.slice_mut(s![1..4, 1..3]).fill(1u32);
        let pi = MixingStack::one_hot(&LabelMap::new(labels.clone()), 1).unwrap();
        let layers: Vec<Array3<f64>> = (0..2).map(|_| Array3::from_shape_fn((6, 5, 1), |_| rng.random())).collect();
        let x = Array3::from_shape_fn((6, 5, 1), |_| rng.random::<f64>());
        let tile3 = |a: &Array3<f64>| {
            let mut t = Array3::zeros((12, 10, 1));
            for (i, j) in [(0, 0), (0, 5), (6, 0), (6, 5)] {
                t.slice_mut(s![i..i + 6, j..j + 5, ..]).assign(a);
            }
            t
        };
        let mut big = Array2::zeros((12, 10));
        for (i, j) in [(0, 0), (0, 5), (6, 0), (6, 5)] {
            big.slice_mut(s![i..i + 6, j..j + 5]).assign(&labels);
        }
        let big_pi = MixingStack::one_hot(&LabelMap::new(big), 1).unwrap();
        let a = recon_loss(x.view(), &pi, &layers, 0.1).unwrap();
        let big_layers: Vec<Array3<f64>> = layers.iter().map(tile3).collect();
        let b = recon_loss(tile3(&x).view(), &big_pi, &big_layers, 0.1).unwrap();
        assert!((a - b).abs() < 1e-12 * a);
    }

    #[test]
    fn kl_closed_forms() {
        assert_eq!(gaussian_kl(&[0.0; 3], &[1.0; 3]).unwrap(), 0.0);
        assert!((gaussian_kl(&[1.0], &[1.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(gaussian_kl(&[0.0], &[0.0]).is_err());
        assert!(gaussian_kl(&[0.0], &[-1.0]).is_err());
    }

    #[test]
    fn kl_twenty_dims_direct() {
        let mut rng = seeded(20);
        let mu: Vec<f64> = (0..20).map(|_| rng.random_range(-2.0..2.0)).collect();
        let sd: Vec<f64> = (0..20).map(|_| rng.random_range(0.1..3.0)).collect();
        // per-dimension form: log(1/s) + (s^2 + m^2)/2 - 1/2
        let want: f64 = mu.iter().zip(&sd).map(|(m, s)| -s.ln() + (s * s + m * m) / 2.0 - 0.5).sum();
        assert!((gaussian_kl(&mu, &sd).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn prior_posteriors_give_zero_total() {
        let fg = vec![GaussianPosterior::prior(20); 3];
        let bx = vec![GaussianPosterior::prior(4); 3];
        let (t, st) = kl_total(&GaussianPosterior::prior(20), &fg, &bx, 0.0, KlDims::default(), NGridState::default()).unwrap();
        assert_eq!(t.total_kl, 0.0);
        assert_eq!(st.ema, Some(0.0));
    }

    #[test]
    fn empty_scene_drops_instance_terms() {
        let bg = GaussianPosterior { mu: vec![0.5; 20], sigma: vec![1.0; 20] };
        let (t, _) = kl_total(&bg, &[], &[], 2.0, KlDims::default(), NGridState::default()).unwrap();
        assert_eq!((t.kl_fg, t.kl_box), (0.0, 0.0));
        assert!((t.kl_bg - 0.5 * 20.0 * 0.25 / 20.0).abs() < 1e-15);
        assert_eq!(t.kl_grid, 1.0);
    }

    #[test]
    fn typical_scale_terms_are_order_one() {
        // frozen from the first run: two instances with moderate posteriors
        let mut rng = seeded(12);
        let mut g = |d: usize| GaussianPosterior {
            mu: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
            sigma: (0..d).map(|_| rng.random_range(0.3..1.2)).collect(),
        };
        let bg = g(20);
        let fg = vec![g(20), g(20)];
        let bx = vec![g(4), g(4)];
        let state = NGridState::default().update(40.0);
        let (t, st) = kl_total(&bg, &fg, &bx, 50.0, KlDims::default(), state).unwrap();
        for v in [t.kl_bg, t.kl_fg, t.kl_box, t.kl_grid] {
            assert!(v > 0.05 && v < 5.0, "{t:?}");
        }
        assert!((st.ema.unwrap() - 41.0).abs() < 1e-12);
        assert!((t.kl_grid - 50.0 / 41.0).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let bg = GaussianPosterior::prior(20);
        assert!(kl_total(&bg, &[GaussianPosterior::prior(19)], &[GaussianPosterior::prior(4)], 0.0, KlDims::default(), NGridState::default()).is_err());
        assert!(kl_total(&bg, &[GaussianPosterior::prior(20)], &[], 0.0, KlDims::default(), NGridState::default()).is_err());
    }

    proptest! {
        #[test]
        fn kl_nonnegative_and_zero_only_at_prior(
            mu in proptest::collection::vec(-3.0f64..3.0, 1..8),
            log_s in proptest::collection::vec(-2.0f64..2.0, 8),
        ) {
            let sd: Vec<f64> = log_s[..mu.len()].iter().map(|l| l.exp()).collect();
            let kl = gaussian_kl(&mu, &sd).unwrap();
            prop_assert!(kl >= 0.0);
            if mu.iter().all(|&m| m == 0.0) && sd.iter().all(|&s| s == 1.0) {
                prop_assert_eq!(kl, 0.0);
            }
            if mu.iter().any(|m| m.abs() > 1e-3) || log_s[..mu.len()].iter().any(|l| l.abs() > 1e-3) {
                prop_assert!(kl > 0.0);
            }
        }
    }
}
