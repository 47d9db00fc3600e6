use ndarray::ArrayView3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const BINS: usize = 256;
const MAX_ITERS: usize = 500;
/// Smallest component weight and variance accepted from EM.
const MIN_WEIGHT: f64 = 1e-3;
const MIN_VAR_FRAC: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMethod {
    Mixture,
    Otsu,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaEstimate {
    /// Standard deviation of the brighter intensity component.
    pub sigma: f64,
    pub method: SigmaMethod,
}

/// Threshold maximising the between-class variance of a 256-bin histogram.
/// Values `> threshold` form the upper class.
pub fn otsu_threshold(values: &[f64]) -> Result<f64> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::param("image must be non-empty and finite"));
    }
    if hi <= lo {
        return Err(Error::param("image is constant"));
    }
    let width = (hi - lo) / BINS as f64;
    let mut hist = [0usize; BINS];
    for &v in values {
        hist[(((v - lo) / width) as usize).min(BINS - 1)] += 1;
    }
    let centre = |b: usize| lo + (b as f64 + 0.5) * width;
    let total = values.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(b, &n)| n as f64 * centre(b)).sum();
    let (mut w0, mut s0) = (0.0, 0.0);
    let (mut best, mut best_b) = (-1.0, 0);
    for (b, &n) in hist.iter().enumerate().take(BINS - 1) {
        w0 += n as f64;
        s0 += n as f64 * centre(b);
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let (m0, m1) = (s0 / w0, (sum_all - s0) / w1);
        let between = w0 * w1 * (m0 - m1).powi(2);
        if between > best {
            best = between;
            best_b = b;
        }
    }
    Ok(lo + (best_b + 1) as f64 * width)
}

fn moments(values: impl Iterator<Item = f64>) -> (f64, f64, f64) {
    let (mut n, mut s, mut s2) = (0.0, 0.0, 0.0);
    for v in values {
        n += 1.0;
        s += v;
        s2 += v * v;
    }
    let mean = s / n;
    (n, mean, (s2 / n - mean * mean).max(0.0))
}

fn otsu_sigma(values: &[f64], threshold: f64) -> f64 {
    moments(values.iter().copied().filter(|&v| v > threshold)).2.sqrt()
}

/// Two-component Gaussian mixture over all intensities, fitted by EM from an
/// Otsu split. Falls back to the upper Otsu class when a component collapses.
pub fn estimate_sigma(image: ArrayView3<f64>) -> Result<SigmaEstimate> {
    let values: Vec<f64> = image.iter().copied().collect();
    let threshold = otsu_threshold(&values)?;
    let fallback = || SigmaEstimate { sigma: otsu_sigma(&values, threshold), method: SigmaMethod::Otsu };

    let (n_lo, m_lo, v_lo) = moments(values.iter().copied().filter(|&v| v <= threshold));
    let (n_hi, m_hi, v_hi) = moments(values.iter().copied().filter(|&v| v > threshold));
    let total = values.len() as f64;
    let (_, _, v_all) = moments(values.iter().copied());
    let var_floor = MIN_VAR_FRAC * v_all;
    let mut w = [n_lo / total, n_hi / total];
    let mut mu = [m_lo, m_hi];
    let mut var = [v_lo.max(var_floor), v_hi.max(var_floor)];
    let mut prev_ll = f64::NEG_INFINITY;
    for _ in 0..MAX_ITERS {
        if w.iter().any(|&x| x < MIN_WEIGHT) || var.iter().any(|&v| v <= var_floor) {
            return Ok(fallback());
        }
        let mut acc = [[0.0f64; 3]; 2];
        let mut ll = 0.0;
        for &x in &values {
            let dens: [f64; 2] = std::array::from_fn(|k| {
                w[k] * (-(x - mu[k]).powi(2) / (2.0 * var[k])).exp() / (2.0 * std::f64::consts::PI * var[k]).sqrt()
            });
            let z = dens[0] + dens[1];
            if z <= 0.0 {
                continue;
            }
            ll += z.ln();
            for k in 0..2 {
                let r = dens[k] / z;
                acc[k][0] += r;
                acc[k][1] += r * x;
                acc[k][2] += r * x * x;
            }
        }
        for k in 0..2 {
            let nk = acc[k][0];
            if nk <= 0.0 {
                return Ok(fallback());
            }
            w[k] = nk / total;
            mu[k] = acc[k][1] / nk;
            var[k] = (acc[k][2] / nk - mu[k] * mu[k]).max(0.0);
        }
        if (ll - prev_ll).abs() <= 1e-10 * ll.abs().max(1.0) {
            break;
        }
        prev_ll = ll;
    }
    if w.iter().any(|&x| x < MIN_WEIGHT) || var.iter().any(|&v| v <= var_floor) {
        return Ok(fallback());
    }
    let fg = if mu[1] >= mu[0] { 1 } else { 0 };
    Ok(SigmaEstimate { sigma: var[fg].sqrt(), method: SigmaMethod::Mixture })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use ndarray::Array3;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn two_level_image_recovers_noise() {
        let s = 0.05;
        let noise = Normal::new(0.0, s).unwrap();
        let mut rng = seeded(17);
        let img = Array3::from_shape_fn((80, 80, 1), |(r, c, _)| {
            let base = if (20..50).contains(&r) && (10..40).contains(&c) { 1.0 } else { 0.0 };
            base + noise.sample(&mut rng)
        });
        let est = estimate_sigma(img.view()).unwrap();
        assert_eq!(est.method, SigmaMethod::Mixture);
        assert!((est.sigma - s).abs() < 0.1 * s, "{est:?}");
    }

    #[test]
    fn constant_image_is_an_error() {
        assert!(estimate_sigma(Array3::from_elem((4, 4, 1), 0.3).view()).is_err());
    }

    #[test]
    fn noiseless_two_level_falls_back_to_otsu() {
        let img = Array3::from_shape_fn((10, 10, 1), |(r, _, _)| if r < 3 { 1.0 } else { 0.0 });
        let est = estimate_sigma(img.view()).unwrap();
        assert_eq!(est.method, SigmaMethod::Otsu);
        assert_eq!(est.sigma, 0.0);
    }

    #[test]
    fn otsu_splits_two_levels() {
        let v: Vec<f64> = (0..100).map(|i| if i < 30 { 0.9 } else { 0.1 }).collect();
        let t = otsu_threshold(&v).unwrap();
        assert!(t > 0.1 && t < 0.9);
    }
}
