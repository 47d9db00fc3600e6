//! Determinantal point process over the coarse object grid.
//!
//! The L-ensemble with similarity kernel `S` assigns a subset `w` of grid
//! points the probability `det(S_w) / det(S + I)`. The kernel is an RBF in
//! coarse-grid coordinates, so nearby points are strongly correlated and
//! rarely selected together.

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BinaryField, GridSpec, ProbField};

/// Relative diagonal jitter tried when a Cholesky factorisation fails.
const JITTER_REL: f64 = 1e-10;
const JITTER_RETRIES: usize = 3;

/// Density `rho` and repulsion length `ell` (coarse-cell units).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub rho: f64,
    pub ell: f64,
}

impl KernelParams {
    pub fn new(rho: f64, ell: f64) -> Result<Self> {
        let p = KernelParams { rho, ell };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::param(format!("rho must be positive, got {}", self.rho)));
        }
        if !(self.ell > 0.0 && self.ell.is_finite()) {
            return Err(Error::param(format!("ell must be positive, got {}", self.ell)));
        }
        Ok(())
    }
}

/// Dense symmetric similarity matrix over a `rows x cols` coarse grid, with
/// its log-partition `log det(S + I)` computed once at construction.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    rows: usize,
    cols: usize,
    rho: f64,
    entries: DMatrix<f64>,
    log_partition: f64,
}

impl KernelMatrix {
    /// RBF kernel on an explicit coarse grid.
    pub fn rbf(rows: usize, cols: usize, params: KernelParams) -> Result<Self> {
        params.validate()?;
        if rows == 0 || cols == 0 {
            return Err(Error::param("kernel grid must be non-empty"));
        }
        let n = rows * cols;
        let two_ell_sq = 2.0 * params.ell * params.ell;
        let entries = DMatrix::from_fn(n, n, |l, m| {
            let dr = (l / cols) as f64 - (m / cols) as f64;
            let dc = (l % cols) as f64 - (m % cols) as f64;
            params.rho * (-(dr * dr + dc * dc) / two_ell_sq).exp()
        });
        Self::from_matrix(rows, cols, params.rho, entries)
    }

    /// Wrap an arbitrary PSD matrix. `rho` only scales the jitter.
    pub fn from_matrix(rows: usize, cols: usize, rho: f64, entries: DMatrix<f64>) -> Result<Self> {
        let n = rows * cols;
        if entries.nrows() != n || entries.ncols() != n {
            return Err(Error::dims((n, n), (entries.nrows(), entries.ncols())));
        }
        let shifted = &entries + DMatrix::identity(n, n);
        let log_partition = log_det_psd(shifted, 1.0).ok_or_else(|| {
            Error::Numerical(format!("S + I is not positive definite (n = {n}, rho = {rho})"))
        })?;
        Ok(KernelMatrix { rows, cols, rho, entries, log_partition })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn get(&self, l: usize, m: usize) -> f64 {
        self.entries[(l, m)]
    }

    /// `log det(S + I)`.
    pub fn log_partition(&self) -> f64 {
        self.log_partition
    }

    /// `log det(S_w)` for the sub-matrix on `indices`; 0 for the empty set,
    /// `-inf` when the sub-matrix is numerically singular.
    pub fn log_det_subset(&self, indices: &[usize]) -> f64 {
        if indices.is_empty() {
            return 0.0;
        }
        let sub = self.entries.select_rows(indices).select_columns(indices);
        log_det_psd(sub, self.rho).unwrap_or(f64::NEG_INFINITY)
    }

    fn check_field(&self, rows: usize, cols: usize) -> Result<()> {
        if rows != self.rows || cols != self.cols {
            return Err(Error::dims((self.rows, self.cols), (rows, cols)));
        }
        Ok(())
    }
}

/// Log-determinant through a Cholesky factorisation, retrying with a growing
/// diagonal jitter (`1e-10 * scale`, x10 per retry) if the factorisation
/// fails. `None` if every attempt fails.
fn log_det_psd(mut m: DMatrix<f64>, scale: f64) -> Option<f64> {
    let n = m.nrows();
    let mut jitter = JITTER_REL * scale;
    for attempt in 0..=JITTER_RETRIES {
        if attempt > 0 {
            for i in 0..n {
                m[(i, i)] += jitter;
            }
            jitter *= 10.0;
        }
        if let Some(chol) = Cholesky::new(m.clone()) {
            let l = chol.l_dirty();
            let ld: f64 = (0..n).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0;
            if ld.is_finite() {
                return Some(ld);
            }
        }
    }
    None
}

/// RBF kernel over the coarse grid of `grid`.
pub fn build_rbf_kernel(grid: &GridSpec, params: KernelParams) -> Result<KernelMatrix> {
    grid.validate()?;
    KernelMatrix::rbf(grid.coarse_h(), grid.coarse_w(), params)
}

/// `log P(w) = log det(S_w) - log det(S + I)`.
pub fn dpp_log_prob(kernel: &KernelMatrix, subset: &BinaryField) -> Result<f64> {
    kernel.check_field(subset.rows(), subset.cols())?;
    Ok(kernel.log_det_subset(&subset.on_indices()) - kernel.log_partition())
}

/// Expected cardinality `tr(S (S + I)^-1) = n - tr((S + I)^-1)`.
pub fn dpp_expected_cardinality(kernel: &KernelMatrix) -> Result<f64> {
    let n = kernel.len();
    let shifted = kernel.entries() + DMatrix::identity(n, n);
    let chol = Cholesky::new(shifted)
        .ok_or_else(|| Error::Numerical("S + I is not positive definite".into()))?;
    let inv = chol.inverse();
    Ok(n as f64 - inv.trace())
}

/// Exact L-ensemble sampler. The eigendecomposition is computed once so
/// that many draws from the same kernel are cheap.
#[derive(Debug, Clone)]
pub struct DppSampler {
    rows: usize,
    cols: usize,
    eigenvalues: Vec<f64>,
    // column-major eigenvectors, one Vec per eigenvector
    eigenvectors: Vec<Vec<f64>>,
}

impl DppSampler {
    pub fn new(kernel: &KernelMatrix) -> Result<Self> {
        let n = kernel.len();
        let eig = SymmetricEigen::try_new(kernel.entries().clone(), 1e-14, 10_000).ok_or_else(|| {
            Error::Numerical(format!(
                "eigendecomposition did not converge (n = {n}, rho = {}, trace = {:.6e})",
                kernel.rho(),
                kernel.entries().trace()
            ))
        })?;
        if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite eigenvalue (n = {n}, rho = {})",
                kernel.rho()
            )));
        }
        let eigenvalues = eig.eigenvalues.iter().map(|&v| v.max(0.0)).collect();
        let eigenvectors = (0..n).map(|j| eig.eigenvectors.column(j).iter().copied().collect()).collect();
        Ok(DppSampler { rows: kernel.rows(), cols: kernel.cols(), eigenvalues, eigenvectors })
    }

    /// One exact draw: pick an elementary projection DPP by including each
    /// eigenvector with probability `lambda / (lambda + 1)`, then select items
    /// one at a time, projecting the spanning set away from each chosen item.
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> BinaryField {
        let n = self.rows * self.cols;
        let mut basis: Vec<Vec<f64>> = self
            .eigenvalues
            .iter()
            .zip(&self.eigenvectors)
            .filter(|(&lam, _)| rng.random::<f64>() < lam / (lam + 1.0))
            .map(|(_, v)| v.clone())
            .collect();

        let mut out = BinaryField::zeros(self.rows, self.cols);
        while !basis.is_empty() {
            let k = basis.len() as f64;
            let weights: Vec<f64> = (0..n).map(|i| basis.iter().map(|v| v[i] * v[i]).sum::<f64>() / k).collect();
            let total: f64 = weights.iter().sum();
            let mut u = rng.random::<f64>() * total;
            let mut item = n - 1;
            for (i, w) in weights.iter().enumerate() {
                if u < *w {
                    item = i;
                    break;
                }
                u -= w;
            }
            out.set(item, true);

            // pivot on the vector with the largest component at `item`
            let pivot_idx = (0..basis.len())
                .max_by(|&a, &b| basis[a][item].abs().total_cmp(&basis[b][item].abs()))
                .expect("basis is non-empty");
            let pivot = basis.swap_remove(pivot_idx);
            let pv = pivot[item];
            for v in basis.iter_mut() {
                let f = v[item] / pv;
                for (x, p) in v.iter_mut().zip(&pivot) {
                    *x -= f * p;
                }
                v[item] = 0.0;
            }
            orthonormalize(&mut basis);
        }
        out
    }
}

/// Modified Gram-Schmidt; drops vectors that collapse to zero.
fn orthonormalize(basis: &mut Vec<Vec<f64>>) {
    let mut done: Vec<Vec<f64>> = Vec::with_capacity(basis.len());
    for mut v in basis.drain(..) {
        for q in &done {
            let d: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
            for (x, y) in v.iter_mut().zip(q) {
                *x -= d * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-10 {
            v.iter_mut().for_each(|x| *x /= norm);
            done.push(v);
        }
    }
    *basis = done;
}

/// Single exact draw from `DPP(S)`.
pub fn dpp_sample<R: rand::Rng + ?Sized>(kernel: &KernelMatrix, rng: &mut R) -> Result<BinaryField> {
    Ok(DppSampler::new(kernel)?.sample(rng))
}

/// Monte-Carlo estimate of `KL[Bernoulli(p) || DPP(S)]` from `n_mc` i.i.d.
/// Bernoulli fields. Unbiased for the exact KL.
pub fn grid_kl_mc<R: rand::Rng + ?Sized>(p: &ProbField, kernel: &KernelMatrix, n_mc: usize, rng: &mut R) -> Result<f64> {
    if n_mc == 0 {
        return Err(Error::param("n_mc must be at least 1"));
    }
    kernel.check_field(p.rows(), p.cols())?;
    if p.values().iter().any(|v| v.is_nan()) {
        return Err(Error::Numerical("NaN in probability field".into()));
    }
    let mut cross = 0.0;
    let mut log_det = 0.0;
    let mut on = Vec::with_capacity(p.len());
    for _ in 0..n_mc {
        on.clear();
        for (i, &pi) in p.values().iter().enumerate() {
            // `random::<f64>()` is in [0, 1) so p = 0 never fires and p = 1 always does
            if rng.random::<f64>() < pi {
                on.push(i);
                cross += pi.ln();
            } else {
                cross += (1.0 - pi).ln();
            }
        }
        log_det += kernel.log_det_subset(&on);
    }
    let est = (cross - log_det) / n_mc as f64 + kernel.log_partition();
    if est.is_nan() {
        return Err(Error::Numerical("KL estimate is NaN".into()));
    }
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn k(rows: usize, cols: usize, rho: f64, ell: f64) -> KernelMatrix {
        KernelMatrix::rbf(rows, cols, KernelParams::new(rho, ell).unwrap()).unwrap()
    }

    #[test]
    fn single_point_kernel() {
        let s = k(1, 1, 1.0, 1.0);
        assert_eq!(s.get(0, 0), 1.0);
    }

    #[test]
    fn zero_range_kernel_is_diagonal() {
        let s = k(1, 2, 1.0, 1e-3);
        assert_eq!(s.get(0, 1), 0.0);
        assert_eq!(s.get(1, 1), 1.0);
    }

    #[test]
    fn off_diagonal_value() {
        // 0.5 * exp(-1/2)
        let s = k(1, 2, 0.5, 1.0);
        assert!(close(s.get(0, 1), 0.303_265_329_856_316_7, 1e-12));
    }

    #[test]
    fn rejects_non_positive_params() {
        assert!(KernelParams::new(0.0, 1.0).is_err());
        assert!(KernelParams::new(1.0, -1.0).is_err());
        assert!(KernelParams::new(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn single_point_log_probs() {
        let s = k(1, 1, 1.0, 1.0);
        let on = BinaryField::from_bits(1, 1, 1);
        let off = BinaryField::zeros(1, 1);
        assert!(close(dpp_log_prob(&s, &on).unwrap(), 0.5f64.ln(), 1e-12));
        assert!(close(dpp_log_prob(&s, &off).unwrap(), 0.5f64.ln(), 1e-12));
    }

    #[test]
    fn log_prob_dimension_mismatch() {
        let s = k(2, 2, 1.0, 1.0);
        assert!(dpp_log_prob(&s, &BinaryField::zeros(1, 4)).is_err());
    }

    #[test]
    fn singular_subset_is_neg_infinity() {
        // rank-one kernel: any pair is singular
        let m = DMatrix::from_element(2, 2, 1.0);
        let s = KernelMatrix::from_matrix(1, 2, 1.0, m).unwrap();
        let both = BinaryField::from_bits(1, 2, 0b11);
        let lp = dpp_log_prob(&s, &both).unwrap();
        assert!(lp == f64::NEG_INFINITY || lp < -15.0, "{lp}");
    }

    #[test]
    fn two_point_enumeration_normalises() {
        let s = k(1, 2, 0.5, 1.0);
        let total: f64 = (0..4u64)
            .map(|m| dpp_log_prob(&s, &BinaryField::from_bits(1, 2, m)).unwrap().exp())
            .sum();
        assert!(close(total, 1.0, 1e-12));
    }

    #[test]
    fn expected_cardinality_cases() {
        assert!(close(dpp_expected_cardinality(&k(1, 1, 1.0, 1.0)).unwrap(), 0.5, 1e-12));
        let diag = k(2, 2, 0.5, 1e-3);
        assert!(close(dpp_expected_cardinality(&diag).unwrap(), 4.0 / 3.0, 1e-12));

        // enumeration oracle on 1x2
        let s = k(1, 2, 0.5, 1.0);
        let enumerated: f64 = (0..4u64)
            .map(|m| {
                let f = BinaryField::from_bits(1, 2, m);
                f.cardinality() as f64 * dpp_log_prob(&s, &f).unwrap().exp()
            })
            .sum();
        assert!(close(dpp_expected_cardinality(&s).unwrap(), enumerated, 1e-12));
    }

    #[test]
    fn vanishing_density_samples_empty() {
        let s = k(3, 3, 1e-9, 1.0);
        let sampler = DppSampler::new(&s).unwrap();
        let mut rng = seeded(3);
        let on: usize = (0..1000).map(|_| sampler.sample(&mut rng).cardinality()).sum();
        assert_eq!(on, 0);
    }

    #[test]
    fn single_point_sampler_is_fair_coin() {
        let s = k(1, 1, 1.0, 1.0);
        let sampler = DppSampler::new(&s).unwrap();
        let mut rng = seeded(11);
        let n = 100_000;
        let on = (0..n).filter(|_| sampler.sample(&mut rng).get(0)).count() as f64;
        let sd = (n as f64 * 0.25).sqrt();
        assert!((on - 0.5 * n as f64).abs() < 4.0 * sd);
    }

    #[test]
    fn kl_degenerate_categorical() {
        let s = k(2, 3, 0.7, 1.3);
        let p = ProbField::constant(2, 3, 0.0).unwrap();
        let est = grid_kl_mc(&p, &s, 1, &mut seeded(1)).unwrap();
        assert_eq!(est, s.log_partition());
    }

    #[test]
    fn kl_rejects_zero_samples_and_bad_dims() {
        let s = k(2, 2, 0.7, 1.3);
        let p = ProbField::constant(2, 2, 0.3).unwrap();
        assert!(grid_kl_mc(&p, &s, 0, &mut seeded(1)).is_err());
        let p = ProbField::constant(1, 4, 0.3).unwrap();
        assert!(grid_kl_mc(&p, &s, 1, &mut seeded(1)).is_err());
    }
}
