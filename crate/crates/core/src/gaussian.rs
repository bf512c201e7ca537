//! Multivariate normal densities and reproducible sampling.

use crate::cloud::WeightedCloud;
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::scalar::Real;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

/// Validated `N(mean, covariance)` with its Cholesky factor cached.
#[derive(Clone, Debug)]
pub struct GaussianSpec<T> {
    mean: Vec<T>,
    covariance: Matrix<T>,
    chol: Matrix<T>,
    log_norm: T,
}

impl<T: Real> GaussianSpec<T> {
    /// Covariance must be symmetric to 1e-12 relative and every eigenvalue
    /// must exceed `1e-12 · λ_max`.
    pub fn new(mean: Vec<T>, covariance: Matrix<T>) -> Result<Self> {
        let d = mean.len();
        if covariance.rows() != d || covariance.cols() != d {
            return Err(Error::DimensionMismatch {
                what: "covariance order",
                expected: d,
                found: covariance.rows(),
            });
        }
        if d == 0 {
            return Err(Error::invalid("gaussian", "zero-dimensional"));
        }
        if !covariance.is_finite() || mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid("gaussian", "non-finite entries"));
        }
        covariance.check_symmetric(T::lit(1e-12))?;
        let (eig, _) = covariance.symmetric_eigen();
        let lmax = eig.iter().fold(T::zero(), |m, &v| m.max(v.abs()));
        for (index, &ev) in eig.iter().enumerate() {
            if !(ev > T::lit(1e-12) * lmax) {
                return Err(Error::CovarianceNotPositiveDefinite {
                    index,
                    eigenvalue: ev.as_f64(),
                });
            }
        }
        let chol = covariance.cholesky()?;
        let log_det: T = chol.diagonal().iter().map(|v| v.ln()).sum::<T>() * T::lit(2.0);
        let log_norm = -T::lit(0.5) * (T::from_usize_lossy(d) * (T::TAU()).ln() + log_det);
        Ok(Self {
            mean,
            covariance,
            chol,
            log_norm,
        })
    }

    pub fn diagonal(mean: Vec<T>, variances: &[T]) -> Result<Self> {
        Self::new(mean, Matrix::from_diag(variances))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[T] {
        &self.mean
    }

    pub fn covariance(&self) -> &Matrix<T> {
        &self.covariance
    }

    pub fn cholesky_factor(&self) -> &Matrix<T> {
        &self.chol
    }

    pub fn log_pdf(&self, x: &[T]) -> Result<T> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "gaussian argument",
                expected: self.dim(),
                found: x.len(),
            });
        }
        let diff: Vec<T> = x.iter().zip(&self.mean).map(|(&a, &b)| a - b).collect();
        let w = linalg::solve_lower(&self.chol, &diff);
        Ok(self.log_norm - T::lit(0.5) * linalg::dot(&w, &w))
    }

    /// `(2π)^(−d/2) det(Σ)^(−1/2) exp(−½ (x−μ)ᵀΣ⁻¹(x−μ))`
    pub fn pdf(&self, x: &[T]) -> Result<T> {
        Ok(self.log_pdf(x)?.exp())
    }

    /// Marginal over the listed coordinates.
    pub fn marginal(&self, dims: &[usize]) -> Result<Self> {
        if let Some(&bad) = dims.iter().find(|&&k| k >= self.dim()) {
            return Err(Error::invalid(
                "marginal dims",
                format!("index {bad} out of range"),
            ));
        }
        let mean = dims.iter().map(|&k| self.mean[k]).collect();
        Self::new(mean, self.covariance.select(dims, dims))
    }

    /// Law of `M x + c` for `x` distributed as `self`.
    pub fn affine_pushforward(&self, m: &Matrix<T>, c: &[T]) -> Result<Self> {
        let mean = m
            .mul_vec(&self.mean)
            .into_iter()
            .zip(c)
            .map(|(a, &b)| a + b)
            .collect();
        let cov = m.matmul(&self.covariance).matmul(&m.transpose());
        // symmetrize round-off
        let sym = cov.add(&cov.transpose()).scale(T::lit(0.5));
        Self::new(mean, sym)
    }

    /// Maps a vector of standard normals to a draw from this Gaussian.
    pub fn transform_standard(&self, z: &[T]) -> Vec<T> {
        let lz = self.chol.mul_vec(z);
        lz.into_iter()
            .zip(&self.mean)
            .map(|(a, &m)| a + m)
            .collect()
    }
}

/// Deterministic generator for sample `index` of a run seeded with `seed`.
///
/// Stream splitting rule: every sample owns the ChaCha20 stream numbered by
/// its index under the run seed, so sample `i` is the same regardless of how
/// many samples are drawn or which worker draws it.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draws `n` i.i.d. samples (standard normals by the ziggurat method, then
/// the Cholesky transform) and weights each by the exact density.
pub fn sample_gaussian<T: Real>(
    spec: &GaussianSpec<T>,
    n: usize,
    seed: u64,
) -> Result<WeightedCloud<T>> {
    if n == 0 {
        return Err(Error::invalid("sample count", "must be at least 1"));
    }
    let d = spec.dim();
    let mut states = Vec::with_capacity(n * d);
    let mut weights = Vec::with_capacity(n);
    let mut z = vec![T::zero(); d];
    for i in 0..n {
        let mut rng = sample_rng(seed, i as u64);
        for zk in z.iter_mut() {
            let v: f64 = StandardNormal.sample(&mut rng);
            *zk = T::lit(v);
        }
        let x = spec.transform_standard(&z);
        weights.push(spec.pdf(&x)?);
        states.extend(x);
    }
    WeightedCloud::new(T::zero(), d, states, weights)
}

/// Free-function form of [`GaussianSpec::pdf`].
pub fn gaussian_pdf<T: Real>(spec: &GaussianSpec<T>, x: &[T]) -> Result<T> {
    spec.pdf(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pdf_examples() {
        let s = GaussianSpec::<f64>::diagonal(vec![0.0], &[1.0]).unwrap();
        assert!((s.pdf(&[0.0]).unwrap() - 0.398_942_280_401_432_7).abs() < 1e-15);
        assert!((s.pdf(&[1.0]).unwrap() - 0.241_970_724_519_143_37).abs() < 1e-15);

        let s = GaussianSpec::diagonal(vec![1.0, 1.0], &[4.0, 9.0]).unwrap();
        let expect = 1.0 / (2.0 * std::f64::consts::PI * 6.0);
        assert!((s.pdf(&[1.0, 1.0]).unwrap() - expect).abs() < 1e-15);
        assert!((expect - 0.026_525_823_848_649_224).abs() < 1e-15);

        let s = GaussianSpec::<f64>::diagonal(vec![0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((s.pdf(&[0.0, 0.0]).unwrap() - 0.159_154_943_091_895_35).abs() < 1e-15);
    }

    #[test]
    fn pdf_f32() {
        let s = GaussianSpec::<f32>::diagonal(vec![0.0], &[1.0]).unwrap();
        assert!((s.pdf(&[0.0]).unwrap() - 0.398_942_3).abs() < 1e-6);
    }

    #[test]
    fn pdf_dimension_mismatch() {
        let s = GaussianSpec::<f64>::diagonal(vec![0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!(matches!(
            s.pdf(&[0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn rejects_non_pd_with_eigenvalue() {
        let err = GaussianSpec::diagonal(vec![0.0, 0.0], &[1.0, -0.5]).unwrap_err();
        match err {
            Error::CovarianceNotPositiveDefinite { eigenvalue, .. } => {
                assert!((eigenvalue + 0.5).abs() < 1e-12)
            }
            other => panic!("unexpected {other:?}"),
        }
        let near_singular = GaussianSpec::diagonal(vec![0.0, 0.0], &[1.0, 1e-14]);
        assert!(near_singular.is_err());
        let asym = Matrix::from_rows(&[vec![1.0, 0.1], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(
            GaussianSpec::new(vec![0.0, 0.0], asym),
            Err(Error::NotSymmetric { .. })
        ));
    }

    #[test]
    fn sampling_is_deterministic() {
        let s =
            GaussianSpec::diagonal(vec![0.0, 0.0, 20.0, 0.0], &[1e-2, 1e-2, 1e-1, 1e-3]).unwrap();
        let a = sample_gaussian(&s, 1000, 7).unwrap();
        let b = sample_gaussian(&s, 1000, 7).unwrap();
        assert_eq!(a.len(), 1000);
        assert_eq!(a.states(), b.states());
        assert_eq!(a.weights(), b.weights());
        for i in 0..a.len() {
            assert_eq!(a.weight(i), s.pdf(a.state(i)).unwrap());
        }
        // prefix property of per-sample streams
        let c = sample_gaussian(&s, 10, 7).unwrap();
        assert_eq!(c.states(), &a.states()[..40]);
        assert!(sample_gaussian(&s, 0, 7).is_err());
    }

    #[test]
    fn sample_mean_within_statistical_bound() {
        let s =
            GaussianSpec::diagonal(vec![0.0, 0.0, 20.0, 0.0], &[1e-2, 1e-2, 1e-1, 1e-3]).unwrap();
        let n = 20_000;
        let c = sample_gaussian(&s, n, 42).unwrap();
        for k in 0..4 {
            let mean: f64 = (0..n).map(|i| c.state(i)[k]).sum::<f64>() / n as f64;
            let bound = 4.0 * (s.covariance()[(k, k)] / n as f64).sqrt();
            assert!((mean - s.mean()[k]).abs() < bound, "dim {k}: {mean}");
        }
    }

    #[test]
    fn pdf_integrates_to_one() {
        let s = GaussianSpec::diagonal(vec![0.3], &[2.0]).unwrap();
        let sd = 2f64.sqrt();
        let n = 4000;
        let h = 12.0 * sd / n as f64;
        let sum: f64 = (0..n)
            .map(|i| s.pdf(&[0.3 - 6.0 * sd + (i as f64 + 0.5) * h]).unwrap() * h)
            .sum();
        assert!((sum - 1.0).abs() < 1e-4);

        let cov = Matrix::from_rows(&[vec![1.0, 0.5], vec![0.5, 2.0]]).unwrap();
        let s = GaussianSpec::new(vec![0.0, 1.0], cov).unwrap();
        let n = 300;
        let (hx, hy) = (12.0 / n as f64, 12.0 * 2f64.sqrt() / n as f64);
        let mut sum = 0.0;
        for i in 0..n {
            for j in 0..n {
                let x = -6.0 + (i as f64 + 0.5) * hx;
                let y = 1.0 - 6.0 * 2f64.sqrt() + (j as f64 + 0.5) * hy;
                sum += s.pdf(&[x, y]).unwrap() * hx * hy;
            }
        }
        assert!((sum - 1.0).abs() < 1e-4, "{sum}");
    }
}
