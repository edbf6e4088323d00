use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use super::Dataset;
use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-10;

/// Multivariate normal with a cached Cholesky factor of its covariance.
#[derive(Debug, Clone)]
pub struct GaussianParams {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl GaussianParams {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::EmptyInput);
        }
        if covariance.nrows() != d || covariance.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: covariance.nrows(),
            });
        }
        if !is_symmetric(&covariance, SYMMETRY_TOL) {
            return Err(Error::NotSymmetric);
        }
        let chol = Cholesky::new(covariance.clone()).ok_or(Error::NotPositiveDefinite)?;
        if chol
            .l_dirty()
            .diagonal()
            .iter()
            .any(|v| !(v.is_finite() && *v > 0.0))
        {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(Self {
            mean,
            covariance,
            chol,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// Lower-triangular factor `L` with `L Lᵀ = Σ`.
    pub fn chol_factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn precision(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self
            .chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|v| v.ln())
            .sum::<f64>()
    }

    /// `(x - c)ᵀ Σ⁻¹ (x - c)` through a triangular solve against the cached factor.
    pub fn mahalanobis_sq_from(&self, x: &[f64], center: &DVector<f64>) -> f64 {
        let diff = DVector::from_iterator(x.len(), x.iter().zip(center.iter()).map(|(a, b)| a - b));
        let z = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&diff)
            .expect("Cholesky factor has a positive diagonal");
        z.norm_squared()
    }

    pub fn mahalanobis_sq(&self, x: &[f64]) -> f64 {
        self.mahalanobis_sq_from(x, &self.mean)
    }

    /// Quadratic form `vᵀ Σ⁻¹ v`.
    pub fn inv_quad(&self, v: &DVector<f64>) -> f64 {
        let z = self
            .chol
            .l_dirty()
            .solve_lower_triangular(v)
            .expect("Cholesky factor has a positive diagonal");
        z.norm_squared()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let u = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.mean + self.chol.l() * u
    }

    /// Draws `n` labelled-0 rows from this Gaussian as a single-class dataset.
    pub fn sample_dataset<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Dataset {
        let l = self.chol.l();
        let d = self.dim();
        let mut features = Vec::with_capacity(n * d);
        for _ in 0..n {
            let u = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let x = &self.mean + &l * u;
            features.extend(x.iter());
        }
        Dataset::new(d, 1, features, vec![0; n]).expect("finite Gaussian draws")
    }
}

pub(crate) fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    m.is_square() && (0..m.nrows()).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= tol))
}

/// Arithmetic mean and population covariance of the rows, plus a ridge
/// `ε·I` with `ε = 1e-6 · trace/d` (or `1e-6` when the trace is zero).
pub fn fit_gaussian(data: &Dataset) -> Result<GaussianParams> {
    let n = data.len();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let d = data.dim();
    let mut mean = DVector::zeros(d);
    for row in data.rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean /= n as f64;

    let mut cov = DMatrix::zeros(d, d);
    let mut centered = DVector::zeros(d);
    for row in data.rows() {
        for j in 0..d {
            centered[j] = row[j] - mean[j];
        }
        cov.ger(1.0, &centered, &centered, 1.0);
    }
    cov /= n as f64;
    // symmetrize against rank-1 accumulation round-off
    let cov = (&cov + cov.transpose()) * 0.5;

    let trace = cov.trace();
    let ridge = if trace > 0.0 {
        1e-6 * trace / d as f64
    } else {
        1e-6
    };
    let cov = cov + DMatrix::identity(d, d) * ridge;
    GaussianParams::new(mean, cov)
}
