//! Second-order KL approximations for perturbed, finitely sampled distributions.
//!
//! For a baseline parameter `ω` perturbed by `δ` and re-estimated from `A`
//! samples with `R` free parameters,
//!
//! ```text
//! KL(p̂_{ω+δ} ‖ p_ω) ≈ ½ δᵀ I(ω) δ + ½ δᵀ (∇I(ω)·δ) δ + R / (2A)
//! ```
//!
//! and for an `M`-dimensional Gaussian with perturbation `(δ_μ, δ_Σ)`
//!
//! ```text
//! KL ≈ ¼‖Σ⁻¹ δ_Σ Σ⁻¹‖_F² − ½ tr((δ_Σ Σ⁻¹)³) + ½ δ_μᵀ Σ⁻¹ (I − δ_Σ Σ⁻¹) δ_μ + M(M+3)/(4A)
//! ```
//!
//! [`validate_approximation`] compares the Gaussian form against the exact KL
//! of refitted Gaussians, with an unshifted resample as a control.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::data_gen::{fit_gaussian, is_symmetric, sample_shift_vector, Dataset, GaussianParams};
use crate::error::{invalid, Error, Result};
use crate::rng::{self, SimRng};

const SYMMETRY_TOL: f64 = 1e-10;

/// Gaussian perturbation `(δ_μ, δ_Σ)` of a baseline fitted from `A` samples.
#[derive(Debug, Clone)]
pub struct PerturbationGaussian {
    base: GaussianParams,
    delta_mu: DVector<f64>,
    delta_sigma: DMatrix<f64>,
    sample_count: usize,
}

impl PerturbationGaussian {
    pub fn new(
        base: GaussianParams,
        delta_mu: DVector<f64>,
        delta_sigma: DMatrix<f64>,
        sample_count: usize,
    ) -> Result<Self> {
        let m = base.dim();
        if delta_mu.len() != m || delta_sigma.nrows() != m || delta_sigma.ncols() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                actual: delta_mu.len(),
            });
        }
        if sample_count == 0 {
            return Err(invalid("sample count A must be positive"));
        }
        if !is_symmetric(&delta_sigma, SYMMETRY_TOL) {
            return Err(Error::NotSymmetric);
        }
        let shifted = base.covariance() + &delta_sigma;
        let sym = (&shifted + shifted.transpose()) * 0.5;
        if nalgebra::Cholesky::new(sym).is_none() {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(Self {
            base,
            delta_mu,
            delta_sigma,
            sample_count,
        })
    }

    /// Mean-only perturbation.
    pub fn mean_shift(
        base: GaussianParams,
        delta_mu: DVector<f64>,
        sample_count: usize,
    ) -> Result<Self> {
        let m = base.dim();
        Self::new(base, delta_mu, DMatrix::zeros(m, m), sample_count)
    }

    pub fn base(&self) -> &GaussianParams {
        &self.base
    }

    pub fn delta_mu(&self) -> &DVector<f64> {
        &self.delta_mu
    }

    pub fn delta_sigma(&self) -> &DMatrix<f64> {
        &self.delta_sigma
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    /// The perturbed Gaussian `N(μ + δ_μ, Σ + δ_Σ)`.
    pub fn perturbed(&self) -> Result<GaussianParams> {
        let cov = self.base.covariance() + &self.delta_sigma;
        let cov = (&cov + cov.transpose()) * 0.5;
        GaussianParams::new(self.base.mean() + &self.delta_mu, cov)
    }
}

/// Generic perturbation with caller-supplied Fisher information and its directional derivative.
#[derive(Debug, Clone)]
pub struct GeneralPerturbation {
    delta: DVector<f64>,
    fisher: DMatrix<f64>,
    fisher_grad_applied: DMatrix<f64>,
    free_params: usize,
    sample_count: usize,
}

impl GeneralPerturbation {
    pub fn new(
        delta: DVector<f64>,
        fisher: DMatrix<f64>,
        fisher_grad_applied: DMatrix<f64>,
        free_params: usize,
        sample_count: usize,
    ) -> Result<Self> {
        let n = delta.len();
        for m in [&fisher, &fisher_grad_applied] {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    actual: m.nrows(),
                });
            }
        }
        if !is_symmetric(&fisher, SYMMETRY_TOL) {
            return Err(Error::NotSymmetric);
        }
        if free_params == 0 || sample_count == 0 {
            return Err(invalid("R and A must be positive"));
        }
        Ok(Self {
            delta,
            fisher,
            fisher_grad_applied,
            free_params,
            sample_count,
        })
    }
}

/// `M(M+3)/(4A)`: expected KL inflation from refitting an M-dimensional Gaussian on A samples.
pub fn gaussian_fitting_term(dim: usize, sample_count: usize) -> f64 {
    let m = dim as f64;
    m * (m + 3.0) / (4.0 * sample_count as f64)
}

/// Closed-form `KL(N_p ‖ N_q)` in nats.
pub fn kl_gaussian_exact(p: &GaussianParams, q: &GaussianParams) -> Result<f64> {
    let m = p.dim();
    if q.dim() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            actual: q.dim(),
        });
    }
    let q_prec = q.precision();
    let trace = (&q_prec * p.covariance()).trace();
    let diff = q.mean() - p.mean();
    let quad = q.inv_quad(&diff);
    let kl = 0.5 * (trace + quad - m as f64 + q.log_det() - p.log_det());
    Ok(kl.max(0.0))
}

pub fn kl_approx_gaussian(pert: &PerturbationGaussian) -> f64 {
    let m = pert.base.dim();
    let prec = pert.base.precision();
    let ds = &pert.delta_sigma;
    let sandwich = &prec * ds * &prec;
    let frob = 0.25 * sandwich.norm_squared();
    let ds_prec = ds * &prec;
    let cube = 0.5 * (&ds_prec * &ds_prec * &ds_prec).trace();
    let mean_op = &prec * (DMatrix::identity(m, m) - &ds_prec);
    let mean_term = 0.5 * (pert.delta_mu.transpose() * mean_op * &pert.delta_mu)[(0, 0)];
    frob - cube + mean_term + gaussian_fitting_term(m, pert.sample_count)
}

pub fn kl_approx_fisher(pert: &GeneralPerturbation) -> f64 {
    let d = &pert.delta;
    let fisher = 0.5 * (d.transpose() * &pert.fisher * d)[(0, 0)];
    let third = 0.5 * (d.transpose() * &pert.fisher_grad_applied * d)[(0, 0)];
    fisher + third + pert.free_params as f64 / (2.0 * pert.sample_count as f64)
}

/// Settings for [`validate_approximation`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationOptions {
    /// Target Frobenius norm of `δ_Σ` relative to `‖Σ‖_F`. Zero disables covariance perturbation.
    pub sigma_scale: f64,
    /// How many times `δ_Σ` may be halved while searching for a positive-definite `Σ + δ_Σ`.
    pub max_backoff: usize,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self {
            sigma_scale: 0.05,
            max_backoff: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationRow {
    pub client: usize,
    pub radius: f64,
    pub sample_count: usize,
    pub real_kl: f64,
    pub approx_kl: f64,
    pub random_kl: f64,
}

/// Symmetric `(G + Gᵀ)/2` with standard-normal `G`, rescaled to Frobenius norm `target`.
pub fn random_symmetric<R: Rng + ?Sized>(dim: usize, target: f64, rng: &mut R) -> DMatrix<f64> {
    if target == 0.0 {
        return DMatrix::zeros(dim, dim);
    }
    loop {
        let g = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let s = (&g + g.transpose()) * 0.5;
        let norm = s.norm();
        if norm > 0.0 {
            return s * (target / norm);
        }
    }
}

fn perturb_covariance<R: Rng + ?Sized>(
    base: &GaussianParams,
    opts: &ValidationOptions,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let m = base.dim();
    let target = opts.sigma_scale * base.covariance().norm();
    let mut delta = random_symmetric(m, target, rng);
    for _ in 0..=opts.max_backoff {
        let cov = base.covariance() + &delta;
        if nalgebra::Cholesky::new(cov).is_some() {
            return Ok(delta);
        }
        delta *= 0.5;
    }
    Err(Error::NotPositiveDefinite)
}

/// Per-client comparison of the real refitted KL, the Gaussian approximation
/// and an unshifted resampling control.
///
/// Client `k` uses radius `radii[k]` and sample count `sample_counts[k]`
/// (a single count is broadcast). Each client draws from its own stream,
/// derived from one `u64` taken from `rng`.
pub fn validate_approximation<R: Rng + ?Sized>(
    base: &Dataset,
    radii: &[f64],
    sample_counts: &[usize],
    opts: &ValidationOptions,
    rng: &mut R,
) -> Result<Vec<ValidationRow>> {
    if radii.is_empty() {
        return Err(invalid("at least one client radius is required"));
    }
    if sample_counts.len() != 1 && sample_counts.len() != radii.len() {
        return Err(invalid(
            "sample counts must be a single value or one per client",
        ));
    }
    let g = fit_gaussian(base)?;
    let m = g.dim();
    let seed: u64 = rng.random();
    radii
        .iter()
        .enumerate()
        .map(|(k, &radius)| {
            let a = if sample_counts.len() == 1 {
                sample_counts[0]
            } else {
                sample_counts[k]
            };
            if a < 10 * m {
                return Err(invalid(format!("sample count {a} below 10·d = {}", 10 * m)));
            }
            let mut stream: SimRng = rng::stream(seed, &[k as u64]);
            let delta_mu = sample_shift_vector(&g, radius, &mut stream)?;
            let delta_sigma = perturb_covariance(&g, opts, &mut stream)?;
            let pert = PerturbationGaussian::new(g.clone(), delta_mu, delta_sigma, a)?;
            let shifted = pert.perturbed()?;
            let real_fit = fit_gaussian(&shifted.sample_dataset(a, &mut stream))?;
            let random_fit = fit_gaussian(&g.sample_dataset(a, &mut stream))?;
            Ok(ValidationRow {
                client: k,
                radius,
                sample_count: a,
                real_kl: kl_gaussian_exact(&real_fit, &g)?,
                approx_kl: kl_approx_gaussian(&pert),
                random_kl: kl_gaussian_exact(&random_fit, &g)?,
            })
        })
        .collect()
}

/// CSV with header `client,C,A,real_kl,approx_kl,random_kl`.
pub fn write_validation_csv<W: Write>(rows: &[ValidationRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["client", "C", "A", "real_kl", "approx_kl", "random_kl"])?;
    for r in rows {
        w.write_record([
            r.client.to_string(),
            r.radius.to_string(),
            r.sample_count.to_string(),
            format!("{:.16e}", r.real_kl),
            format!("{:.16e}", r.approx_kl),
            format!("{:.16e}", r.random_kl),
        ])?;
    }
    w.flush()?;
    Ok(())
}
