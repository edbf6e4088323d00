//! Gaussian importance-sampling covariate-shift generator.
//!
//! A baseline Gaussian is fitted to the pooled data. Each client gets a mean
//! shift `δ_k` with `δ_kᵀ Σ⁻¹ δ_k = C`, and draws its samples with
//! replacement from the pooled rows, weighted by the density of
//! `N(μ + δ_k, Σ)` at each row. Labels travel with their rows unchanged.

use nalgebra::DVector;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::partition::powerlaw_sizes;
use super::{fit_gaussian, Dataset, GaussianParams};
use crate::error::{invalid, Result};

/// Shift radius (squared Mahalanobis length) and per-client draw counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSpec {
    radius: f64,
    sizes: Vec<usize>,
}

impl ShiftSpec {
    pub fn new(radius: f64, sizes: Vec<usize>) -> Result<Self> {
        if !(radius >= 0.0 && radius.is_finite()) {
            return Err(invalid("shift radius must be a finite nonnegative number"));
        }
        if sizes.is_empty() {
            return Err(invalid("at least one client size is required"));
        }
        if sizes.contains(&0) {
            return Err(invalid("every client needs at least one sample"));
        }
        Ok(Self { radius, sizes })
    }

    /// Equal sizes summing to `total`; the remainder goes one each to the lowest client ids.
    pub fn balanced(radius: f64, total: usize, clients: usize) -> Result<Self> {
        if clients == 0 || total < clients {
            return Err(crate::Error::TooFewSamples);
        }
        let base = total / clients;
        let extra = total % clients;
        Self::new(
            radius,
            (0..clients)
                .map(|k| base + usize::from(k < extra))
                .collect(),
        )
    }

    pub fn power_law(radius: f64, total: usize, clients: usize, exponent: f64) -> Result<Self> {
        Self::new(radius, powerlaw_sizes(total, clients, exponent)?)
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn total(&self) -> usize {
        self.sizes.iter().sum()
    }
}

/// Scales a raw direction `u` so that `δ = s·L u` lies on the Mahalanobis sphere of radius `C`.
pub fn shift_from_direction(
    g: &GaussianParams,
    radius: f64,
    u: &DVector<f64>,
) -> Result<DVector<f64>> {
    if radius < 0.0 {
        return Err(invalid("shift radius must be nonnegative"));
    }
    let uu = u.norm_squared();
    if uu == 0.0 {
        return Err(invalid("shift direction must be nonzero"));
    }
    Ok(g.chol_factor() * u * (radius / uu).sqrt())
}

/// Draws `δ` with `δᵀ Σ⁻¹ δ = C`, direction isotropic in the Σ metric.
pub fn sample_shift_vector<R: Rng + ?Sized>(
    g: &GaussianParams,
    radius: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if radius < 0.0 {
        return Err(invalid("shift radius must be nonnegative"));
    }
    loop {
        let u = DVector::from_fn(g.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        if u.norm_squared() > 0.0 {
            return shift_from_direction(g, radius, &u);
        }
    }
}

/// Normalized weights `∝ exp(-½ (x_i − μ_k)ᵀ Σ⁻¹ (x_i − μ_k))`, computed in log space.
pub fn importance_weights(
    data: &Dataset,
    shifted_mean: &DVector<f64>,
    g: &GaussianParams,
) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(crate::Error::EmptyInput);
    }
    if shifted_mean.len() != data.dim() || g.dim() != data.dim() {
        return Err(crate::Error::DimensionMismatch {
            expected: data.dim(),
            actual: shifted_mean.len(),
        });
    }
    let log_w: Vec<f64> = data
        .rows()
        .map(|x| -0.5 * g.mahalanobis_sq_from(x, shifted_mean))
        .collect();
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v /= total;
    }
    Ok(w)
}

/// Output of [`generate_covariate_shift`]: client datasets plus the shift
/// vectors and source-row indices that produced them.
#[derive(Debug, Clone)]
pub struct ShiftedClients {
    pub clients: Vec<Dataset>,
    pub shifts: Vec<DVector<f64>>,
    pub source_rows: Vec<Vec<usize>>,
    pub base: GaussianParams,
}

pub fn generate_covariate_shift<R: Rng + ?Sized>(
    data: &Dataset,
    spec: &ShiftSpec,
    clients: usize,
    rng: &mut R,
) -> Result<ShiftedClients> {
    if spec.sizes().len() != clients {
        return Err(invalid(format!(
            "shift spec lists {} sizes for {clients} clients",
            spec.sizes().len()
        )));
    }
    let base = fit_gaussian(data)?;
    let mut out = ShiftedClients {
        clients: Vec::with_capacity(clients),
        shifts: Vec::with_capacity(clients),
        source_rows: Vec::with_capacity(clients),
        base: base.clone(),
    };
    for &n_k in spec.sizes() {
        let delta = sample_shift_vector(&base, spec.radius(), rng)?;
        let mu_k = base.mean() + &delta;
        let weights = importance_weights(data, &mu_k, &base)?;
        let dist = WeightedIndex::new(&weights)
            .map_err(|e| invalid(format!("importance weights: {e}")))?;
        let rows: Vec<usize> = (0..n_k).map(|_| dist.sample(rng)).collect();
        out.clients.push(data.subset(&rows));
        out.shifts.push(delta);
        out.source_rows.push(rows);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn gauss(cov: &[f64], d: usize) -> GaussianParams {
        GaussianParams::new(DVector::zeros(d), DMatrix::from_row_slice(d, d, cov)).unwrap()
    }

    #[test]
    fn identity_metric_gives_euclidean_radius() {
        let g = gauss(&[1.0, 0.0, 0.0, 1.0], 2);
        let delta = sample_shift_vector(&g, 4.0, &mut seeded(3)).unwrap();
        assert_abs_diff_eq!(delta.norm(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_radius_is_zero_shift() {
        let g = gauss(&[2.0, 0.3, 0.3, 1.0], 2);
        let delta = sample_shift_vector(&g, 0.0, &mut seeded(3)).unwrap();
        assert!(delta.iter().all(|v| *v == 0.0));
        assert!(sample_shift_vector(&g, -1.0, &mut seeded(3)).is_err());
    }

    #[test]
    fn fixed_direction_scales_through_factor() {
        let g = gauss(&[4.0, 0.0, 0.0, 1.0], 2);
        let delta = shift_from_direction(&g, 1.0, &DVector::from_vec(vec![1.0, 0.0])).unwrap();
        assert_abs_diff_eq!(delta[0], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(delta[1], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn weights_single_and_symmetric_rows() {
        let g = gauss(&[1.0, 0.0, 0.0, 1.0], 2);
        let one = Dataset::from_rows(1, &[vec![5.0, 5.0]], vec![0]).unwrap();
        assert_eq!(
            importance_weights(&one, &DVector::zeros(2), &g).unwrap(),
            vec![1.0]
        );

        let two = Dataset::from_rows(1, &[vec![1.0, 0.0], vec![-1.0, 0.0]], vec![0, 0]).unwrap();
        let w = importance_weights(&two, &DVector::zeros(2), &g).unwrap();
        assert_abs_diff_eq!(w[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(w[1], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn weights_at_ln2_distance() {
        let g = gauss(&[1.0], 1);
        let r = (2.0 * 2f64.ln()).sqrt();
        let d = Dataset::from_rows(1, &[vec![0.0], vec![r]], vec![0, 0]).unwrap();
        let w = importance_weights(&d, &DVector::zeros(1), &g).unwrap();
        assert_abs_diff_eq!(w[0], 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w[1], 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn far_rows_do_not_underflow() {
        let g = gauss(&[1e-4], 1);
        let d = Dataset::from_rows(1, &[vec![10.0], vec![10.01]], vec![0, 0]).unwrap();
        let w = importance_weights(&d, &DVector::zeros(1), &g).unwrap();
        assert!(w.iter().all(|v| v.is_finite()));
        assert_abs_diff_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    fn blob(n: usize, seed: u64) -> Dataset {
        let g = gauss(&[1.0, 0.0, 0.0, 1.0], 2);
        let mut rng = seeded(seed);
        let mut d = g.sample_dataset(n, &mut rng);
        // alternate labels so label preservation is observable
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        d = Dataset::new(2, 2, d.features().to_vec(), labels).unwrap();
        d
    }

    #[test]
    fn sizes_match_and_rows_come_from_input() {
        let data = blob(300, 1);
        let spec = ShiftSpec::power_law(2.0, 150, 3, 1.0).unwrap();
        let out = generate_covariate_shift(&data, &spec, 3, &mut seeded(9)).unwrap();
        assert_eq!(
            out.clients.iter().map(Dataset::len).collect::<Vec<_>>(),
            vec![82, 41, 27]
        );
        for (client, rows) in out.clients.iter().zip(&out.source_rows) {
            for (i, &src) in rows.iter().enumerate() {
                assert_eq!(client.row(i), data.row(src));
                assert_eq!(client.label(i), data.label(src));
            }
        }
    }

    #[test]
    fn zero_radius_clients_share_one_weight_law() {
        let data = blob(200, 2);
        let spec = ShiftSpec::balanced(0.0, 40, 2).unwrap();
        let out = generate_covariate_shift(&data, &spec, 2, &mut seeded(4)).unwrap();
        for s in &out.shifts {
            assert!(s.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn shifted_mean_moves_toward_target() {
        let data = blob(4000, 5);
        let spec = ShiftSpec::balanced(9.0, 2000, 1).unwrap();
        let out = generate_covariate_shift(&data, &spec, 1, &mut seeded(6)).unwrap();
        let base = &out.base;
        let delta = &out.shifts[0];
        let client = &out.clients[0];
        let mut mean = DVector::zeros(2);
        for r in client.rows() {
            mean[0] += r[0];
            mean[1] += r[1];
        }
        mean /= client.len() as f64;
        let offset = &mean - base.mean();
        // projection along δ lies strictly inside (0, |δ|)
        let t = offset.dot(delta) / delta.norm_squared();
        assert!(t > 0.0 && t < 1.0, "t = {t}");
        let along = base.mean() + delta * t;
        assert!((&mean - along).norm() < 0.5);
    }

    proptest! {
        #[test]
        fn shift_lies_on_mahalanobis_sphere(a in 0.2f64..5.0, b in -0.9f64..0.9, c in 0.2f64..5.0, radius in 0.0f64..50.0, seed in any::<u64>()) {
            let off = b * (a * c).sqrt();
            let g = gauss(&[a, off, off, c], 2);
            let delta = sample_shift_vector(&g, radius, &mut seeded(seed)).unwrap();
            let q = g.inv_quad(&delta);
            prop_assert!((q - radius).abs() <= 1e-9 * radius.max(1e-300));
        }

        #[test]
        fn weights_are_a_probability_vector(xs in prop::collection::vec(-30.0f64..30.0, 1..50), center in -30.0f64..30.0) {
            let g = gauss(&[0.5], 1);
            let rows: Vec<Vec<f64>> = xs.iter().map(|v| vec![*v]).collect();
            let d = Dataset::from_rows(1, &rows, vec![0; rows.len()]).unwrap();
            let w = importance_weights(&d, &DVector::from_vec(vec![center]), &g).unwrap();
            prop_assert!(w.iter().all(|v| *v >= 0.0));
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }
}
