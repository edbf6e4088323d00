//! Distribution diagnostics: 1-D PCA projection, kernel density estimates and
//! the divergence between correctly and incorrectly classified samples.
//!
//! Linear models are analysed on their raw input features; one-hidden-layer
//! models on their hidden activations.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data_gen::{fit_gaussian, Dataset};
use crate::error::{Error, Result};
use crate::models::Classifier;
use crate::shift_theory::kl_gaussian_exact;

pub const DENSITY_FLOOR: f64 = 1e-12;
pub const GRID_POINTS: usize = 512;
const POWER_TOL: f64 = 1e-9;
const POWER_MAX_ITER: usize = 1000;

/// Leading principal direction and the centered projections onto it.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub direction: Vec<f64>,
    pub eigenvalue: f64,
    pub values: Vec<f64>,
}

fn population_covariance(rows: &[&[f64]]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if rows.len() < 2 {
        return Err(Error::TooFewSamples);
    }
    let d = rows[0].len();
    let n = rows.len() as f64;
    let mut mean = DVector::zeros(d);
    for r in rows {
        if r.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: r.len(),
            });
        }
        mean += DVector::from_column_slice(r);
    }
    mean /= n;
    let mut cov = DMatrix::zeros(d, d);
    for r in rows {
        let c = DVector::from_column_slice(r) - &mean;
        cov.ger(1.0, &c, &c, 1.0);
    }
    cov /= n;
    Ok((mean, cov))
}

/// Top eigenvector of a symmetric positive semidefinite matrix by power iteration.
fn leading_eigenvector(cov: &DMatrix<f64>) -> Result<(DVector<f64>, f64)> {
    if cov.trace() <= 0.0 {
        return Err(Error::Degenerate("zero total variance"));
    }
    let start = (0..cov.ncols())
        .max_by(|&a, &b| cov.column(a).norm().total_cmp(&cov.column(b).norm()))
        .expect("nonempty matrix");
    let mut v = cov.column(start).into_owned();
    v /= v.norm();
    for _ in 0..POWER_MAX_ITER {
        let mut next = cov * &v;
        let norm = next.norm();
        if norm == 0.0 {
            break;
        }
        next /= norm;
        let change = (&next - &v).norm();
        v = next;
        if change < POWER_TOL {
            break;
        }
    }
    let big = v.iamax();
    if v[big] < 0.0 {
        v = -v;
    }
    let lambda = v.dot(&(cov * &v));
    Ok((v, lambda))
}

/// Projects the centered rows onto the top eigenvector of their population covariance.
pub fn pca_project_1d(rows: &[&[f64]]) -> Result<Projection> {
    let (mean, cov) = population_covariance(rows)?;
    let (v, lambda) = leading_eigenvector(&cov)?;
    let values = rows
        .iter()
        .map(|r| (DVector::from_column_slice(r) - &mean).dot(&v))
        .collect();
    Ok(Projection {
        direction: v.as_slice().to_vec(),
        eigenvalue: lambda,
        values,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Density1D {
    pub grid: Vec<f64>,
    pub pdf: Vec<f64>,
}

impl Density1D {
    /// Trapezoidal integral of the density over its grid.
    pub fn integral(&self) -> f64 {
        trapezoid(&self.grid, self.pdf.iter().copied())
    }
}

fn trapezoid(grid: &[f64], values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    grid.windows(2)
        .zip(v.windows(2))
        .map(|(g, f)| 0.5 * (g[1] - g[0]) * (f[0] + f[1]))
        .sum()
}

/// `1.06 · σ̂ · n^(-1/5)` with the unbiased sample standard deviation.
pub fn silverman_bandwidth(samples: &[f64]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::TooFewSamples);
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if !(var > 0.0) {
        return Err(Error::Degenerate("samples have zero variance"));
    }
    Ok(1.06 * var.sqrt() * n.powf(-0.2))
}

/// Gaussian kernel density estimate evaluated on `grid`.
pub fn kde_pdf(samples: &[f64], grid: &[f64]) -> Result<Density1D> {
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(crate::error::invalid("grid must be strictly increasing"));
    }
    let h = silverman_bandwidth(samples)?;
    let norm = 1.0 / (samples.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let pdf = grid
        .iter()
        .map(|g| {
            norm * samples
                .iter()
                .map(|x| {
                    let z = (g - x) / h;
                    (-0.5 * z * z).exp()
                })
                .sum::<f64>()
        })
        .collect();
    Ok(Density1D {
        grid: grid.to_vec(),
        pdf,
    })
}

/// `∫ p log(p/q)` by the trapezoid rule, both densities floored at [`DENSITY_FLOOR`].
pub fn kl_empirical_1d(p: &Density1D, q: &Density1D) -> Result<f64> {
    if p.grid != q.grid || p.pdf.len() != p.grid.len() || q.pdf.len() != q.grid.len() {
        return Err(Error::GridMismatch);
    }
    let integrand = p.pdf.iter().zip(&q.pdf).map(|(&a, &b)| {
        let (a, b) = (a.max(DENSITY_FLOOR), b.max(DENSITY_FLOOR));
        a * (a / b).ln()
    });
    Ok(trapezoid(&p.grid, integrand))
}

/// `n` evenly spaced points from `lo` to `hi`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientDivergence {
    pub client: usize,
    pub kl_right: Option<f64>,
    pub kl_wrong: Option<f64>,
    /// Fewer than two correct or two incorrect samples.
    pub skipped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedDensity {
    /// Client id, or `None` for the pooled set.
    pub client: Option<usize>,
    /// `"right"` or `"wrong"`.
    pub set: &'static str,
    pub density: Density1D,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceReport {
    pub clients: Vec<ClientDivergence>,
    pub direction: Vec<f64>,
    pub densities: Vec<NamedDensity>,
}

impl DivergenceReport {
    fn usable(&self) -> impl Iterator<Item = &ClientDivergence> {
        self.clients.iter().filter(|c| !c.skipped)
    }

    pub fn mean_kl_right(&self) -> f64 {
        mean(self.usable().filter_map(|c| c.kl_right))
    }

    pub fn mean_kl_wrong(&self) -> f64 {
        mean(self.usable().filter_map(|c| c.kl_wrong))
    }

    /// CSV with header `client,kl_right,kl_wrong,skipped`; skipped clients have empty KL fields.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["client", "kl_right", "kl_wrong", "skipped"])?;
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.16e}")).unwrap_or_default();
        for c in &self.clients {
            w.write_record([
                c.client.to_string(),
                fmt(c.kl_right),
                fmt(c.kl_wrong),
                c.skipped.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Long-format CSV `client,set,x,pdf`; the pooled densities use client `all`.
    pub fn write_densities_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["client", "set", "x", "pdf"])?;
        for d in &self.densities {
            let who = d
                .client
                .map(|c| c.to_string())
                .unwrap_or_else(|| "all".into());
            for (x, p) in d.density.grid.iter().zip(&d.density.pdf) {
                w.write_record([
                    who.clone(),
                    d.set.to_string(),
                    format!("{x:.16e}"),
                    format!("{p:.16e}"),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Per-client KL between its right (wrong) sample density and the pooled right (wrong) density.
///
/// `clients` pairs each client's evaluation data with the model whose
/// predictions split it. All projections share one PCA direction fitted on
/// the pooled representations.
pub fn right_wrong_divergence(
    clients: &[(usize, &Dataset, &Classifier)],
) -> Result<DivergenceReport> {
    struct Split {
        id: usize,
        right: Vec<usize>,
        wrong: Vec<usize>,
        offset: usize,
    }
    let mut reps: Vec<Vec<f64>> = Vec::new();
    let mut splits = Vec::with_capacity(clients.len());
    for &(id, data, model) in clients {
        let pred = model.predict(data.features())?;
        let offset = reps.len();
        let (mut right, mut wrong) = (Vec::new(), Vec::new());
        for (i, x) in data.rows().enumerate() {
            reps.push(model.representation(x));
            if pred[i] == data.labels()[i] {
                right.push(offset + i);
            } else {
                wrong.push(offset + i);
            }
        }
        splits.push(Split {
            id,
            right,
            wrong,
            offset,
        });
    }
    if let Some(bad) = reps.iter().find(|r| r.len() != reps[0].len()) {
        return Err(Error::DimensionMismatch {
            expected: reps[0].len(),
            actual: bad.len(),
        });
    }
    let usable = splits
        .iter()
        .filter(|s| s.right.len() >= 2 && s.wrong.len() >= 2)
        .count();
    if usable < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 clients with 2 correct and 2 incorrect samples, found {usable}"
        )));
    }

    let rows: Vec<&[f64]> = reps.iter().map(Vec::as_slice).collect();
    let proj = pca_project_1d(&rows)?;
    let z = &proj.values;
    let h = silverman_bandwidth(z)?;
    let (lo, hi) = z
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    let grid = linspace(lo - 3.0 * h, hi + 3.0 * h, GRID_POINTS);

    let pick = |idx: &[usize]| idx.iter().map(|&i| z[i]).collect::<Vec<f64>>();
    let all_right: Vec<usize> = splits
        .iter()
        .flat_map(|s| s.right.iter().copied())
        .collect();
    let all_wrong: Vec<usize> = splits
        .iter()
        .flat_map(|s| s.wrong.iter().copied())
        .collect();
    let global_right = kde_pdf(&pick(&all_right), &grid)?;
    let global_wrong = kde_pdf(&pick(&all_wrong), &grid)?;

    let mut out = Vec::with_capacity(splits.len());
    let mut densities = vec![
        NamedDensity {
            client: None,
            set: "right",
            density: global_right.clone(),
        },
        NamedDensity {
            client: None,
            set: "wrong",
            density: global_wrong.clone(),
        },
    ];
    for s in &splits {
        debug_assert!(s.right.iter().chain(&s.wrong).all(|&i| i >= s.offset));
        if s.right.len() < 2 || s.wrong.len() < 2 {
            out.push(ClientDivergence {
                client: s.id,
                kl_right: None,
                kl_wrong: None,
                skipped: true,
            });
            continue;
        }
        // a client whose projections are all equal has no usable density
        let (Ok(r), Ok(w)) = (
            kde_pdf(&pick(&s.right), &grid),
            kde_pdf(&pick(&s.wrong), &grid),
        ) else {
            out.push(ClientDivergence {
                client: s.id,
                kl_right: None,
                kl_wrong: None,
                skipped: true,
            });
            continue;
        };
        out.push(ClientDivergence {
            client: s.id,
            kl_right: Some(kl_empirical_1d(&r, &global_right)?),
            kl_wrong: Some(kl_empirical_1d(&w, &global_wrong)?),
            skipped: false,
        });
        densities.push(NamedDensity {
            client: Some(s.id),
            set: "right",
            density: r,
        });
        densities.push(NamedDensity {
            client: Some(s.id),
            set: "wrong",
            density: w,
        });
    }
    Ok(DivergenceReport {
        clients: out,
        direction: proj.direction,
        densities,
    })
}

/// KL between a Gaussian fit of each client's features and a fit of the pooled features.
pub fn feature_divergence(clients: &[&Dataset]) -> Result<Vec<f64>> {
    let pooled = Dataset::concat(clients)?;
    let global = fit_gaussian(&pooled)?;
    clients
        .iter()
        .map(|d| kl_gaussian_exact(&fit_gaussian(d)?, &global))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = seeded(seed);
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    fn as_rows(v: &[Vec<f64>]) -> Vec<&[f64]> {
        v.iter().map(Vec::as_slice).collect()
    }

    fn residual(rows: &[&[f64]], p: &Projection) -> f64 {
        let (_, cov) = population_covariance(rows).unwrap();
        let v = DVector::from_column_slice(&p.direction);
        (&cov * &v - &v * p.eigenvalue).norm()
    }

    #[test]
    fn pca_on_a_line() {
        let pts: Vec<Vec<f64>> = (0..20)
            .map(|i| vec![i as f64 * 0.3 - 2.0, 2.0 * (i as f64 * 0.3 - 2.0)])
            .collect();
        let rows = as_rows(&pts);
        let p = pca_project_1d(&rows).unwrap();
        let s5 = 5.0f64.sqrt();
        assert_abs_diff_eq!(p.direction[0], 1.0 / s5, epsilon = 1e-9);
        assert_abs_diff_eq!(p.direction[1], 2.0 / s5, epsilon = 1e-9);
        let mx = pts.iter().map(|r| r[0]).sum::<f64>() / 20.0;
        for (r, z) in pts.iter().zip(&p.values) {
            assert_abs_diff_eq!(*z, (r[0] - mx) * s5, epsilon = 1e-9);
        }
        // variance left after removing the projection
        let resid: f64 = pts
            .iter()
            .zip(&p.values)
            .map(|(r, z)| {
                let e0 = r[0] - mx - z * p.direction[0];
                let e1 = r[1] - 2.0 * mx - z * p.direction[1];
                e0 * e0 + e1 * e1
            })
            .sum::<f64>()
            / 20.0;
        assert!(resid < 1e-18, "{resid}");
    }

    #[test]
    fn pca_isotropic_and_diagonal() {
        let mut rng = seeded(1);
        let iso: Vec<Vec<f64>> = (0..2000)
            .map(|_| (0..3).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let rows = as_rows(&iso);
        let p = pca_project_1d(&rows).unwrap();
        let norm: f64 = p.direction.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert_abs_diff_eq!(norm, 1.0, epsilon = 1e-12);
        assert!(residual(&rows, &p) <= 1e-6);

        let diag: Vec<Vec<f64>> = (0..5000)
            .map(|_| {
                vec![
                    2.0 * rng.sample::<f64, _>(StandardNormal),
                    rng.sample(StandardNormal),
                ]
            })
            .collect();
        let p = pca_project_1d(&as_rows(&diag)).unwrap();
        assert!(p.direction[0] > 0.0);
        let angle = p.direction[0].clamp(-1.0, 1.0).acos().to_degrees();
        assert!(angle < 5.0, "{angle}");
    }

    #[test]
    fn pca_rejects_degenerate_input() {
        let same = vec![vec![1.0, 2.0]; 5];
        assert!(pca_project_1d(&as_rows(&same)).is_err());
        assert!(pca_project_1d(&as_rows(&[vec![1.0]])).is_err());
    }

    #[test]
    fn kde_symmetry_and_normalization() {
        let s = [-1.0, 1.0];
        let h = silverman_bandwidth(&s).unwrap();
        let grid = linspace(-1.0 - 6.0 * h, 1.0 + 6.0 * h, 2001);
        let d = kde_pdf(&s, &grid).unwrap();
        let n = d.pdf.len();
        for i in 0..n {
            assert!((d.pdf[i] - d.pdf[n - 1 - i]).abs() <= 1e-12);
        }
        let total = d.integral();
        assert!((0.99..=1.01).contains(&total), "{total}");
        assert!(kde_pdf(&[3.0, 3.0], &grid).is_err());
        assert!(kde_pdf(&[3.0], &grid).is_err());
    }

    #[test]
    fn kde_recovers_standard_normal() {
        let grid = linspace(-2.0, 2.0, 81);
        let mut avg = vec![0.0; grid.len()];
        let seeds = 3;
        for seed in 0..seeds {
            let d = kde_pdf(&normals(10_000, seed), &grid).unwrap();
            for (a, p) in avg.iter_mut().zip(&d.pdf) {
                *a += p / seeds as f64;
            }
        }
        let worst = grid
            .iter()
            .zip(&avg)
            .map(|(x, p)| (p - (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 0.03, "{worst}");
    }

    #[test]
    fn kl_examples() {
        let a = normals(10_000, 11);
        let b: Vec<f64> = normals(10_000, 12).into_iter().map(|x| x + 1.0).collect();
        let grid = linspace(-6.0, 7.0, 1024);
        let p = kde_pdf(&a, &grid).unwrap();
        let q = kde_pdf(&b, &grid).unwrap();
        assert!(kl_empirical_1d(&p, &p).unwrap().abs() <= 1e-9);
        let pq = kl_empirical_1d(&p, &q).unwrap();
        let qp = kl_empirical_1d(&q, &p).unwrap();
        assert!((pq - 0.5).abs() <= 0.15, "{pq}");
        assert_ne!(pq, qp);
        let other = kde_pdf(&a, &linspace(-6.0, 7.0, 100)).unwrap();
        assert!(matches!(
            kl_empirical_1d(&p, &other),
            Err(Error::GridMismatch)
        ));
    }

    fn two_class(n: usize, seed: u64) -> Dataset {
        let spec = crate::data_gen::BlobSpec {
            classes: 2,
            dims: 2,
            separation: 1.0,
            n,
        };
        crate::data_gen::gaussian_blobs(&spec, &mut seeded(seed)).unwrap()
    }

    fn fitted(d: &Dataset) -> Classifier {
        let sgd = crate::models::Sgd {
            eta: 0.1,
            epochs: 5,
            batch: 16,
        };
        crate::models::train(&Classifier::linear(2, 2), d, None, &sgd, &mut seeded(0))
            .unwrap()
            .model
    }

    #[test]
    fn identical_clients_have_no_divergence() {
        let d = two_class(600, 3);
        let m = fitted(&d);
        let clients: Vec<(usize, &Dataset, &Classifier)> = (0..3).map(|i| (i, &d, &m)).collect();
        let rep = right_wrong_divergence(&clients).unwrap();
        for c in &rep.clients {
            assert!(!c.skipped);
            assert!(c.kl_right.unwrap().abs() <= 0.05);
            assert!(c.kl_wrong.unwrap().abs() <= 0.05);
        }
        for d in &rep.densities {
            assert!(d.density.pdf.iter().all(|&p| p >= 0.0));
            let i = d.density.integral();
            assert!((0.98..=1.02).contains(&i), "{i}");
        }
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("client,kl_right,kl_wrong,skipped\n"));
    }

    #[test]
    fn perfect_client_is_skipped() {
        let d = two_class(400, 4);
        let m = fitted(&d);
        let easy = Dataset::new(
            2,
            2,
            vec![-5.0, -5.0, -6.0, -5.0, 5.0, 5.0, 6.0, 5.0],
            vec![0, 0, 1, 1],
        )
        .unwrap();
        let easy_model = Classifier::from_params(
            crate::models::ModelKind::Linear,
            2,
            2,
            vec![-1.0, 1.0, -1.0, 1.0, 0.0, 0.0],
            1.0,
        )
        .unwrap();
        assert_eq!(easy_model.accuracy(&easy).unwrap(), 1.0);
        let clients = [(0, &d, &m), (1, &easy, &easy_model), (2, &d, &m)];
        let rep = right_wrong_divergence(&clients).unwrap();
        assert!(rep.clients[1].skipped);
        assert!(rep.clients[1].kl_right.is_none());
        assert!(!rep.clients[0].skipped && !rep.clients[2].skipped);
        assert!(right_wrong_divergence(&clients[..2]).is_err());
    }

    #[test]
    fn feature_divergence_is_zero_for_identical_clients() {
        let d = two_class(300, 5);
        let kl = feature_divergence(&[&d, &d]).unwrap();
        assert!(kl.iter().all(|k| k.abs() < 1e-9));
    }

    proptest! {
        #[test]
        fn eigen_residual_bound(seed in 0u64..200, n in 5usize..60) {
            let mut rng = seeded(seed);
            let a: f64 = rng.random_range(0.5..3.0);
            let pts: Vec<Vec<f64>> = (0..n)
                .map(|_| {
                    let x: f64 = rng.sample(StandardNormal);
                    let y: f64 = rng.sample(StandardNormal);
                    vec![a * x, 0.5 * x + y, rng.random_range(-1.0..1.0)]
                })
                .collect();
            let rows = as_rows(&pts);
            let p = pca_project_1d(&rows).unwrap();
            prop_assert!(residual(&rows, &p) <= 1e-6 * p.eigenvalue);
        }

        #[test]
        fn kde_nonnegative_and_kl_floor(seed in 0u64..200, n in 2usize..50) {
            let mut rng = seeded(seed);
            let s: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let t: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..4.0)).collect();
            let grid = linspace(-30.0, 30.0, 1200);
            let (Ok(p), Ok(q)) = (kde_pdf(&s, &grid), kde_pdf(&t, &grid)) else { return Ok(()); };
            prop_assert!(p.pdf.iter().all(|&x| x >= 0.0));
            prop_assert!(kl_empirical_1d(&p, &q).unwrap() >= -1e-9);
        }
    }
}
