use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{invalid, Result};

/// Isotropic unit-variance Gaussian blobs, one per class.
///
/// Class `c` is centred at `separation · e_{c mod dims}`; any two class
/// centres are `separation · √2` apart. Class sizes are `n / classes`, the
/// remainder going to the lowest classes. Rows are shuffled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub classes: usize,
    pub dims: usize,
    pub separation: f64,
    pub n: usize,
}

impl Default for BlobSpec {
    fn default() -> Self {
        Self {
            classes: 2,
            dims: 10,
            separation: 2.0,
            n: 4000,
        }
    }
}

pub fn gaussian_blobs<R: Rng + ?Sized>(spec: &BlobSpec, rng: &mut R) -> Result<Dataset> {
    if spec.classes == 0 || spec.dims == 0 {
        return Err(invalid("blobs need at least one class and one dimension"));
    }
    if spec.classes > spec.dims {
        return Err(invalid("blob centres need dims >= classes"));
    }
    let mut labels: Vec<usize> = (0..spec.n).map(|i| i % spec.classes).collect();
    labels.shuffle(rng);
    let mut features = Vec::with_capacity(spec.n * spec.dims);
    for &y in &labels {
        for j in 0..spec.dims {
            let centre = if j == y % spec.dims {
                spec.separation
            } else {
                0.0
            };
            features.push(centre + rng.sample::<f64, _>(StandardNormal));
        }
    }
    Dataset::new(spec.dims, spec.classes, features, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn balanced_and_centred() {
        let spec = BlobSpec {
            n: 20000,
            ..BlobSpec::default()
        };
        let d = gaussian_blobs(&spec, &mut seeded(1)).unwrap();
        assert_eq!(d.class_counts(), vec![10000, 10000]);
        let mean0: f64 = d.class_indices(0).iter().map(|&i| d.row(i)[0]).sum::<f64>() / 10000.0;
        let mean1: f64 = d.class_indices(1).iter().map(|&i| d.row(i)[0]).sum::<f64>() / 10000.0;
        assert!((mean0 - 2.0).abs() < 0.05);
        assert!(mean1.abs() < 0.05);
    }
}
