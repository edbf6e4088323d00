//! Datasets, Gaussian fitting and federated partitioners.

mod dataset;
mod gaussian;
mod partition;
mod shift;
mod synthetic;

pub use dataset::Dataset;
pub(crate) use gaussian::is_symmetric;
pub use gaussian::{fit_gaussian, GaussianParams};
pub use partition::{
    partition_cla, partition_dirichlet, partition_powerlaw, powerlaw_sizes, split_class_counts,
};
pub use shift::{
    generate_covariate_shift, importance_weights, sample_shift_vector, shift_from_direction,
    ShiftSpec, ShiftedClients,
};
pub use synthetic::{gaussian_blobs, BlobSpec};
