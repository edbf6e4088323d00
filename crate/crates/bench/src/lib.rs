//! Shared fixtures for the kernel benchmarks.

use fedakd_core::data_gen::{gaussian_blobs, BlobSpec};
use fedakd_core::fl_engine::ClientState;
use fedakd_core::rng::seeded;
use fedakd_core::{Classifier, Dataset};

pub fn blobs(n: usize, dims: usize, seed: u64) -> Dataset {
    let spec = BlobSpec {
        classes: 2,
        dims,
        separation: 2.0,
        n,
    };
    gaussian_blobs(&spec, &mut seeded(seed)).expect("valid blob spec")
}

/// `k` clients of `n` samples each, plus the union of their training data.
pub fn federation(
    k: usize,
    n: usize,
    dims: usize,
    model: &Classifier,
) -> (Vec<ClientState>, Dataset) {
    let clients: Vec<ClientState> = (0..k)
        .map(|id| {
            let d = blobs(n, dims, id as u64);
            let (train, test) = d
                .split_train_test(0.2, &mut seeded(1000 + id as u64))
                .expect("split");
            ClientState::new(id, model.clone(), train, test).expect("client")
        })
        .collect();
    let pooled =
        Dataset::concat(&clients.iter().map(|c| &c.train).collect::<Vec<_>>()).expect("concat");
    (clients, pooled)
}
