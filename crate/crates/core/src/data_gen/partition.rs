//! Label- and size-skewed partitioners.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use super::Dataset;
use crate::error::{invalid, Error, Result};

/// Client sizes proportional to `k^-exponent` (k = 1..K), summing exactly to `n_total`.
///
/// Floors are taken first, then the remainder is handed out one per client by
/// descending fractional part, ties going to the lower client index.
pub fn powerlaw_sizes(n_total: usize, clients: usize, exponent: f64) -> Result<Vec<usize>> {
    if clients == 0 {
        return Err(invalid("K must be at least 1"));
    }
    if n_total < clients {
        return Err(Error::TooFewSamples);
    }
    let z: f64 = (1..=clients).map(|j| (j as f64).powf(-exponent)).sum();
    let raw: Vec<f64> = (1..=clients)
        .map(|k| n_total as f64 / ((k as f64).powf(exponent) * z))
        .collect();
    let mut sizes: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..clients).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &k in order.iter().take(n_total.saturating_sub(assigned)) {
        sizes[k] += 1;
    }
    if sizes.contains(&0) {
        return Err(Error::TooFewSamples);
    }
    Ok(sizes)
}

/// POW partition: shuffle, then cut consecutive chunks of power-law sizes.
pub fn partition_powerlaw<R: Rng + ?Sized>(
    data: &Dataset,
    clients: usize,
    exponent: f64,
    rng: &mut R,
) -> Result<Vec<Dataset>> {
    let sizes = powerlaw_sizes(data.len(), clients, exponent)?;
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(rng);
    let mut start = 0;
    Ok(sizes
        .iter()
        .map(|&s| {
            let mut part = idx[start..start + s].to_vec();
            start += s;
            part.sort_unstable();
            data.subset(&part)
        })
        .collect())
}

/// Per-client counts for one class: `floor(p_k · n)`, leftovers to the argmax of `p`.
pub fn split_class_counts(p: &[f64], n: usize) -> Vec<usize> {
    let mut counts: Vec<usize> = p
        .iter()
        .map(|pk| (pk * n as f64).floor() as usize)
        .collect();
    let mut assigned: usize = counts.iter().sum();
    // floating error can push the sum past n by one at most
    while assigned > n {
        let k = (0..counts.len()).rev().max_by_key(|&k| counts[k]).unwrap();
        counts[k] -= 1;
        assigned -= 1;
    }
    let top = argmax(p);
    counts[top] += n - assigned;
    counts
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (k, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = k;
        }
    }
    best
}

fn dirichlet_draw<R: Rng + ?Sized>(clients: usize, alpha: f64, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha > 0");
    let mut p: Vec<f64> = (0..clients).map(|_| gamma.sample(rng)).collect();
    let sum: f64 = p.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        p.iter_mut().for_each(|v| *v /= sum);
    } else {
        // every gamma draw underflowed: the alpha -> 0 limit is a random vertex
        let k = rng.random_range(0..clients);
        p = vec![0.0; clients];
        p[k] = 1.0;
    }
    p
}

/// DIR partition. Each class is split among clients by a fresh symmetric Dirichlet draw.
pub fn partition_dirichlet<R: Rng + ?Sized>(
    data: &Dataset,
    clients: usize,
    alpha: f64,
    rng: &mut R,
) -> Result<Vec<Dataset>> {
    if clients == 0 {
        return Err(invalid("K must be at least 1"));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(invalid("Dirichlet alpha must be positive"));
    }
    let mut parts: Vec<Vec<usize>> = vec![Vec::new(); clients];
    for class in 0..data.classes() {
        let mut idx = data.class_indices(class);
        if idx.is_empty() {
            continue;
        }
        idx.shuffle(rng);
        let p = dirichlet_draw(clients, alpha, rng);
        let counts = split_class_counts(&p, idx.len());
        let mut start = 0;
        for (k, c) in counts.into_iter().enumerate() {
            parts[k].extend_from_slice(&idx[start..start + c]);
            start += c;
        }
    }
    Ok(parts
        .into_iter()
        .map(|mut p| {
            p.sort_unstable();
            data.subset(&p)
        })
        .collect())
}

/// CLA partition: client k (1-based) holds classes `0..k`.
///
/// Every client gets `n / K` samples (the last one also takes the remainder),
/// split evenly over its classes with lower classes taking any extra. Within
/// a client each class is sampled without replacement; different clients
/// sample independently and may share rows.
pub fn partition_cla<R: Rng + ?Sized>(
    data: &Dataset,
    clients: usize,
    rng: &mut R,
) -> Result<Vec<Dataset>> {
    if clients == 0 {
        return Err(invalid("K must be at least 1"));
    }
    if data.classes() < clients {
        return Err(invalid(format!(
            "CLA needs at least K = {clients} classes, data has {}",
            data.classes()
        )));
    }
    let n = data.len();
    let per_client = n / clients;
    let by_class: Vec<Vec<usize>> = (0..clients).map(|c| data.class_indices(c)).collect();
    let mut out = Vec::with_capacity(clients);
    for k in 1..=clients {
        let size = if k == clients {
            n - per_client * (clients - 1)
        } else {
            per_client
        };
        let base = size / k;
        let extra = size % k;
        let mut rows = Vec::with_capacity(size);
        for (class, pool) in by_class.iter().enumerate().take(k) {
            let need = base + usize::from(class < extra);
            if need > pool.len() {
                return Err(Error::InsufficientClass {
                    class,
                    needed: need,
                    available: pool.len(),
                });
            }
            let mut picked: Vec<usize> = index::sample(rng, pool.len(), need)
                .into_iter()
                .map(|i| pool[i])
                .collect();
            picked.sort_unstable();
            rows.extend(picked);
        }
        out.push(data.subset(&rows));
    }
    Ok(out)
}
