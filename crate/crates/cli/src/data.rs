//! Turning a config into per-client train/test data.

use std::fs;
use std::path::{Path, PathBuf};

use fedakd_core::data_gen::{
    gaussian_blobs, generate_covariate_shift, partition_cla, partition_dirichlet,
    partition_powerlaw, BlobSpec,
};
use fedakd_core::fl_engine::ClientState;
use fedakd_core::rng::stream;
use fedakd_core::{Classifier, Dataset, ModelKind, ShiftSpec};
use serde::{Deserialize, Serialize};

use crate::config::{DatasetSource, ExperimentConfig, Partition};
use crate::error::CliError;

const STREAM_DATA: u64 = 0xDA7A;
const STREAM_MODEL: u64 = 0x30DE;

pub const MANIFEST: &str = "manifest.json";

/// Client data for one run, in client-id order.
#[derive(Debug, Clone)]
pub struct FederatedData {
    pub train: Vec<Dataset>,
    pub test: Vec<Dataset>,
    /// Size of each client's share before the train/test split.
    pub sizes: Vec<usize>,
    pub shifts: Option<Vec<Vec<f64>>>,
}

impl FederatedData {
    pub fn pooled_train(&self) -> Result<Dataset, CliError> {
        Ok(Dataset::concat(&self.train.iter().collect::<Vec<_>>())?)
    }

    pub fn pooled_test(&self) -> Result<Dataset, CliError> {
        Ok(Dataset::concat(&self.test.iter().collect::<Vec<_>>())?)
    }

    pub fn dim(&self) -> usize {
        self.train[0].dim()
    }

    pub fn classes(&self) -> usize {
        self.train[0].classes()
    }

    /// Client states starting from `initial`, evaluated locally or on the pooled test set.
    pub fn clients(
        &self,
        initial: &Classifier,
        pooled_eval: bool,
    ) -> Result<Vec<ClientState>, CliError> {
        let pooled = if pooled_eval {
            Some(self.pooled_test()?)
        } else {
            None
        };
        self.train
            .iter()
            .zip(&self.test)
            .enumerate()
            .map(|(id, (tr, te))| {
                let test = pooled.clone().unwrap_or_else(|| te.clone());
                Ok(ClientState::new(id, initial.clone(), tr.clone(), test)?)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub partition: String,
    pub clients: usize,
    pub classes: usize,
    pub sizes: Vec<usize>,
    pub train_sizes: Vec<usize>,
    pub test_sizes: Vec<usize>,
    pub radius: Option<f64>,
    pub shifts: Option<Vec<Vec<f64>>>,
}

fn base_dataset(cfg: &ExperimentConfig, seed: u64) -> Result<Dataset, CliError> {
    match &cfg.dataset {
        DatasetSource::Blobs {
            classes,
            dims,
            separation,
            n,
        } => {
            let spec = BlobSpec {
                classes: *classes,
                dims: *dims,
                separation: *separation,
                n: *n,
            };
            Ok(gaussian_blobs(&spec, &mut stream(seed, &[STREAM_DATA, 0]))?)
        }
        DatasetSource::Csv { path, classes } => {
            Dataset::load_csv(path, *classes).map_err(|e| CliError::file(path, e))
        }
        DatasetSource::Generated { .. } => unreachable!("generated data is loaded directly"),
    }
}

/// Generates, partitions and splits the data of a run with `seed`.
pub fn build(cfg: &ExperimentConfig, seed: u64) -> Result<FederatedData, CliError> {
    if let DatasetSource::Generated { dir } = &cfg.dataset {
        return load_generated(dir, cfg.fed.clients);
    }
    let data = base_dataset(cfg, seed)?;
    let k = cfg.fed.clients;
    let mut rng = stream(seed, &[STREAM_DATA, 1]);
    let draw = ((cfg.draw_fraction * data.len() as f64).floor() as usize).max(k);
    let (parts, shifts) = match &cfg.partition {
        Partition::Pow { exponent } => (partition_powerlaw(&data, k, *exponent, &mut rng)?, None),
        Partition::Cla => (partition_cla(&data, k, &mut rng)?, None),
        Partition::Dir { alpha } => (partition_dirichlet(&data, k, *alpha, &mut rng)?, None),
        Partition::Bcs { radius } => {
            let spec = ShiftSpec::balanced(*radius, draw, k)?;
            let out = generate_covariate_shift(&data, &spec, k, &mut rng)?;
            (out.clients, Some(out.shifts))
        }
        Partition::Ics { radius, exponent } => {
            let spec = ShiftSpec::power_law(*radius, draw, k, *exponent)?;
            let out = generate_covariate_shift(&data, &spec, k, &mut rng)?;
            (out.clients, Some(out.shifts))
        }
    };
    let sizes: Vec<usize> = parts.iter().map(Dataset::len).collect();
    let mut train = Vec::with_capacity(k);
    let mut test = Vec::with_capacity(k);
    for (id, part) in parts.iter().enumerate() {
        if part.len() < 2 {
            return Err(CliError::Config(format!(
                "client {id} received {} samples; at least 2 are needed for a train/test split",
                part.len()
            )));
        }
        let (tr, te) = part.split_train_test(
            cfg.test_fraction,
            &mut stream(seed, &[STREAM_DATA, 2, id as u64]),
        )?;
        train.push(tr);
        test.push(te);
    }
    Ok(FederatedData {
        train,
        test,
        sizes,
        shifts: shifts.map(|s| s.iter().map(|v| v.as_slice().to_vec()).collect()),
    })
}

/// The shared starting model of a run.
pub fn initial_model(cfg: &ExperimentConfig, dim: usize, classes: usize, seed: u64) -> Classifier {
    let model = match cfg.model {
        ModelKind::Linear => Classifier::linear(dim, classes),
        ModelKind::Mlp1 { hidden } => {
            Classifier::mlp1(dim, hidden, classes, &mut stream(seed, &[STREAM_MODEL]))
        }
    };
    model.with_tau(cfg.tau)
}

pub fn client_file(dir: &Path, id: usize, part: &str) -> PathBuf {
    dir.join(format!("client_{id}_{part}.csv"))
}

pub fn write_generated(
    dir: &Path,
    data: &FederatedData,
    manifest: &Manifest,
) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    for (id, (tr, te)) in data.train.iter().zip(&data.test).enumerate() {
        for (part, d) in [("train", tr), ("test", te)] {
            let path = client_file(dir, id, part);
            d.save_csv(&path).map_err(|e| CliError::file(&path, e))?;
        }
    }
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))
}

fn load_generated(dir: &Path, clients: usize) -> Result<FederatedData, CliError> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if manifest.clients != clients {
        return Err(CliError::Config(format!(
            "{} holds {} clients but the config asks for {clients}",
            dir.display(),
            manifest.clients
        )));
    }
    let load = |id: usize, part: &str| {
        let p = client_file(dir, id, part);
        Dataset::load_csv(&p, Some(manifest.classes)).map_err(|e| CliError::file(&p, e))
    };
    let mut train = Vec::with_capacity(clients);
    let mut test = Vec::with_capacity(clients);
    for id in 0..clients {
        train.push(load(id, "train")?);
        test.push(load(id, "test")?);
    }
    Ok(FederatedData {
        train,
        test,
        sizes: manifest.sizes,
        shifts: manifest.shifts,
    })
}
