//! Federation rounds: asynchronous two-way distillation, baselines and ablations.
//!
//! Each round a client first distills the incoming global model into its own
//! local model on all of its data, then keeps only the samples the updated
//! local model classifies correctly, and finally distills the updated local
//! model back into a copy of the global model on that subset. The server
//! averages the uploaded copies.
//!
//! All randomness is drawn from streams keyed by `(seed, client id, round,
//! step)`, so results do not depend on client order or thread scheduling.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_gen::Dataset;
use crate::error::{invalid, Error, Result};
use crate::models::{train, Classifier, Distill, Sgd};
use crate::rng;

const STEP_LOCAL: u64 = 1;
const STEP_GLOBAL: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    #[serde(rename = "fedakd")]
    FedAkd,
    #[serde(rename = "fedavg")]
    FedAvg,
    Standalone,
    /// Local → global distillation on all local data instead of the correct subset.
    #[serde(rename = "akd_alldata")]
    AkdAllData,
    /// Clients overwrite their local model with the global one instead of distilling.
    #[serde(rename = "akd_singledist")]
    AkdSingleDist,
    /// Server weights uploads by the number of correctly classified samples.
    #[serde(rename = "akd_correctagg")]
    AkdCorrectAgg,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::FedAkd,
        Algorithm::FedAvg,
        Algorithm::Standalone,
        Algorithm::AkdAllData,
        Algorithm::AkdSingleDist,
        Algorithm::AkdCorrectAgg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::FedAkd => "fedakd",
            Algorithm::FedAvg => "fedavg",
            Algorithm::Standalone => "standalone",
            Algorithm::AkdAllData => "akd_alldata",
            Algorithm::AkdSingleDist => "akd_singledist",
            Algorithm::AkdCorrectAgg => "akd_correctagg",
        }
    }

    fn distills(self) -> bool {
        matches!(
            self,
            Algorithm::FedAkd
                | Algorithm::AkdAllData
                | Algorithm::AkdSingleDist
                | Algorithm::AkdCorrectAgg
        )
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown algorithm {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AggWeighting {
    #[default]
    DatasetSize,
    CorrectCount,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FedConfig {
    pub clients: usize,
    pub rounds: usize,
    pub eta: f64,
    pub alpha: f64,
    pub beta: f64,
    pub local_epochs: usize,
    pub batch: usize,
    pub algo: Algorithm,
    pub agg_weighting: AggWeighting,
    pub seed: u64,
}

impl Default for FedConfig {
    fn default() -> Self {
        Self {
            clients: 10,
            rounds: 20,
            eta: 0.05,
            alpha: 1.0,
            beta: 1.0,
            local_epochs: 1,
            batch: 32,
            algo: Algorithm::FedAkd,
            agg_weighting: AggWeighting::DatasetSize,
            seed: 0,
        }
    }
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.clients == 0 {
            return bad("K must be at least 1");
        }
        if self.rounds == 0 {
            return bad("T must be at least 1");
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad("eta must be positive");
        }
        if !(self.alpha >= 0.0
            && self.beta >= 0.0
            && self.alpha.is_finite()
            && self.beta.is_finite())
        {
            return bad("alpha and beta must be nonnegative");
        }
        if self.local_epochs == 0 || self.batch == 0 {
            return bad("local_epochs and batch must be at least 1");
        }
        if self.agg_weighting == AggWeighting::CorrectCount && self.algo != Algorithm::AkdCorrectAgg
        {
            return bad("correct_count weighting is only valid with akd_correctagg");
        }
        Ok(())
    }

    pub fn sgd(&self) -> Sgd {
        Sgd {
            eta: self.eta,
            epochs: self.local_epochs,
            batch: self.batch,
        }
    }

    /// `akd_correctagg` always weights by correct counts.
    pub fn effective_weighting(&self) -> AggWeighting {
        if self.algo == Algorithm::AkdCorrectAgg {
            AggWeighting::CorrectCount
        } else {
            self.agg_weighting
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    pub id: usize,
    pub local_model: Classifier,
    pub train: Dataset,
    pub test: Dataset,
}

impl ClientState {
    pub fn new(id: usize, local_model: Classifier, train: Dataset, test: Dataset) -> Result<Self> {
        if train.is_empty() || test.is_empty() {
            return Err(invalid(format!(
                "client {id} needs nonempty train and test data"
            )));
        }
        for d in [&train, &test] {
            if d.dim() != local_model.dim() {
                return Err(Error::DimensionMismatch {
                    expected: local_model.dim(),
                    actual: d.dim(),
                });
            }
        }
        Ok(Self {
            id,
            local_model,
            train,
            test,
        })
    }
}

/// Samples that `model` classifies correctly, in their original order.
pub fn select_high_confidence(model: &Classifier, data: &Dataset) -> Result<Dataset> {
    if data.is_empty() {
        return Ok(data.clone());
    }
    let pred = model.predict(data.features())?;
    let keep: Vec<usize> = pred
        .iter()
        .zip(data.labels())
        .enumerate()
        .filter_map(|(i, (p, y))| (p == y).then_some(i))
        .collect();
    Ok(data.subset(&keep))
}

#[derive(Debug, Clone)]
pub struct ClientUpdate {
    pub client: usize,
    pub local_model: Classifier,
    /// Model sent to the server; `None` for standalone training.
    pub upload: Option<Classifier>,
    /// `|I_k|` under the updated local model.
    pub selected: usize,
    pub train_size: usize,
    /// The correct subset was empty and the received global model was uploaded unchanged.
    pub empty_selection: bool,
}

/// One client's round `round` (1-based) against the received global model.
pub fn client_update(
    client: &ClientState,
    global: &Classifier,
    cfg: &FedConfig,
    round: usize,
) -> Result<ClientUpdate> {
    let sgd = cfg.sgd();
    let key = |step: u64| rng::stream(cfg.seed, &[client.id as u64, round as u64, step]);
    let data = &client.train;

    let local_new = match cfg.algo {
        Algorithm::FedAkd | Algorithm::AkdAllData | Algorithm::AkdCorrectAgg => {
            let kd = Distill {
                teacher: global,
                coeff: cfg.alpha,
            };
            train(
                &client.local_model,
                data,
                Some(kd),
                &sgd,
                &mut key(STEP_LOCAL),
            )?
            .model
        }
        Algorithm::AkdSingleDist => train(global, data, None, &sgd, &mut key(STEP_LOCAL))?.model,
        Algorithm::Standalone => {
            train(&client.local_model, data, None, &sgd, &mut key(STEP_LOCAL))?.model
        }
        Algorithm::FedAvg => train(global, data, None, &sgd, &mut key(STEP_GLOBAL))?.model,
    };

    let selected = select_high_confidence(&local_new, data)?;
    let mut empty_selection = false;
    let upload = match cfg.algo {
        Algorithm::Standalone => None,
        Algorithm::FedAvg => Some(local_new.clone()),
        algo => {
            debug_assert!(algo.distills());
            let subset = if algo == Algorithm::AkdAllData {
                data
            } else {
                &selected
            };
            if subset.is_empty() {
                empty_selection = true;
                Some(global.clone())
            } else {
                let kd = Distill {
                    teacher: &local_new,
                    coeff: cfg.beta,
                };
                Some(train(global, subset, Some(kd), &sgd, &mut key(STEP_GLOBAL))?.model)
            }
        }
    };

    Ok(ClientUpdate {
        client: client.id,
        local_model: local_new,
        upload,
        selected: selected.len(),
        train_size: data.len(),
        empty_selection,
    })
}

/// Parameter-wise convex combination with weights normalized to sum to one.
pub fn server_aggregate(models: &[&Classifier], weights: &[f64]) -> Result<Classifier> {
    let first = *models.first().ok_or(Error::EmptyInput)?;
    if models.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            expected: models.len(),
            actual: weights.len(),
        });
    }
    if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
        return Err(invalid(
            "aggregation weights must be finite and nonnegative",
        ));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(invalid("aggregation weights are all zero"));
    }
    if let Some(m) = models.iter().find(|m| !m.same_shape(first)) {
        return Err(Error::DimensionMismatch {
            expected: first.params().len(),
            actual: m.params().len(),
        });
    }
    let mut out = first.clone();
    out.params_mut().iter_mut().for_each(|p| *p = 0.0);
    for (m, w) in models.iter().zip(weights) {
        let w = w / total;
        if w == 0.0 {
            continue;
        }
        for (o, p) in out.params_mut().iter_mut().zip(m.params()) {
            *o += w * p;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientRecord {
    pub client: usize,
    pub acc_local: f64,
    pub selected: usize,
    pub train_size: usize,
    pub empty_selection: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// 1-based round index.
    pub round: usize,
    /// CE of the global model received at the start of this round on the pooled data.
    pub global_loss: f64,
    pub clients: Vec<ClientRecord>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RoundHistory {
    pub rounds: Vec<RoundRecord>,
    /// CE of the global model after the last server update.
    pub final_global_loss: f64,
}

impl RoundHistory {
    pub fn global_losses(&self) -> Vec<f64> {
        self.rounds.iter().map(|r| r.global_loss).collect()
    }

    pub fn empty_selections(&self) -> usize {
        self.rounds
            .iter()
            .flat_map(|r| &r.clients)
            .filter(|c| c.empty_selection)
            .count()
    }

    /// CSV with header `round,global_loss,client,acc_local,I_size,D_size`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "round",
            "global_loss",
            "client",
            "acc_local",
            "I_size",
            "D_size",
        ])?;
        for r in &self.rounds {
            for c in &r.clients {
                w.write_record([
                    r.round.to_string(),
                    format!("{:.16e}", r.global_loss),
                    c.client.to_string(),
                    format!("{:.16e}", c.acc_local),
                    c.selected.to_string(),
                    c.train_size.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FederationOutcome {
    pub history: RoundHistory,
    pub global: Classifier,
    pub clients: Vec<ClientState>,
}

impl FederationOutcome {
    /// Test accuracy of each client's final local model, in client order.
    pub fn local_accuracies(&self) -> Result<Vec<f64>> {
        self.clients
            .iter()
            .map(|c| c.local_model.accuracy(&c.test))
            .collect()
    }
}

/// Runs `cfg.rounds` rounds starting every model from `initial`.
pub fn run_federation(
    cfg: &FedConfig,
    clients: Vec<ClientState>,
    pooled: &Dataset,
    initial: &Classifier,
) -> Result<FederationOutcome> {
    cfg.validate()?;
    if clients.len() != cfg.clients {
        return Err(Error::Config(format!(
            "config expects K = {} clients, got {}",
            cfg.clients,
            clients.len()
        )));
    }
    let mut clients: Vec<ClientState> = clients
        .into_iter()
        .map(|mut c| {
            c.local_model = initial.clone();
            c
        })
        .collect();
    let mut global = initial.clone();
    let weighting = cfg.effective_weighting();
    let mut history = RoundHistory::default();

    for round in 1..=cfg.rounds {
        let global_loss = global.ce_loss(pooled)?;
        let updates: Vec<ClientUpdate> = clients
            .par_iter()
            .map(|c| client_update(c, &global, cfg, round))
            .collect::<Result<_>>()?;

        if cfg.algo != Algorithm::Standalone {
            let mut order: Vec<usize> = (0..updates.len()).collect();
            order.sort_by_key(|&i| updates[i].client);
            let models: Vec<&Classifier> = order
                .iter()
                .map(|&i| {
                    updates[i]
                        .upload
                        .as_ref()
                        .expect("federated algorithms upload")
                })
                .collect();
            let weights: Vec<f64> = order
                .iter()
                .map(|&i| match weighting {
                    AggWeighting::DatasetSize => updates[i].train_size as f64,
                    AggWeighting::CorrectCount => updates[i].selected as f64,
                })
                .collect();
            global = if weights.iter().all(|&w| w == 0.0) {
                // nobody classified anything correctly: keep the current global model
                global
            } else {
                server_aggregate(&models, &weights)?
            };
        }

        let mut records = Vec::with_capacity(clients.len());
        for (client, update) in clients.iter_mut().zip(updates) {
            client.local_model = if cfg.algo == Algorithm::FedAvg {
                global.clone()
            } else {
                update.local_model
            };
            records.push(ClientRecord {
                client: client.id,
                acc_local: client.local_model.accuracy(&client.test)?,
                selected: update.selected,
                train_size: update.train_size,
                empty_selection: update.empty_selection,
            });
        }
        history.rounds.push(RoundRecord {
            round,
            global_loss,
            clients: records,
        });
    }
    history.final_global_loss = global.ce_loss(pooled)?;
    Ok(FederationOutcome {
        history,
        global,
        clients,
    })
}
