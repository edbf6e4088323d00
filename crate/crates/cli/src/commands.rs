use std::fs;
use std::path::{Path, PathBuf};

use fedakd_core::analysis::{right_wrong_divergence, DivergenceReport};
use fedakd_core::data_gen::GaussianParams;
use fedakd_core::fl_engine::{
    run_federation, AggWeighting, Algorithm, FederationOutcome, RoundHistory,
};
use fedakd_core::metrics::{mean_std, summarize, AccuracyProfile, Summary};
use fedakd_core::nalgebra::{DMatrix, DVector};
use fedakd_core::rng::stream;
use fedakd_core::shift_theory::{
    gaussian_fitting_term, validate_approximation, ValidationOptions, ValidationRow,
};
use fedakd_core::{Dataset, FedConfig};

use crate::config::{DatasetSource, ExperimentConfig};
use crate::data::{self, FederatedData, Manifest};
use crate::error::CliError;

const STREAM_THEORY: u64 = 0x7E0;

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv");
    for r in rows {
        w.write_record(r).expect("in-memory csv");
    }
    w.into_inner().expect("in-memory csv")
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_else(|| "NA".into())
}

/// Writes the per-client train/test CSVs and manifest of run 0 to `<out>/data`.
pub fn cmd_gen_data(cfg: &ExperimentConfig) -> Result<Manifest, CliError> {
    if matches!(cfg.dataset, DatasetSource::Generated { .. }) {
        return Err(CliError::Config(
            "gen-data needs a blobs or csv dataset source".into(),
        ));
    }
    let seed = cfg.run_seed(0);
    let fed = data::build(cfg, seed)?;
    let manifest = Manifest {
        seed,
        partition: cfg.partition.name().into(),
        clients: cfg.fed.clients,
        classes: fed.classes(),
        sizes: fed.sizes.clone(),
        train_sizes: fed.train.iter().map(Dataset::len).collect(),
        test_sizes: fed.test.iter().map(Dataset::len).collect(),
        radius: cfg.partition.radius(),
        shifts: fed.shifts.clone(),
    };
    data::write_generated(&cfg.out_dir.join("data"), &fed, &manifest)?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub algo: Algorithm,
    pub seed: u64,
    pub summary: Summary,
    pub acc_standalone: Vec<f64>,
    pub acc_federated: Vec<f64>,
    pub train_sizes: Vec<usize>,
    pub history: RoundHistory,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlgoSummary {
    pub algo: Algorithm,
    pub runs: usize,
    /// Mean and population std over the runs where CF is defined.
    pub cf: Option<(f64, f64)>,
    pub cf_undefined: usize,
    pub max_acc: (f64, f64),
    pub avg_acc: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub records: Vec<RunRecord>,
    pub summaries: Vec<AlgoSummary>,
    pub summary_csv: PathBuf,
}

impl RunReport {
    pub fn summary(&self, algo: Algorithm) -> Option<&AlgoSummary> {
        self.summaries.iter().find(|s| s.algo == algo)
    }

    pub fn undefined_cf(&self) -> usize {
        self.summaries.iter().map(|s| s.cf_undefined).sum()
    }
}

fn federate(
    cfg: &ExperimentConfig,
    fed: &FederatedData,
    algo: Algorithm,
    rounds: usize,
    seed: u64,
) -> Result<FederationOutcome, CliError> {
    let initial = data::initial_model(cfg, fed.dim(), fed.classes(), seed);
    let clients = fed.clients(&initial, cfg.pooled_eval())?;
    let pooled = fed.pooled_train()?;
    let fc = FedConfig {
        algo,
        rounds,
        seed,
        agg_weighting: AggWeighting::DatasetSize,
        ..cfg.fed.clone()
    };
    Ok(run_federation(&fc, clients, &pooled, &initial)?)
}

/// Standalone training followed by each configured algorithm, for every run seed.
pub fn cmd_run(cfg: &ExperimentConfig) -> Result<RunReport, CliError> {
    let mut records = Vec::new();
    for run in 0..cfg.runs {
        let seed = cfg.run_seed(run);
        let fed = data::build(cfg, seed)?;
        let standalone = federate(cfg, &fed, Algorithm::Standalone, cfg.fed.rounds, seed)?;
        let acc_s = standalone.local_accuracies()?;
        for &algo in &cfg.algos {
            let out = if algo == Algorithm::Standalone {
                standalone.clone()
            } else {
                federate(cfg, &fed, algo, cfg.fed.rounds, seed)?
            };
            let acc_f = out.local_accuracies()?;
            let summary = summarize(&AccuracyProfile::new(acc_s.clone(), acc_f.clone())?)?;
            records.push(RunRecord {
                algo,
                seed,
                summary,
                acc_standalone: acc_s.clone(),
                acc_federated: acc_f,
                train_sizes: fed.train.iter().map(Dataset::len).collect(),
                history: out.history,
            });
        }
    }

    let summaries: Vec<AlgoSummary> = cfg
        .algos
        .iter()
        .map(|&algo| {
            let rs: Vec<&RunRecord> = records.iter().filter(|r| r.algo == algo).collect();
            let cfs: Vec<f64> = rs.iter().filter_map(|r| r.summary.cf).collect();
            let col = |f: fn(&Summary) -> f64| {
                mean_std(&rs.iter().map(|r| f(&r.summary)).collect::<Vec<_>>()).expect("runs >= 1")
            };
            AlgoSummary {
                algo,
                runs: rs.len(),
                cf: mean_std(&cfs),
                cf_undefined: rs.len() - cfs.len(),
                max_acc: col(|s| s.max_acc),
                avg_acc: col(|s| s.avg_acc),
            }
        })
        .collect();

    let out = &cfg.out_dir;
    let runs_rows: Vec<Vec<String>> = records
        .iter()
        .map(|r| {
            vec![
                r.algo.to_string(),
                r.seed.to_string(),
                opt(r.summary.cf),
                num(r.summary.max_acc),
                num(r.summary.avg_acc),
            ]
        })
        .collect();
    write_file(
        &out.join("runs.csv"),
        &csv_bytes(&["algo", "seed", "cf", "max_acc", "avg_acc"], &runs_rows),
    )?;

    let summary_rows: Vec<Vec<String>> = summaries
        .iter()
        .map(|s| {
            vec![
                s.algo.to_string(),
                s.runs.to_string(),
                opt(s.cf.map(|c| c.0)),
                opt(s.cf.map(|c| c.1)),
                s.cf_undefined.to_string(),
                num(s.max_acc.0),
                num(s.max_acc.1),
                num(s.avg_acc.0),
                num(s.avg_acc.1),
            ]
        })
        .collect();
    let summary_csv = out.join("summary.csv");
    let header = [
        "algo",
        "runs",
        "cf_mean",
        "cf_std",
        "cf_undefined",
        "max_acc_mean",
        "max_acc_std",
        "avg_acc_mean",
        "avg_acc_std",
    ];
    write_file(&summary_csv, &csv_bytes(&header, &summary_rows))?;

    let mut client_rows = Vec::new();
    for r in &records {
        for (k, (s, f)) in r.acc_standalone.iter().zip(&r.acc_federated).enumerate() {
            client_rows.push(vec![
                r.algo.to_string(),
                r.seed.to_string(),
                k.to_string(),
                r.train_sizes[k].to_string(),
                num(*s),
                num(*f),
            ]);
        }
    }
    let header = [
        "algo",
        "seed",
        "client",
        "train_size",
        "acc_standalone",
        "acc_federated",
    ];
    write_file(&out.join("clients.csv"), &csv_bytes(&header, &client_rows))?;

    for r in &records {
        let mut buf = Vec::new();
        r.history.write_csv(&mut buf)?;
        write_file(
            &out.join("history")
                .join(format!("{}_seed{}.csv", r.algo, r.seed)),
            &buf,
        )?;
    }

    Ok(RunReport {
        records,
        summaries,
        summary_csv,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoryReport {
    pub rows: Vec<ValidationRow>,
    /// Per radius: `(C, mean real, mean approx, mean random)`.
    pub means: Vec<(f64, f64, f64, f64)>,
    pub fitting_term: f64,
}

/// Refitted-KL validation of the Gaussian shift approximation against a standard normal base.
pub fn cmd_validate_theory(cfg: &ExperimentConfig) -> Result<TheoryReport, CliError> {
    let t = &cfg.theory;
    let seed = cfg.run_seed(0);
    let normal = GaussianParams::new(DVector::zeros(t.dim), DMatrix::identity(t.dim, t.dim))?;
    let base = normal.sample_dataset(t.base_samples, &mut stream(seed, &[STREAM_THEORY, 0]));
    let radii: Vec<f64> = (0..t.repeats)
        .flat_map(|_| t.radii.iter().copied())
        .collect();
    let opts = ValidationOptions {
        sigma_scale: t.sigma_scale,
        ..ValidationOptions::default()
    };
    let rows = validate_approximation(
        &base,
        &radii,
        &[t.sample_count],
        &opts,
        &mut stream(seed, &[STREAM_THEORY, 1]),
    )?;

    let means = t
        .radii
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let sel: Vec<&ValidationRow> = rows.iter().skip(i).step_by(t.radii.len()).collect();
            let avg = |f: fn(&ValidationRow) -> f64| {
                sel.iter().map(|r| f(r)).sum::<f64>() / sel.len() as f64
            };
            (
                c,
                avg(|r| r.real_kl),
                avg(|r| r.approx_kl),
                avg(|r| r.random_kl),
            )
        })
        .collect::<Vec<_>>();
    let fitting_term = gaussian_fitting_term(t.dim, t.sample_count);

    let mut buf = Vec::new();
    fedakd_core::shift_theory::write_validation_csv(&rows, &mut buf)?;
    write_file(&cfg.out_dir.join("theory.csv"), &buf)?;
    let mean_rows: Vec<Vec<String>> = means
        .iter()
        .map(|&(c, r, a, n)| vec![num(c), num(r), num(a), num(n), num(fitting_term)])
        .collect();
    let header = [
        "C",
        "real_kl_mean",
        "approx_kl_mean",
        "random_kl_mean",
        "fitting_term",
    ];
    write_file(
        &cfg.out_dir.join("theory_summary.csv"),
        &csv_bytes(&header, &mean_rows),
    )?;

    Ok(TheoryReport {
        rows,
        means,
        fitting_term,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisRun {
    pub seed: u64,
    pub report: DivergenceReport,
}

/// Right/wrong divergence of every run after `analysis.rounds` rounds of `analysis.algo`.
pub fn cmd_analyze(cfg: &ExperimentConfig) -> Result<Vec<AnalysisRun>, CliError> {
    let mut runs = Vec::with_capacity(cfg.runs);
    for run in 0..cfg.runs {
        let seed = cfg.run_seed(run);
        let fed = data::build(cfg, seed)?;
        let out = federate(cfg, &fed, cfg.analysis.algo, cfg.analysis.rounds, seed)?;
        let inputs: Vec<_> = out
            .clients
            .iter()
            .map(|c| (c.id, &c.train, &c.local_model))
            .collect();
        let report = right_wrong_divergence(&inputs)?;
        runs.push(AnalysisRun { seed, report });
    }

    let dir = cfg.out_dir.join("analysis");
    for r in &runs {
        let mut buf = Vec::new();
        r.report.write_csv(&mut buf)?;
        write_file(&dir.join(format!("divergence_seed{}.csv", r.seed)), &buf)?;
        if cfg.analysis.write_densities {
            let mut buf = Vec::new();
            r.report.write_densities_csv(&mut buf)?;
            write_file(&dir.join(format!("densities_seed{}.csv", r.seed)), &buf)?;
        }
    }
    let rows: Vec<Vec<String>> = runs
        .iter()
        .map(|r| {
            let usable = r.report.clients.iter().filter(|c| !c.skipped).count();
            vec![
                r.seed.to_string(),
                num(r.report.mean_kl_right()),
                num(r.report.mean_kl_wrong()),
                usable.to_string(),
            ]
        })
        .collect();
    write_file(
        &dir.join("summary.csv"),
        &csv_bytes(
            &["seed", "mean_kl_right", "mean_kl_wrong", "usable_clients"],
            &rows,
        ),
    )?;
    Ok(runs)
}
