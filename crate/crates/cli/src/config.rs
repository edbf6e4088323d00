//! Experiment configuration.
//!
//! Configs are JSON. Every field has a default, so `{}` is the desk-scale
//! imbalanced covariate-shift benchmark. Command-line flags override file
//! values.

use std::path::{Path, PathBuf};

use fedakd_core::fl_engine::{Algorithm, FedConfig};
use fedakd_core::ModelKind;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// Isotropic Gaussian blobs; class `c` is centred at `separation · e_c`.
    Blobs {
        classes: usize,
        dims: usize,
        separation: f64,
        n: usize,
    },
    /// A CSV with columns `f0..f{d-1},label`, partitioned like generated data.
    Csv {
        path: PathBuf,
        classes: Option<usize>,
    },
    /// Per-client train/test CSVs written by `gen-data`; used as is.
    Generated { dir: PathBuf },
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Blobs {
            classes: 2,
            dims: 10,
            separation: 2.0,
            n: 4000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case", deny_unknown_fields)]
pub enum Partition {
    /// Disjoint power-law sized shards of the shuffled data.
    Pow { exponent: f64 },
    /// Covariate shift at Mahalanobis radius `radius`, equal client sizes.
    Bcs { radius: f64 },
    /// Covariate shift with power-law client sizes.
    Ics { radius: f64, exponent: f64 },
    /// Client `k` (1-based) sees only the first `k` classes.
    Cla,
    /// Per-class Dirichlet proportions.
    Dir { alpha: f64 },
}

impl Default for Partition {
    fn default() -> Self {
        Partition::Ics {
            radius: 5.0,
            exponent: 1.0,
        }
    }
}

impl Partition {
    pub fn name(&self) -> &'static str {
        match self {
            Partition::Pow { .. } => "pow",
            Partition::Bcs { .. } => "bcs",
            Partition::Ics { .. } => "ics",
            Partition::Cla => "cla",
            Partition::Dir { .. } => "dir",
        }
    }

    pub fn radius(&self) -> Option<f64> {
        match self {
            Partition::Bcs { radius } | Partition::Ics { radius, .. } => Some(*radius),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Local test splits for pow/bcs/ics, one pooled test set for cla/dir.
    #[default]
    Auto,
    Local,
    Pooled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheoryConfig {
    pub dim: usize,
    /// Samples used to fit the base Gaussian.
    pub base_samples: usize,
    /// `A`, the per-client sample count.
    pub sample_count: usize,
    pub radii: Vec<f64>,
    /// Repetitions per radius.
    pub repeats: usize,
    /// Frobenius norm of the covariance perturbation relative to the base covariance.
    pub sigma_scale: f64,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self {
            dim: 5,
            base_samples: 100_000,
            sample_count: 10_000,
            radii: vec![0.25, 1.0, 4.0],
            repeats: 20,
            sigma_scale: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub algo: Algorithm,
    pub rounds: usize,
    pub write_densities: bool,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            algo: Algorithm::FedAvg,
            rounds: 10,
            write_densities: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub partition: Partition,
    /// Share of the dataset drawn for covariate-shift partitions.
    pub draw_fraction: f64,
    pub test_fraction: f64,
    pub model: ModelKind,
    pub tau: f64,
    /// `fed.seed` is the base seed; run `r` uses `fed.seed + r · seed_stride`.
    pub fed: FedConfig,
    pub algos: Vec<Algorithm>,
    pub eval: EvalMode,
    pub runs: usize,
    pub seed_stride: u64,
    pub out_dir: PathBuf,
    pub theory: TheoryConfig,
    pub analysis: AnalysisConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSource::default(),
            partition: Partition::default(),
            draw_fraction: 0.5,
            test_fraction: 0.2,
            model: ModelKind::Linear,
            tau: 1.0,
            fed: FedConfig {
                clients: 8,
                ..FedConfig::default()
            },
            algos: vec![Algorithm::FedAkd, Algorithm::FedAvg],
            eval: EvalMode::Auto,
            runs: 3,
            seed_stride: 1,
            out_dir: PathBuf::from("out"),
            theory: TheoryConfig::default(),
            analysis: AnalysisConfig::default(),
        }
    }
}

/// Values given on the command line; `None` keeps the file value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub algos: Option<Vec<Algorithm>>,
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Config(m) => config_err(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn apply(mut self, o: &Overrides) -> Result<Self, CliError> {
        if let Some(seed) = o.seed {
            self.fed.seed = seed;
        }
        if let Some(dir) = &o.out_dir {
            self.out_dir = dir.clone();
        }
        if let Some(algos) = &o.algos {
            self.algos = algos.clone();
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.fed.validate().map_err(|e| config_err(e.to_string()))?;
        if self.runs == 0 {
            return Err(config_err("runs must be at least 1"));
        }
        if self.algos.is_empty() {
            return Err(config_err("at least one algorithm is required"));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(config_err("test_fraction must lie in (0, 1)"));
        }
        if !(self.draw_fraction > 0.0 && self.draw_fraction <= 1.0) {
            return Err(config_err("draw_fraction must lie in (0, 1]"));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(config_err("tau must be positive"));
        }
        if let ModelKind::Mlp1 { hidden: 0 } = self.model {
            return Err(config_err("mlp1 needs at least one hidden unit"));
        }
        match &self.partition {
            Partition::Pow { exponent } | Partition::Ics { exponent, .. }
                if !(*exponent >= 0.0) =>
            {
                return Err(config_err("power-law exponent must be nonnegative"));
            }
            Partition::Dir { alpha } if !(*alpha > 0.0) => {
                return Err(config_err("dirichlet alpha must be positive"));
            }
            _ => {}
        }
        if let Some(r) = self.partition.radius() {
            if !(r >= 0.0 && r.is_finite()) {
                return Err(config_err("shift radius must be nonnegative"));
            }
        }
        if let DatasetSource::Blobs {
            classes, dims, n, ..
        } = &self.dataset
        {
            if *classes < 2 || *dims < *classes || *n == 0 {
                return Err(config_err(
                    "blobs need classes >= 2, dims >= classes and n >= 1",
                ));
            }
        }
        let t = &self.theory;
        if t.dim == 0 || t.repeats == 0 || t.radii.is_empty() || t.base_samples <= t.dim {
            return Err(config_err(
                "theory block needs dim >= 1, repeats >= 1, radii and base_samples > dim",
            ));
        }
        if t.radii.iter().any(|r| !(*r >= 0.0)) || !(t.sigma_scale >= 0.0) {
            return Err(config_err(
                "theory radii and sigma_scale must be nonnegative",
            ));
        }
        if self.analysis.rounds == 0 {
            return Err(config_err("analysis rounds must be at least 1"));
        }
        Ok(())
    }

    /// Seed of run `r`.
    pub fn run_seed(&self, run: usize) -> u64 {
        self.fed.seed.wrapping_add(run as u64 * self.seed_stride)
    }

    pub fn pooled_eval(&self) -> bool {
        match self.eval {
            EvalMode::Local => false,
            EvalMode::Pooled => true,
            EvalMode::Auto => matches!(self.partition, Partition::Cla | Partition::Dir { .. }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_the_default_benchmark() {
        let cfg = ExperimentConfig::from_json("{}").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.fed.clients, 8);
        assert_eq!(
            cfg.partition,
            Partition::Ics {
                radius: 5.0,
                exponent: 1.0
            }
        );
    }

    #[test]
    fn round_trip_is_identity() {
        let mut cfg = ExperimentConfig::default();
        cfg.partition = Partition::Dir { alpha: 0.3 };
        cfg.model = ModelKind::Mlp1 { hidden: 16 };
        cfg.dataset = DatasetSource::Csv {
            path: "data.csv".into(),
            classes: Some(3),
        };
        cfg.theory.radii = vec![0.1, 1.0 / 3.0];
        cfg.fed.eta = 0.1 + 0.2;
        let text = cfg.to_json();
        let back = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_json(), text);
    }

    #[test]
    fn rejects_invalid_configs() {
        for bad in [
            r#"{"runs": 0}"#,
            r#"{"partition": {"scheme": "ics", "radius": 1.0}}"#,
            r#"{"partition": {"scheme": "dir", "alpha": 0.0}}"#,
            r#"{"fed": {"agg_weighting": "correct_count"}}"#,
            r#"{"algos": []}"#,
            r#"{"test_fraction": 1.0}"#,
            r#"{"unknown": 1}"#,
            r#"{"algos": ["fedprox"]}"#,
        ] {
            assert!(
                matches!(ExperimentConfig::from_json(bad), Err(CliError::Config(_))),
                "{bad}"
            );
        }
    }

    #[test]
    fn overrides_take_precedence() {
        let cfg = ExperimentConfig::from_json(r#"{"fed": {"seed": 4}, "out_dir": "a"}"#).unwrap();
        let o = Overrides {
            seed: Some(9),
            out_dir: Some("b".into()),
            algos: Some(vec![Algorithm::AkdAllData]),
        };
        let cfg = cfg.apply(&o).unwrap();
        assert_eq!(cfg.fed.seed, 9);
        assert_eq!(cfg.out_dir, PathBuf::from("b"));
        assert_eq!(cfg.algos, vec![Algorithm::AkdAllData]);
        assert_eq!(cfg.run_seed(2), 11);
    }

    #[test]
    fn eval_mode_follows_partition() {
        let mut cfg = ExperimentConfig::default();
        assert!(!cfg.pooled_eval());
        cfg.partition = Partition::Cla;
        assert!(cfg.pooled_eval());
        cfg.eval = EvalMode::Local;
        assert!(!cfg.pooled_eval());
    }
}
